import pytest

from lib import config
from lib.config import AugmentationSpec, ConfigError, TrainConfig

from .conftest import make_tiny_config


def test_defaults_validate():
    cfg = TrainConfig()
    cfg.validate()
    assert cfg.encoder.vocab_size_ext == cfg.data.vocab_size + 1
    assert cfg.augmentation.is_identity


def test_write_read_round_trip(tmp_path):
    cfg = make_tiny_config("token_delete,time_mask")
    cfg.encoder.intermediate_layers = ()
    cfg.encoder.mix_weight = 0.0
    cfg.data.train_path = 'odd "name".corpus'
    path = tmp_path / "config.toml"
    config.write_config(cfg, path)
    assert config.read_config(path) == cfg


def test_file_sections(tmp_path):
    path = tmp_path / "config.toml"
    config.write_config(TrainConfig(), path)
    text = path.read_text()
    for section in ("[encoder]", "[augmentation]", "[training]", "[data]"):
        assert section in text
    assert "num_utterances" not in text


def test_missing_keys_keep_defaults(tmp_path):
    path = tmp_path / "config.toml"
    path.write_text("[training]\nepochs = 3\n\n[augmentation]\noperator = \"time_mask\"\n")
    cfg = config.read_config(path)
    assert cfg.epochs == 3
    assert cfg.augmentation.operator == "time_mask"
    assert cfg.batch_size == TrainConfig().batch_size


def test_overrides():
    cfg = config.apply_overrides(
        TrainConfig(),
        [
            "augmentation.p_del=0.2",
            "encoder.intermediate_layers=1,3",
            "encoder.self_condition=false",
            "training.seed=5",
        ],
    )
    assert cfg.augmentation.p_del == 0.2
    assert cfg.encoder.intermediate_layers == (1, 3)
    assert cfg.encoder.self_condition is False
    assert cfg.seed == 5


def test_overrides_leave_base_untouched():
    base = TrainConfig()
    config.apply_overrides(base, ["encoder.num_layers=2"])
    assert base.encoder.num_layers == 6


@pytest.mark.parametrize(
    "override, field",
    [
        ("encoder.bogus=1", "encoder.bogus"),
        ("model.num_layers=2", "model"),
        ("training.epochs=many", "training.epochs"),
        ("epochs=3", "epochs=3"),
    ],
)
def test_bad_overrides_name_the_field(override, field):
    with pytest.raises(ConfigError, match=field):
        config.apply_overrides(TrainConfig(), [override])


@pytest.mark.parametrize(
    "overrides, field",
    [
        (["data.vocab_size=0"], "data.vocab_size"),
        (["encoder.mix_weight=1.0"], "encoder.mix_weight"),
        (["augmentation.p_del=1.5"], "augmentation.p_del"),
        (["encoder.intermediate_layers=6"], "encoder.intermediate_layers"),
        (["data.vocab_size=5"], "encoder.vocab_size_ext"),
        (["data.feature_dim=3"], "encoder.input_dim"),
        (["augmentation.w_feat=64"], "augmentation.w_feat"),
        (["augmentation.operator=token_delete", "augmentation.position=encoder_feature"], "augmentation.position"),
        (["training.warmup_steps=0"], "training.warmup_steps"),
    ],
)
def test_validation_names_the_field(overrides, field):
    with pytest.raises(ConfigError, match=field):
        config.load_config(None, overrides)


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        config.read_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[training\n")
    with pytest.raises(ConfigError, match="malformed"):
        config.read_config(bad)


def test_split_specs():
    data = make_tiny_config().data
    spec = data.synth_spec("dev")
    assert spec.split == "dev"
    assert spec.num_utterances == data.dev_size
    assert spec.seed == data.seed


def test_corpus_path(tmp_path):
    data = make_tiny_config().data
    assert data.corpus_path("train", tmp_path) == tmp_path / "train.corpus"
    data.test_path = "/elsewhere/test.corpus"
    assert str(data.corpus_path("test", tmp_path)) == "/elsewhere/test.corpus"


def test_operator_lists():
    aug = AugmentationSpec(operator=" time_mask , feature_mask ")
    assert aug.operators == ("time_mask", "feature_mask")
    assert aug.token_operator is None


def test_list_runs(tmp_path, monkeypatch):
    monkeypatch.setattr(config, "get_runs_dir", lambda: tmp_path)
    assert config.list_runs() == []
    for name in ("b", "a"):
        config.write_config(TrainConfig(), tmp_path / name / "config.toml")
    (tmp_path / "scratch").mkdir()
    assert config.list_runs() == ["a", "b"]
