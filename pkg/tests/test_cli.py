import sys

import pytest
from typer.testing import CliRunner

from lib import cli, config
from lib.cli import app

from .conftest import make_tiny_config

runner = CliRunner()


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.toml"
    config.write_config(make_tiny_config(), path)
    return path


def invoke(*args):
    return runner.invoke(app, [str(a) for a in args])


def test_gen_data_writes_corpora(tmp_path, tiny_config_file):
    out = tmp_path / "run"
    result = invoke("gen-data", "--config", tiny_config_file, "--out", out)
    assert result.exit_code == 0, result.output
    for split in config.SPLITS:
        assert (out / f"{split}.corpus").exists()
    assert config.read_config(out / "config.toml") == make_tiny_config()


def test_seed_option_sets_both_seeds(tmp_path, tiny_config_file):
    out = tmp_path / "run"
    result = invoke("gen-data", "-c", tiny_config_file, "-o", out, "--seed", 5)
    assert result.exit_code == 0, result.output
    saved = config.read_config(out / "config.toml")
    assert saved.seed == 5
    assert saved.data.seed == 5


def test_invalid_value_exits_1(tmp_path, tiny_config_file):
    result = invoke("gen-data", "-c", tiny_config_file, "-o", tmp_path / "run", "--set", "data.vocab_size=0")
    assert result.exit_code == 1
    assert "data.vocab_size" in result.output


def test_unknown_key_exits_1(tmp_path, tiny_config_file):
    result = invoke("gen-data", "-c", tiny_config_file, "-o", tmp_path / "run", "--set", "encoder.bogus=1")
    assert result.exit_code == 1
    assert "encoder.bogus" in result.output


def test_missing_config_file_exits_1(tmp_path):
    result = invoke("gen-data", "-c", tmp_path / "absent.toml", "-o", tmp_path / "run")
    assert result.exit_code == 1


def test_train_then_eval(tmp_path, tiny_config_file):
    out = tmp_path / "run"
    assert invoke("gen-data", "-c", tiny_config_file, "-o", out).exit_code == 0
    result = invoke("train", "-c", tiny_config_file, "-o", out)
    assert result.exit_code == 0, result.output
    assert (out / "model.ckpt").exists()
    assert (out / "metrics.csv").exists()

    result = invoke("eval", "-o", out)
    assert result.exit_code == 0, result.output
    report = (out / "report_test.csv").read_text().splitlines()
    assert report[0] == "utt_id,ref_len,subs,dels,inss,wer"
    assert report[-1].startswith("__corpus__,")
    assert len((out / "hyp_test.txt").read_text().splitlines()) == make_tiny_config().data.test_size

    result = invoke("eval", "-o", out, "--split", "dev")
    assert result.exit_code == 0, result.output
    assert (out / "report_dev.csv").exists()


def test_training_runs_are_byte_identical(tmp_path, tiny_config_file):
    for name in ("a", "b"):
        result = invoke("train", "-c", tiny_config_file, "-o", tmp_path / name, "--set", "augmentation.operator=token_delete")
        assert result.exit_code == 0, result.output
    assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()
    assert (tmp_path / "a" / "metrics.csv").read_text() == (tmp_path / "b" / "metrics.csv").read_text()


def test_eval_without_checkpoint_exits_1(tmp_path):
    result = invoke("eval", "-o", tmp_path / "empty")
    assert result.exit_code == 1
    assert "train" in result.output


def test_eval_unknown_split_exits_1(tmp_path):
    assert invoke("eval", "-o", tmp_path, "--split", "holdout").exit_code == 1


def test_augment_demo(tmp_path, tiny_config_file):
    out = tmp_path / "run"
    result = invoke(
        "augment-demo", "train-00001", "-c", tiny_config_file, "-o", out,
        "--set", "augmentation.operator=token_delete", "--set", "augmentation.p_del=0.5",
    )
    assert result.exit_code == 0, result.output


def test_augment_demo_unknown_utterance(tmp_path, tiny_config_file):
    result = invoke("augment-demo", "nope-1", "-c", tiny_config_file, "-o", tmp_path / "run")
    assert result.exit_code == 1
    assert "nope-1" in result.output


def test_matrix_rejects_unknown_preset(tmp_path, tiny_config_file):
    result = invoke("matrix", "-c", tiny_config_file, "-o", tmp_path / "run", "--preset", "table9")
    assert result.exit_code == 1


def test_matrix_rejects_bad_seeds(tmp_path, tiny_config_file):
    result = invoke("matrix", "-c", tiny_config_file, "-o", tmp_path / "run", "--seeds", "1,x")
    assert result.exit_code == 1


@pytest.mark.slow
def test_matrix_position_preset(tmp_path, tiny_config_file):
    out = tmp_path / "run"
    result = invoke("matrix", "-c", tiny_config_file, "-o", out, "--preset", "position")
    assert result.exit_code == 0, result.output
    assert len((out / "matrix.csv").read_text().splitlines()) == 4


@pytest.mark.slow
def test_oracle_check_passes(tmp_path):
    result = invoke("oracle-check", "--report", tmp_path / "failures.json")
    assert result.exit_code == 0, result.output
    assert not (tmp_path / "failures.json").exists()


def test_unknown_option_exits_1(monkeypatch):
    monkeypatch.setattr(sys, "argv", ["ctcaug", "--bogus"])
    with pytest.raises(SystemExit) as e:
        cli.main()
    assert e.value.code == 1


def test_command_failure_exit_code_survives_main(monkeypatch, tmp_path):
    monkeypatch.setattr(sys, "argv", ["ctcaug", "eval", "-o", str(tmp_path / "empty")])
    with pytest.raises(SystemExit) as e:
        cli.main()
    assert e.value.code == 1
