import numpy as np
import pytest

from lib import interaug
from lib.config import AugmentationSpec, ConfigError
from lib.ctc import BLANK
from lib.diffgraph import NumericError, Tensor
from lib.encoder import SelfCondEncoder
from lib.rng import SeededRng

# chi-square critical value, 5 degrees of freedom, alpha = 0.01
CHI2_DF5 = 15.086


def non_blank_grid(frames: int, size_ext: int = 4) -> np.ndarray:
    z = np.full((frames, size_ext), 0.1 / (size_ext - 1))
    z[:, 0] = 0.0
    z[np.arange(frames), 1 + np.arange(frames) % (size_ext - 1)] = 0.9
    z /= z.sum(axis=1, keepdims=True)
    return z


@pytest.fixture
def heads(tiny_cfg):
    return SelfCondEncoder(tiny_cfg.encoder, seed=2).heads


def test_zero_rate_is_identity(random_grid, rng):
    z = random_grid(12, 4)
    argmax = np.argmax(z, axis=1)
    assert np.array_equal(interaug.token_delete(z, 0.0, rng), argmax)
    assert np.array_equal(interaug.token_insert(z, 0.0, rng), argmax)
    c = Tensor(rng.normal(1.0, (12, 8)))
    assert np.array_equal(interaug.time_mask(c, 3, 0.0, rng).values, c.values)
    assert np.array_equal(interaug.feature_mask(c, 3, 0.0, rng).values, c.values)


def test_token_delete_rate():
    z = non_blank_grid(10_000)
    path = interaug.token_delete(z, 0.1, SeededRng(7, "delete"))
    assert abs(np.mean(path == BLANK) - 0.1) <= 0.01


def test_token_delete_only_blanks():
    z = non_blank_grid(200)
    argmax = np.argmax(z, axis=1)
    path = interaug.token_delete(z, 0.5, SeededRng(1))
    changed = path != argmax
    assert np.all(path[changed] == BLANK)


def test_token_delete_keep_orientation():
    z = non_blank_grid(10_000)
    path = interaug.token_delete(z, 0.9, SeededRng(7, "delete"), orientation="keep")
    assert abs(np.mean(path == BLANK) - 0.1) <= 0.01


def test_token_insert_keeps_non_blank_frames(random_grid):
    z = random_grid(300, 5)
    argmax = np.argmax(z, axis=1)
    path = interaug.token_insert(z, 0.5, SeededRng(3))
    non_blank = argmax != BLANK
    assert np.array_equal(path[non_blank], argmax[non_blank])


def test_token_insert_full_rate_has_no_blanks(random_grid):
    path = interaug.token_insert(random_grid(50, 4), 1.0, SeededRng(3))
    assert BLANK not in path


def test_token_insert_picks_best_non_blank():
    z = np.array([[0.7, 0.1, 0.2], [0.6, 0.3, 0.1]])
    assert interaug.token_insert(z, 1.0, SeededRng(0)).tolist() == [2, 1]


def test_token_substitute_matches_posterior():
    row = np.array([0.1, 0.2, 0.3, 0.4])
    z = np.tile(row, (10_000, 1))
    path = interaug.token_substitute(z, SeededRng(5, "substitute"))
    freq = np.bincount(path, minlength=4) / len(path)
    assert 0.5 * np.abs(freq - row).sum() < 0.02


def test_token_substitute_rejects_non_simplex(rng):
    with pytest.raises(NumericError):
        interaug.token_substitute(np.array([[0.5, 0.6]]), rng)
    with pytest.raises(NumericError):
        interaug.token_substitute(np.array([[1.2, -0.2]]), rng)


def test_time_mask_is_one_block(rng):
    c = Tensor(np.ones((20, 6)))
    for _ in range(50):
        out = interaug.time_mask(c, 6, 1.0, rng).values
        zero_rows = np.flatnonzero(np.all(out == 0.0, axis=1))
        assert len(zero_rows) <= 6
        if len(zero_rows):
            assert zero_rows[-1] - zero_rows[0] + 1 == len(zero_rows)
        assert np.all((out == 0.0) | (out == 1.0))
    assert np.all(c.values == 1.0)


def test_feature_mask_is_one_block(rng):
    c = Tensor(np.ones((5, 12)))
    for _ in range(50):
        out = interaug.feature_mask(c, 4, 1.0, rng).values
        zero_cols = np.flatnonzero(np.all(out == 0.0, axis=0))
        assert len(zero_cols) <= 4
        if len(zero_cols):
            assert zero_cols[-1] - zero_cols[0] + 1 == len(zero_cols)


@pytest.mark.parametrize("zeroed_lines", ["time", "feature"])
def test_masked_width_is_uniform(zeroed_lines):
    rng = SeededRng(21, f"widths-{zeroed_lines}")
    c = Tensor(np.ones((30, 12)))
    widths = []
    for _ in range(10_000):
        if zeroed_lines == "time":
            out = interaug.time_mask(c, 5, 1.0, rng).values
            widths.append(int(np.all(out == 0.0, axis=1).sum()))
        else:
            out = interaug.feature_mask(c, 5, 1.0, rng).values
            widths.append(int(np.all(out == 0.0, axis=0).sum()))
    counts = np.bincount(widths, minlength=6)
    expected = len(widths) / 6
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    assert len(counts) == 6
    assert chi2 < CHI2_DF5


def test_mask_block_stays_inside():
    rng = SeededRng(4)
    for _ in range(500):
        (start, width), = interaug._draw_blocks(10, 10, 1.0, 1, rng)
        assert 0 <= start and start + width <= 10


def test_several_masks():
    blocks = interaug._draw_blocks(40, 3, 1.0, 3, SeededRng(0))
    assert len(blocks) == 3


def test_mask_wider_than_input(rng):
    c = Tensor(np.ones((4, 6)))
    with pytest.raises(ConfigError):
        interaug.time_mask(c, 5, 1.0, rng)
    with pytest.raises(ConfigError):
        interaug.feature_mask(c, 7, 1.0, rng)


def test_one_hot_rejects_out_of_range():
    from lib.ctc import VocabularyError

    with pytest.raises(VocabularyError):
        interaug.one_hot(np.array([0, 4]), 4)


def test_apply_conditioning_feature(heads, rng):
    x = Tensor(rng.normal(1.0, (9, 8)))
    z = _grid(heads, x)
    aug = AugmentationSpec(operator="time_mask", w_time_ratio=0.5)
    result = interaug.apply(aug, x, z, heads, rng)
    assert result.x_out is x
    plain = heads.cond_projection(z.probs).values
    masked_rows = {t for start, width in result.time_spans for t in range(start, start + width)}
    for t in range(9):
        expected = 0.0 if t in masked_rows else plain[t]
        assert np.allclose(result.c_aug.values[t], expected)


def test_apply_encoder_feature(heads, rng):
    x = Tensor(rng.normal(1.0, (9, 8)))
    z = _grid(heads, x)
    aug = AugmentationSpec(operator="time_mask", w_time_ratio=0.5, position="encoder_feature")
    result = interaug.apply(aug, x, z, heads, rng)
    assert np.array_equal(result.c_aug.values, heads.cond_projection(z.probs).values)
    masked_rows = {t for start, width in result.time_spans for t in range(start, start + width)}
    for t in range(9):
        expected = 0.0 if t in masked_rows else x.values[t]
        assert np.allclose(result.x_out.values[t], expected)


def test_apply_token_operator_projects_one_hot(heads, rng):
    x = Tensor(rng.normal(1.0, (9, 8)))
    z = _grid(heads, x)
    result = interaug.apply(AugmentationSpec(operator="token_delete", p_del=1.0), x, z, heads, rng)
    assert result.path.tolist() == [BLANK] * 9
    blank_row = heads.cond_projection.weight.values[BLANK] + heads.cond_projection.bias.values
    assert np.allclose(result.c_aug.values, np.tile(blank_row, (9, 1)))


def test_token_operator_on_encoder_feature(heads, rng):
    x = Tensor(rng.normal(1.0, (9, 8)))
    aug = AugmentationSpec(operator="token_insert")
    aug.position = "encoder_feature"
    with pytest.raises(ConfigError):
        interaug.apply(aug, x, _grid(heads, x), heads, rng)


def test_shared_draws_mask_the_same_frames(tiny_cfg, utterance):
    tiny_cfg.encoder.intermediate_layers = (1, 2)
    model = SelfCondEncoder(tiny_cfg.encoder, seed=2)
    aug = AugmentationSpec(operator="time_mask", w_time_ratio=0.5, share_draws_across_layers=True)
    traces = model.forward(utterance.features, aug, SeededRng(8)).traces
    assert traces[0].time_spans == traces[1].time_spans


def test_same_rng_same_corruption(tiny_cfg, utterance):
    model = SelfCondEncoder(tiny_cfg.encoder, seed=2)
    aug = AugmentationSpec(operator="token_substitute")
    a = model.forward(utterance.features, aug, SeededRng(8)).final.values
    b = model.forward(utterance.features, aug, SeededRng(8)).final.values
    assert np.array_equal(a, b)


@pytest.mark.parametrize(
    "operator",
    [
        "time_mask,token_delete",
        "token_delete,token_insert",
        "none,time_mask",
        "time_warp",
        "",
    ],
)
def test_invalid_compositions(operator):
    with pytest.raises(ConfigError):
        AugmentationSpec(operator=operator).validate()


def test_valid_composition():
    aug = AugmentationSpec(operator="token_substitute,time_mask,feature_mask")
    aug.validate()
    assert aug.token_operator == "token_substitute"
    assert aug.feature_operators == ("time_mask", "feature_mask")
    assert not aug.is_identity


def test_time_width_from_ratio():
    aug = AugmentationSpec(w_time_ratio=0.1)
    assert aug.resolve_time_width(100) == 10
    assert aug.resolve_time_width(5) == 0
    fixed = AugmentationSpec(w_time_ratio=0.0, w_time=3)
    assert fixed.resolve_time_width(10) == 3
    with pytest.raises(ConfigError):
        fixed.resolve_time_width(2)


def _grid(heads, x):
    from lib import diffgraph as dg
    from lib.ctc import PosteriorGrid

    return PosteriorGrid(dg.softmax_rows(heads.out_projection(x)))
