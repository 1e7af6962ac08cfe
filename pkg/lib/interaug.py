"""Corruption of intermediate predictions before they condition later layers.

Feature-space operators mask a block of frames or channels of the
conditioning features C (or, for the position ablation, of the encoder
features X). Token-space operators turn the posterior grid Z into a corrupted
hard path, which is one-hot encoded and projected through the shared
conditioning projection.

Only ``SelfCondEncoder.forward`` with an explicit augmentation spec reaches
this module; the inference path never does.
"""

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Tuple

import numpy as np

from . import diffgraph as dg
from .config import AugmentationSpec, ConfigError
from .ctc import BLANK, PosteriorGrid, VocabularyError
from .diffgraph import NumericError, Tensor
from .rng import SeededRng

if TYPE_CHECKING:
    from .encoder import SharedHeads

# (start, width) of one masked block
Block = Tuple[int, int]


@dataclass
class AugmentResult:
    """Features to sum for the next layer, plus what was done to them."""

    x_out: Tensor
    c_aug: Tensor
    path: Optional[np.ndarray] = None
    time_spans: List[Block] = field(default_factory=list)
    feature_spans: List[Block] = field(default_factory=list)


def _grid_values(z) -> np.ndarray:
    return z.values if isinstance(z, (PosteriorGrid, Tensor)) else np.asarray(z, dtype=np.float64)


def _draw_blocks(length: int, max_width: int, p: float, count: int, rng: SeededRng) -> List[Block]:
    """With probability ``p``, draw ``count`` blocks: width ~ U{0..W}, start ~ U{0..length-width}."""
    if not rng.bernoulli(p, 1)[0]:
        return []
    blocks = []
    for _ in range(count):
        width = rng.integer(0, max_width)
        start = rng.integer(0, length - width)
        blocks.append((start, width))
    return blocks


def mask_time_block(c: Tensor, start: int, width: int) -> Tensor:
    """Zero rows start..start+width-1; never mutates ``c``."""
    keep = np.ones(c.shape)
    keep[start:start + width, :] = 0.0
    return dg.mul(c, dg.constant(keep))


def mask_feature_block(c: Tensor, start: int, width: int) -> Tensor:
    """Zero columns start..start+width-1; never mutates ``c``."""
    keep = np.ones(c.shape)
    keep[:, start:start + width] = 0.0
    return dg.mul(c, dg.constant(keep))


def _time_mask(c: Tensor, w_time: int, p_time: float, rng: SeededRng, num_masks: int) -> Tuple[Tensor, List[Block]]:
    frames = c.shape[0]
    if w_time > frames:
        raise ConfigError(f"time mask width {w_time} exceeds T = {frames}")
    blocks = _draw_blocks(frames, w_time, p_time, num_masks, rng)
    for start, width in blocks:
        c = mask_time_block(c, start, width)
    return c, blocks


def _feature_mask(c: Tensor, w_feat: int, p_feat: float, rng: SeededRng, num_masks: int) -> Tuple[Tensor, List[Block]]:
    dim = c.shape[1]
    if w_feat > dim:
        raise ConfigError(f"feature mask width {w_feat} exceeds D = {dim}")
    blocks = _draw_blocks(dim, w_feat, p_feat, num_masks, rng)
    for start, width in blocks:
        c = mask_feature_block(c, start, width)
    return c, blocks


def time_mask(c: Tensor, w_time: int, p_time: float, rng: SeededRng, num_masks: int = 1) -> Tensor:
    """Zero one block of up to ``w_time`` consecutive frames, with probability ``p_time``."""
    return _time_mask(c, w_time, p_time, rng, num_masks)[0]


def feature_mask(c: Tensor, w_feat: int, p_feat: float, rng: SeededRng, num_masks: int = 1) -> Tensor:
    """Zero one block of up to ``w_feat`` consecutive channels, with probability ``p_feat``."""
    return _feature_mask(c, w_feat, p_feat, rng, num_masks)[0]


def token_delete(z, p_del: float, rng: SeededRng, orientation: str = "corrupt") -> np.ndarray:
    """Argmax path with frames replaced by blank at rate ``p_del``.

    ``orientation="keep"`` reads the Bernoulli the other way round: a frame
    keeps its argmax with probability ``p_del`` and is blanked otherwise.
    """
    values = _grid_values(z)
    path = np.argmax(values, axis=1)
    draws = rng.bernoulli(p_del, values.shape[0])
    corrupt = draws if orientation == "corrupt" else ~draws
    path[corrupt] = BLANK
    return path


def token_insert(z, p_ins: float, rng: SeededRng) -> np.ndarray:
    """Argmax path where, at rate ``p_ins``, the blank is excluded from the argmax.

    Drawn at every frame; only frames whose argmax was blank can change.
    """
    values = _grid_values(z)
    masked = values.copy()
    draws = rng.bernoulli(p_ins, values.shape[0])
    masked[draws, BLANK] = -np.inf
    return np.argmax(masked, axis=1)


def token_substitute(z, rng: SeededRng, tol: float = 1e-9) -> np.ndarray:
    """One label per frame sampled from that frame's posterior row."""
    values = _grid_values(z)
    if np.any(values < -tol) or not np.all(np.isfinite(values)):
        raise NumericError("token_substitute: posterior has negative or non-finite entries")
    worst = float(np.max(np.abs(values.sum(axis=1) - 1.0))) if values.shape[0] else 0.0
    if worst > tol:
        raise NumericError(f"token_substitute: rows deviate from the simplex by {worst:.3g}")
    return rng.categorical(np.clip(values, 0.0, None))


def one_hot(path: np.ndarray, size_ext: int) -> np.ndarray:
    path = np.asarray(path, dtype=np.int64)
    if path.size and (path.min() < 0 or path.max() >= size_ext):
        raise VocabularyError(f"path label outside V' of size {size_ext}")
    out = np.zeros((len(path), size_ext))
    out[np.arange(len(path)), path] = 1.0
    return out


def project_tokens(path: np.ndarray, heads: "SharedHeads") -> Tensor:
    """One-hot encode a hard path and apply the shared conditioning projection."""
    size_ext = heads.cond_projection.weight.shape[0]
    return heads.cond_projection(dg.constant(one_hot(path, size_ext)))


TOKEN_FNS: Dict[str, Callable[[AugmentationSpec, np.ndarray, SeededRng], np.ndarray]] = {
    "token_delete": lambda aug, z, rng: token_delete(z, aug.p_del, rng, aug.deletion_orientation),
    "token_insert": lambda aug, z, rng: token_insert(z, aug.p_ins, rng),
    "token_substitute": lambda aug, z, rng: token_substitute(z, rng),
}


def apply(aug: AugmentationSpec, x: Tensor, z: PosteriorGrid, heads: "SharedHeads", rng: SeededRng) -> AugmentResult:
    """Produce (x_out, c_aug) for one conditioning layer; the caller adds them.

    Position ``conditioning_feature`` corrupts C and leaves x untouched;
    position ``encoder_feature`` masks x and leaves C at its plain projection.
    """
    if aug.position == "encoder_feature" and aug.token_operator:
        raise ConfigError("token-space operators cannot be applied to the encoder feature")

    path = None
    if aug.token_operator:
        path = TOKEN_FNS[aug.token_operator](aug, z.values, rng.derive(aug.token_operator))
        c = project_tokens(path, heads)
    else:
        c = heads.cond_projection(z.probs)

    on_encoder = aug.position == "encoder_feature"
    target = x if on_encoder else c
    time_spans: List[Block] = []
    feature_spans: List[Block] = []
    for i, op in enumerate(aug.feature_operators):
        op_rng = rng.derive(f"{i}:{op}")
        if op == "time_mask":
            width = aug.resolve_time_width(target.shape[0])
            target, blocks = _time_mask(target, width, aug.p_time, op_rng, aug.num_masks)
            time_spans += blocks
        else:
            target, blocks = _feature_mask(target, aug.w_feat, aug.p_feat, op_rng, aug.num_masks)
            feature_spans += blocks

    if on_encoder:
        return AugmentResult(target, c, path, time_spans, feature_spans)
    return AugmentResult(x, target, path, time_spans, feature_spans)
