"""CTC alignment machinery: collapsing, forward-backward loss, greedy decode.

Indices live in the extended vocabulary V' = {blank} + V with the blank at
index 0 and tokens at 1..|V|. A token sequence never contains 0.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .diffgraph import NumericError, ShapeError, Tensor, is_recording, record_op

log = logging.getLogger(__name__)

BLANK = 0

# Brute-force guard: |V'|^T paths
MAX_ENUMERATED_PATHS = 10**7

TokenSequence = Tuple[int, ...]


class VocabularyError(ValueError):
    """Label outside the extended vocabulary."""
    pass


class OracleGuardError(ValueError):
    """Instance too large to enumerate."""
    pass


@dataclass(frozen=True)
class Vocabulary:
    """Non-blank token identifiers, mapped to indices 1..|V| of V'."""

    tokens: Tuple[str, ...]
    blank_index: int = BLANK

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise VocabularyError("token identifiers must be unique")

    @classmethod
    def of_size(cls, size: int) -> "Vocabulary":
        return cls(tuple(str(i) for i in range(1, size + 1)))

    @property
    def size_ext(self) -> int:
        return len(self.tokens) + 1

    def index(self, token: str) -> int:
        try:
            return self.tokens.index(token) + 1
        except ValueError:
            raise VocabularyError(f"unknown token {token!r}")

    def token(self, index: int) -> str:
        if not 1 <= index <= len(self.tokens):
            raise VocabularyError(f"index {index} is not a token of V")
        return self.tokens[index - 1]


@dataclass
class PosteriorGrid:
    """Per-frame distribution over V' (T x |V'|), kept on the graph."""

    probs: Tensor

    @property
    def frames(self) -> int:
        return self.probs.shape[0]

    @property
    def size_ext(self) -> int:
        return self.probs.shape[1]

    @property
    def values(self) -> np.ndarray:
        return self.probs.values

    def validate(self, tol: float = 1e-9) -> None:
        z = self.probs.values
        if z.ndim != 2:
            raise ShapeError(f"posterior grid must be 2-D, got shape {z.shape}")
        if not np.all(np.isfinite(z)) or np.any(z < 0):
            raise NumericError("posterior grid has negative or non-finite entries")
        worst = float(np.max(np.abs(z.sum(axis=1) - 1.0))) if z.shape[0] else 0.0
        if worst > tol:
            raise NumericError(f"posterior rows deviate from the simplex by {worst:.3g}")

    @classmethod
    def from_array(cls, values) -> "PosteriorGrid":
        return cls(Tensor(values))


@dataclass
class CtcResult:
    """Loss of one (grid, target) pair; falsy when the target is infeasible."""

    loss: Tensor
    feasible: bool = True

    def __bool__(self) -> bool:
        return self.feasible

    @property
    def value(self) -> float:
        return self.loss.item()


def _as_values(z) -> np.ndarray:
    if isinstance(z, PosteriorGrid):
        return z.values
    if isinstance(z, Tensor):
        return z.values
    return np.asarray(z, dtype=np.float64)


def collapse(path: Sequence[int], size_ext: Optional[int] = None) -> TokenSequence:
    """Merge adjacent repeats, then drop blanks."""
    labels = [int(k) for k in path]
    if size_ext is not None:
        for k in labels:
            if not 0 <= k < size_ext:
                raise VocabularyError(f"label {k} outside V' of size {size_ext}")
    out = []
    prev = None
    for k in labels:
        if k != prev and k != BLANK:
            out.append(k)
        prev = k
    return tuple(out)


def min_frames(y: Sequence[int]) -> int:
    """Shortest T admitting an alignment: one frame per token plus a blank between repeats."""
    repeats = sum(1 for a, b in zip(y, y[1:]) if a == b)
    return len(y) + repeats


def is_feasible(frames: int, y: Sequence[int]) -> bool:
    return frames >= min_frames(y)


def _extended_labels(y: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """Blank-interleaved lattice labels and the skip-transition mask."""
    ext = np.zeros(2 * len(y) + 1, dtype=np.int64)
    ext[1::2] = y
    skip = np.zeros(len(ext), dtype=bool)
    for s in range(3, len(ext), 2):
        skip[s] = ext[s] != ext[s - 2]
    return ext, skip


def _check_target(y: Sequence[int], size_ext: int) -> None:
    for k in y:
        if k == BLANK:
            raise VocabularyError("target sequence contains the blank index")
        if not 0 < k < size_ext:
            raise VocabularyError(f"target label {k} outside V' of size {size_ext}")


def _forward(log_emit: np.ndarray, skip: np.ndarray) -> np.ndarray:
    frames, states = log_emit.shape
    alpha = np.full((frames, states), -np.inf)
    alpha[0, 0] = log_emit[0, 0]
    if states > 1:
        alpha[0, 1] = log_emit[0, 1]
    for t in range(1, frames):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        hop = np.full(states, -np.inf)
        hop[2:] = np.where(skip[2:], prev[:-2], -np.inf)
        alpha[t] = np.logaddexp(acc, hop) + log_emit[t]
    return alpha


def _backward(log_emit: np.ndarray, skip: np.ndarray) -> np.ndarray:
    """beta[t, s]: log-probability of the remaining frames t+1.. given state s at t."""
    frames, states = log_emit.shape
    beta = np.full((frames, states), -np.inf)
    beta[-1, -1] = 0.0
    if states > 1:
        beta[-1, -2] = 0.0
    for t in range(frames - 2, -1, -1):
        nxt = beta[t + 1] + log_emit[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        hop = np.full(states, -np.inf)
        hop[:-2] = np.where(skip[2:], nxt[2:], -np.inf)
        beta[t] = np.logaddexp(acc, hop)
    return beta


def _grid_gradient(z: np.ndarray, ext: np.ndarray, alpha: np.ndarray, beta: np.ndarray, log_p: float) -> np.ndarray:
    """d(-log p) / dz from the alpha-beta state posteriors."""
    grad = np.zeros_like(z)
    occupancy = alpha + beta - log_p
    for k in np.unique(ext):
        mass = np.exp(np.logaddexp.reduce(occupancy[:, ext == k], axis=1))
        # zero posteriors carry no lattice mass; their gradient stays 0
        grad[:, k] = np.divide(-mass, z[:, k], out=np.zeros_like(mass), where=mass > 0)
    return grad


def ctc_loss(z, y: Sequence[int]) -> CtcResult:
    """Negative log-likelihood of ``y`` summed over all alignments of ``z``.

    Computed in log space over the blank-interleaved lattice. When the grid is
    on a tape its gradient is registered from the alpha-beta posteriors. An
    infeasible pair (T too short) yields +inf with a zero gradient and a falsy
    result instead of raising.
    """
    tensor = z.probs if isinstance(z, PosteriorGrid) else (z if isinstance(z, Tensor) else Tensor(z))
    values = tensor.values
    if values.ndim != 2:
        raise ShapeError(f"ctc_loss: grid must be 2-D, got shape {values.shape}")
    y = tuple(int(k) for k in y)
    _check_target(y, values.shape[1])
    frames = values.shape[0]

    if frames == 0 and not y:
        # the empty alignment: an empty product, probability 1
        zero = np.zeros_like(values)
        return CtcResult(record_op("ctc_loss", (tensor,), np.float64(0.0), lambda g: (zero,)))
    if not is_feasible(frames, y):
        log.debug("infeasible target: T=%d, |y|=%d, needs %d", frames, len(y), min_frames(y))
        zero = np.zeros_like(values)
        return CtcResult(record_op("ctc_loss", (tensor,), np.float64(np.inf), lambda g: (zero,)), feasible=False)

    ext, skip = _extended_labels(y)
    with np.errstate(divide="ignore"):
        log_emit = np.log(values[:, ext])
    alpha = _forward(log_emit, skip)
    tail = alpha[-1, -2:] if len(ext) > 1 else alpha[-1, -1:]
    log_p = float(np.logaddexp.reduce(tail))
    loss = -log_p

    if not is_recording(tensor):
        return CtcResult(Tensor(loss))

    beta = _backward(log_emit, skip)
    grad = _grid_gradient(values, ext, alpha, beta, log_p) if np.isfinite(log_p) else np.zeros_like(values)
    return CtcResult(record_op("ctc_loss", (tensor,), np.float64(loss), lambda g: (g * grad,)))


def ctc_loss_bruteforce(z, y: Sequence[int]) -> float:
    """Exact loss by enumerating every path over V'; the reference for ``ctc_loss``."""
    values = _as_values(z)
    frames, size_ext = values.shape
    if size_ext ** frames > MAX_ENUMERATED_PATHS:
        raise OracleGuardError(f"{size_ext}^{frames} paths exceeds the enumeration guard")
    target = tuple(int(k) for k in y)
    _check_target(target, size_ext)
    total = 0.0
    rows = np.arange(frames)
    for path in itertools.product(range(size_ext), repeat=frames):
        if collapse(path) == target:
            total += float(np.prod(values[rows, path]))
    with np.errstate(divide="ignore"):
        return float(-np.log(total))


def greedy_path(z) -> np.ndarray:
    """Per-frame argmax; ties go to the lowest index, so blank wins ties."""
    return np.argmax(_as_values(z), axis=1)


def greedy_decode(z) -> TokenSequence:
    """Per-frame argmax followed by collapse."""
    return collapse(greedy_path(z))
