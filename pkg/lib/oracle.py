"""Self-check suite: every analytic result against an independent reference.

Properties checked (each over seeded random cases):

- ctc_enumeration: forward-backward loss against brute-force path enumeration
- ctc_gradient: CTC loss gradient against central finite differences
- op_gradients: every differentiable primitive against finite differences
- mixed_loss_gradient: encoder parameter gradients of the mixed loss
- self_conditioning: condition() adds exactly the projected grid
- edit_distance: error attribution against exhaustive minimum edit distance
- matmul_reference: matrix product against a triple loop
- zero_rate_identity: every augmentation operator is the identity at rate 0
- token_delete_rate: blanked frequency within 0.01 of p_del over 10^4 frames
- token_insert_locality: insertion only touches blank-argmax frames
- token_substitute_frequencies: sampled labels within total variation 0.02 of z
- mask_width_uniformity: masked widths pass a chi-square test against U{0..W}

Statistical checks use fixed tolerances, so a seed can in principle fail them by
chance (each chi-square test about 1% of the time).
"""

import functools
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import diffgraph as dg
from . import interaug
from .config import AugmentationSpec, EncoderConfig
from .ctc import BLANK, ctc_loss, ctc_loss_bruteforce, is_feasible
from .diffgraph import Tensor
from .encoder import SelfCondEncoder, mixed_loss
from .metrics import align
from .rng import SeededRng

log = logging.getLogger(__name__)

FD_STEP = 1e-5
REL_TOL = 1e-4
ABS_TOL = 1e-6
CTC_TOL = 1e-9
RATE_TOL = 0.01
TV_TOL = 0.02
MASK_WIDTH = 5
# chi-square critical value, 5 degrees of freedom, alpha = 0.01
CHI2_CRITICAL_DF5 = 15.086

# Failures kept per property; the rest are only counted
MAX_RECORDED = 5


@dataclass
class PropertyResult:
    name: str
    cases: int = 0
    failed: int = 0
    failures: List[Dict[str, Any]] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.failed == 0

    def fail(self, message: str, **replay: Any) -> None:
        self.failed += 1
        if len(self.failures) < MAX_RECORDED:
            self.failures.append({"property": self.name, "message": message, **replay})


@dataclass
class OracleReport:
    """Per-property case counts and serialized failing cases."""

    seed: int
    properties: List[PropertyResult] = field(default_factory=list)

    def __bool__(self) -> bool:
        return all(self.properties)

    @property
    def failures(self) -> List[Dict[str, Any]]:
        return [f for p in self.properties for f in p.failures]

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "passed": bool(self),
                "properties": [{"name": p.name, "cases": p.cases, "failed": p.failed} for p in self.properties],
                "failures": self.failures,
            },
            indent=2,
            sort_keys=True,
        )


def _close(analytic: float, numeric: float) -> bool:
    return abs(analytic - numeric) <= REL_TOL * max(abs(analytic), abs(numeric)) + ABS_TOL


def _random_grid(rng: SeededRng, frames: int, size_ext: int) -> np.ndarray:
    logits = rng.normal(1.0, (frames, size_ext))
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def gradient_mismatches(
    params: Sequence[Tensor],
    loss_fn: Callable[[], Tensor],
) -> List[Tuple[int, Tuple[int, ...], float, float]]:
    """(param index, element, analytic, numeric) for every element that disagrees.

    ``loss_fn`` must read the current values of ``params``; elements are
    perturbed through :meth:`Tensor.assign` and restored afterwards.
    """
    for p in params:
        p.zero_grad()
    with dg.Tape() as tape:
        tape.backward(loss_fn())
    analytic = [p.grad if p.grad is not None else np.zeros(p.shape) for p in params]

    bad = []
    for i, p in enumerate(params):
        original = p.values
        for idx in np.ndindex(*p.shape):
            bumped = original.copy()
            bumped[idx] += FD_STEP
            p.assign(bumped)
            up = loss_fn().item()
            bumped[idx] -= 2 * FD_STEP
            p.assign(bumped)
            down = loss_fn().item()
            p.assign(original)
            numeric = (up - down) / (2 * FD_STEP)
            if not _close(float(analytic[i][idx]), numeric):
                bad.append((i, idx, float(analytic[i][idx]), numeric))
    return bad


def check_ctc_enumeration(rng: SeededRng, cases: int = 200) -> PropertyResult:
    result = PropertyResult("ctc_enumeration")
    for case in range(cases):
        frames = rng.integer(1, 6)
        vocab = rng.integer(1, 3)
        y = tuple(rng.integer(1, vocab) for _ in range(rng.integer(0, 3)))
        z = _random_grid(rng, frames, vocab + 1)
        fast = ctc_loss(Tensor(z), y).value
        slow = ctc_loss_bruteforce(z, y)
        same = (np.isinf(fast) and np.isinf(slow)) or abs(fast - slow) <= CTC_TOL
        result.cases += 1
        if not same:
            result.fail(f"forward-backward {fast!r} != enumeration {slow!r}", case=case, z=z.tolist(), y=list(y))
    return result


def check_ctc_gradient(rng: SeededRng, cases: int = 20) -> PropertyResult:
    result = PropertyResult("ctc_gradient")
    for case in range(cases):
        frames = rng.integer(2, 5)
        vocab = rng.integer(1, 3)
        y = tuple(rng.integer(1, vocab) for _ in range(rng.integer(1, 3)))
        if not is_feasible(frames, y):
            y = y[:1]
        z = dg.parameter(_random_grid(rng, frames, vocab + 1))
        result.cases += 1
        for _, idx, a, n in gradient_mismatches([z], lambda: ctc_loss(z, y).loss):
            result.fail(
                f"finite-difference mismatch at z{list(idx)}: analytic {a:.6g} vs numeric {n:.6g}",
                case=case,
                z=z.values.tolist(),
                y=list(y),
            )
            break
    return result


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return dg.sum_all(dg.mul(out, dg.constant(weights)))


# name -> (input shapes, builder); inputs are kept away from the relu kink
_OP_CASES: Dict[str, Tuple[Tuple[Tuple[int, ...], ...], Callable[..., Tensor]]] = {
    "matmul": (((3, 4), (4, 2)), dg.matmul),
    "add": (((3, 4), (3, 4)), dg.add),
    "add_bias": (((3, 4), (4,)), dg.add_bias),
    "mul": (((3, 4), (3, 4)), dg.mul),
    "scale": (((3, 4),), lambda x: dg.scale(x, -1.7)),
    "transpose": (((3, 4),), dg.transpose),
    "tanh": (((3, 4),), dg.tanh),
    "relu": (((3, 4),), dg.relu),
    "softmax_rows": (((3, 4),), dg.softmax_rows),
    "layer_norm": (((3, 4),), dg.layer_norm),
    "two_layer": (((3, 4), (4, 5), (5, 2)), lambda x, w1, w2: dg.matmul(dg.tanh(dg.matmul(x, w1)), w2)),
}


def check_op_gradients(rng: SeededRng, cases_per_op: int = 3) -> PropertyResult:
    result = PropertyResult("op_gradients")
    for name, (shapes, build) in _OP_CASES.items():
        for case in range(cases_per_op):
            inputs = []
            for shape in shapes:
                values = rng.normal(1.0, shape)
                values = np.where(np.abs(values) < 0.1, 0.5, values)
                inputs.append(dg.parameter(values))
            out_shape = build(*[dg.constant(t.values) for t in inputs]).shape
            weights = rng.normal(1.0, out_shape)
            result.cases += 1
            bad = gradient_mismatches(inputs, lambda: _weighted_sum(build(*inputs), weights))
            if bad:
                i, idx, a, n = bad[0]
                result.fail(
                    f"{name}: finite-difference mismatch at input {i}{list(idx)}: analytic {a:.6g} vs numeric {n:.6g}",
                    op=name,
                    case=case,
                    inputs=[t.values.tolist() for t in inputs],
                )
    return result


def _tiny_encoder(block: str) -> EncoderConfig:
    return EncoderConfig(
        num_layers=2,
        model_dim=8,
        input_dim=4,
        vocab_size_ext=4,
        intermediate_layers=(1,),
        mix_weight=0.5,
        block=block,
        hidden_dim=8,
        activation="tanh",
    )


def check_mixed_loss_gradient(rng: SeededRng) -> PropertyResult:
    """Full parameter gradient of the mixed loss on a 2-layer, D=8, T=5 instance."""
    result = PropertyResult("mixed_loss_gradient")
    variants: List[Tuple[str, Optional[AugmentationSpec]]] = [
        ("mlp", None),
        ("mlp_attention", None),
        ("mlp", AugmentationSpec(operator="time_mask", w_time_ratio=0.0, w_time=2)),
    ]
    for case, (block, aug) in enumerate(variants):
        cfg = _tiny_encoder(block)
        model = SelfCondEncoder(cfg, seed=rng.integer(0, 2**31 - 1))
        x0 = rng.normal(1.0, (5, cfg.input_dim))
        y = (1, 2, 3)

        def loss_fn() -> Tensor:
            draws = SeededRng(case, "fd-augment") if aug else None
            out = model.forward(x0, aug, draws)
            return mixed_loss(out.final, out.intermediates, y, cfg.mix_weight).total

        result.cases += 1
        names = [name for name, _ in model.named_parameters()]
        bad = gradient_mismatches(model.parameters(), loss_fn)
        if bad:
            i, idx, a, n = bad[0]
            result.fail(
                f"finite-difference mismatch at {names[i]}{list(idx)}: analytic {a:.6g} vs numeric {n:.6g}",
                case=case,
                block=block,
                operator=aug.operator if aug else "none",
                mismatched=len(bad),
            )
    return result


def check_self_conditioning(rng: SeededRng, cases: int = 20) -> PropertyResult:
    """condition() minus its input equals the projected grid; other layers pass through."""
    result = PropertyResult("self_conditioning")
    cfg = EncoderConfig(num_layers=4, model_dim=8, input_dim=4, vocab_size_ext=4, intermediate_layers=(1, 3))
    model = SelfCondEncoder(cfg, seed=0)
    for case in range(cases):
        x = Tensor(rng.normal(1.0, (rng.integer(1, 7), cfg.model_dim)))
        z = model.intermediate_predict(x)
        expected = model.heads.cond_projection(z.probs).values
        result.cases += 1
        for n in range(1, cfg.num_layers + 1):
            out = model.condition(n, x, z)
            if n in cfg.intermediate_layers:
                err = float(np.max(np.abs(out.values - x.values - expected)))
                if err > 1e-12:
                    result.fail(f"layer {n}: conditioning differs from the projected grid by {err:.3g}", case=case)
            elif not np.array_equal(out.values, x.values):
                result.fail(f"layer {n}: non-conditioning layer altered its features", case=case)

        x0 = rng.normal(1.0, (rng.integer(1, 7), cfg.input_dim))
        plain = model.forward(x0).final.values
        identity = model.forward(x0, AugmentationSpec(operator="none"), SeededRng(case)).final.values
        if not np.array_equal(plain, identity):
            result.fail("operator none changed the forward pass", case=case, x0=x0.tolist())
    return result


def exhaustive_edit_distance(ref: Sequence[int], hyp: Sequence[int]) -> int:
    """Minimum over every alignment, by memoized recursion on suffixes."""

    @functools.lru_cache(maxsize=None)
    def best(i: int, j: int) -> int:
        if i == len(ref):
            return len(hyp) - j
        if j == len(hyp):
            return len(ref) - i
        return min(
            best(i + 1, j + 1) + (ref[i] != hyp[j]),
            best(i + 1, j) + 1,
            best(i, j + 1) + 1,
        )

    return best(0, 0)


def check_edit_distance(rng: SeededRng, cases: int = 500) -> PropertyResult:
    result = PropertyResult("edit_distance")
    for case in range(cases):
        ref = tuple(rng.integer(1, 3) for _ in range(rng.integer(0, 8)))
        hyp = tuple(rng.integer(1, 3) for _ in range(rng.integer(0, 8)))
        b = align(ref, hyp)
        result.cases += 1
        reference = exhaustive_edit_distance(ref, hyp)
        if b.errors != reference:
            result.fail(f"{b.errors} edits attributed, minimum is {reference}", ref=list(ref), hyp=list(hyp))
        elif b.hits + b.substitutions + b.deletions != len(ref):
            result.fail("hits + subs + dels != ref_len", ref=list(ref), hyp=list(hyp))
        elif b.hits + b.substitutions + b.insertions != len(hyp):
            result.fail("hits + subs + ins != hyp_len", ref=list(ref), hyp=list(hyp))
    return result


def check_matmul_reference(rng: SeededRng, cases: int = 50) -> PropertyResult:
    """dg.matmul against a plain triple loop."""
    result = PropertyResult("matmul_reference")
    for case in range(cases):
        n, k, m = rng.integer(1, 4), rng.integer(1, 4), rng.integer(1, 4)
        a = rng.normal(1.0, (n, k))
        b = rng.normal(1.0, (k, m))
        expected = np.zeros((n, m))
        for i in range(n):
            for j in range(m):
                for r in range(k):
                    expected[i, j] += a[i, r] * b[r, j]
        got = dg.matmul(dg.constant(a), dg.constant(b)).values
        result.cases += 1
        err = float(np.max(np.abs(got - expected)))
        if err > 1e-12:
            result.fail(f"matmul differs from the triple loop by {err:.3g}", case=case, a=a.tolist(), b=b.tolist())
    return result


def check_zero_rate_identity(rng: SeededRng, cases: int = 20) -> PropertyResult:
    """Every operator leaves its input alone at rate 0 (a one-hot grid for substitution)."""
    result = PropertyResult("zero_rate_identity")
    for case in range(cases):
        frames = rng.integer(1, 12)
        z = _random_grid(rng, frames, 4)
        argmax = np.argmax(z, axis=1)
        c = Tensor(rng.normal(1.0, (frames, 6)))
        one_hot_grid = interaug.one_hot(argmax, 4)
        unchanged = {
            "time_mask": np.array_equal(interaug.time_mask(c, frames, 0.0, rng).values, c.values),
            "feature_mask": np.array_equal(interaug.feature_mask(c, 6, 0.0, rng).values, c.values),
            "token_delete": np.array_equal(interaug.token_delete(z, 0.0, rng), argmax),
            "token_insert": np.array_equal(interaug.token_insert(z, 0.0, rng), argmax),
            "token_substitute": np.array_equal(interaug.token_substitute(one_hot_grid, rng), argmax),
        }
        result.cases += 1
        for operator, same in unchanged.items():
            if not same:
                result.fail(f"{operator} changed its input at rate 0", case=case, operator=operator, z=z.tolist())
    return result


def check_token_delete_rate(rng: SeededRng, frames: int = 10_000) -> PropertyResult:
    """Blanked frame frequency equals p_del within 0.01."""
    result = PropertyResult("token_delete_rate")
    z = np.full((frames, 4), 0.1)
    z[:, 0] = 0.0
    z[np.arange(frames), 1 + np.arange(frames) % 3] = 0.8
    for case, p_del in enumerate((0.05, 0.1)):
        stream = rng.derive(f"p{case}")
        observed = float(np.mean(interaug.token_delete(z, p_del, stream) == BLANK))
        result.cases += 1
        if abs(observed - p_del) > RATE_TOL:
            result.fail(
                f"blank frequency {observed:.4f} outside p_del {p_del} +/- {RATE_TOL}",
                p_del=p_del,
                frames=frames,
                stream=repr(stream),
            )
    return result


def check_token_insert_locality(rng: SeededRng, cases: int = 20) -> PropertyResult:
    """Insertion never changes a frame whose argmax is already a token."""
    result = PropertyResult("token_insert_locality")
    for case in range(cases):
        z = _random_grid(rng, rng.integer(1, 40), rng.integer(2, 5))
        argmax = np.argmax(z, axis=1)
        path = interaug.token_insert(z, 0.5, rng)
        keep = argmax != BLANK
        result.cases += 1
        if not np.array_equal(path[keep], argmax[keep]):
            result.fail("token_insert altered a non-blank argmax frame", case=case, z=z.tolist())
        elif np.any((path != argmax) & (path == BLANK)):
            result.fail("token_insert produced a blank", case=case, z=z.tolist())
    return result


def check_token_substitute_frequencies(rng: SeededRng, draws: int = 10_000) -> PropertyResult:
    """Sampled label frequencies within total variation 0.02 of the posterior row."""
    result = PropertyResult("token_substitute_frequencies")
    rows = [np.full(4, 0.25), np.array([0.1, 0.2, 0.3, 0.4]), _random_grid(rng, 1, 5)[0]]
    for case, row in enumerate(rows):
        stream = rng.derive(f"row{case}")
        path = interaug.token_substitute(np.tile(row, (draws, 1)), stream)
        freq = np.bincount(path, minlength=len(row)) / draws
        distance = 0.5 * float(np.abs(freq - row).sum())
        result.cases += 1
        if distance >= TV_TOL:
            result.fail(
                f"total variation {distance:.4f} from the posterior row",
                row=row.tolist(),
                draws=draws,
                stream=repr(stream),
            )
    return result


def _chi_square_uniform(counts: np.ndarray) -> float:
    expected = counts.sum() / len(counts)
    return float(((counts - expected) ** 2 / expected).sum())


def check_mask_width_uniformity(rng: SeededRng, draws: int = 10_000) -> PropertyResult:
    """Zeroed-block widths of time and feature masks are U{0..W} by chi-square at 0.01."""
    result = PropertyResult("mask_width_uniformity")
    ones = Tensor(np.ones((30, 12)))
    masks = [
        ("time_mask", lambda r: np.all(interaug.time_mask(ones, MASK_WIDTH, 1.0, r).values == 0.0, axis=1)),
        ("feature_mask", lambda r: np.all(interaug.feature_mask(ones, MASK_WIDTH, 1.0, r).values == 0.0, axis=0)),
    ]
    for operator, zeroed in masks:
        stream = rng.derive(operator)
        widths = [int(np.count_nonzero(zeroed(stream))) for _ in range(draws)]
        counts = np.bincount(widths, minlength=MASK_WIDTH + 1)
        result.cases += 1
        if len(counts) > MASK_WIDTH + 1:
            result.fail(f"{operator} zeroed more than {MASK_WIDTH} lines", operator=operator, stream=repr(stream))
            continue
        statistic = _chi_square_uniform(counts)
        if statistic >= CHI2_CRITICAL_DF5:
            result.fail(
                f"{operator} width chi-square {statistic:.3f} >= {CHI2_CRITICAL_DF5}",
                operator=operator,
                counts=counts.tolist(),
                stream=repr(stream),
            )
    return result


def run_oracle_suite(seed: int = 0) -> OracleReport:
    """Run every property with streams derived from ``seed``."""
    root = SeededRng(seed, "oracle")
    report = OracleReport(seed)
    checks = [
        ("ctc_enumeration", check_ctc_enumeration),
        ("ctc_gradient", check_ctc_gradient),
        ("op_gradients", check_op_gradients),
        ("mixed_loss_gradient", check_mixed_loss_gradient),
        ("self_conditioning", check_self_conditioning),
        ("edit_distance", check_edit_distance),
        ("matmul_reference", check_matmul_reference),
        ("zero_rate_identity", check_zero_rate_identity),
        ("token_delete_rate", check_token_delete_rate),
        ("token_insert_locality", check_token_insert_locality),
        ("token_substitute_frequencies", check_token_substitute_frequencies),
        ("mask_width_uniformity", check_mask_width_uniformity),
    ]
    for name, check in checks:
        prop = check(root.derive(name))
        log.info("%s: %d cases, %d failed", prop.name, prop.cases, prop.failed)
        report.properties.append(prop)
    return report
