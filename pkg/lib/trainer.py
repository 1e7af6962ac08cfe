"""Training loop, evaluation and the experiment matrix."""

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import diffgraph as dg
from .checkpoint import State, average_parameters, save_checkpoint
from .config import AugmentationSpec, ConfigError, TrainConfig, apply_overrides
from .ctc import is_feasible
from .data import Utterance, generate, load_corpus
from .encoder import SelfCondEncoder, mixed_loss
from .metrics import ErrorBreakdown, UtteranceRecord, align, corpus_report
from .rng import SeededRng

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""

    def __init__(self, step: int, last_finite_loss: Optional[float]):
        super().__init__(f"non-finite training loss at step {step} (last finite loss: {last_finite_loss})")
        self.step = step
        self.last_finite_loss = last_finite_loss


def lr_schedule(step: int, model_dim: int, warmup_steps: int, factor: float) -> float:
    """Noam rate: factor * D^-0.5 * min(step^-0.5, step * warmup^-1.5)."""
    if step < 1:
        raise ValueError(f"lr_schedule: step must be >= 1 (got {step})")
    return factor * model_dim ** -0.5 * min(step ** -0.5, step * warmup_steps ** -1.5)


class Adam:
    """Adam with bias correction over a fixed list of parameter tensors."""

    def __init__(self, params: Sequence[dg.Tensor], beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-9):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * p.grad
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * p.grad * p.grad
            update = (self.m[i] / bias1) / (np.sqrt(self.v[i] / bias2) + self.eps)
            p.assign(p.values - lr * update)


def clip_grad_norm(params: Sequence[dg.Tensor], max_norm: float) -> float:
    """Rescale gradients to a global L2 norm of at most ``max_norm`` (0 disables).

    Returns the norm before clipping.
    """
    grads = [p.grad for p in params if p.grad is not None]
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        ratio = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * ratio
    return norm


@dataclass
class StepStats:
    loss: float
    final: float
    intermediate: List[float]
    skipped: int


def _augmentation(cfg: TrainConfig) -> Optional[AugmentationSpec]:
    return None if cfg.augmentation.is_identity else cfg.augmentation


def accumulate_gradients(
    model: SelfCondEncoder,
    batch: Sequence[Utterance],
    cfg: TrainConfig,
    rng: Optional[SeededRng] = None,
) -> StepStats:
    """Backpropagate the batch-mean mixed loss into the parameters' ``grad``.

    Each utterance gets its own tape; leaf gradients accumulate across them.
    Utterances whose label cannot align to their frames are skipped.
    """
    usable = [u for u in batch if is_feasible(u.frames, u.label)]
    skipped = len(batch) - len(usable)
    if not usable:
        return StepStats(0.0, 0.0, [0.0] * len(cfg.encoder.intermediate_layers), skipped)

    aug = _augmentation(cfg)
    weight = 1.0 / len(usable)
    total = final = 0.0
    inters = np.zeros(len(cfg.encoder.intermediate_layers))
    for utt in usable:
        with dg.Tape() as tape:
            out = model.forward(utt.features, aug, rng.derive(utt.id) if aug else None)
            ml = mixed_loss(out.final, out.intermediates, utt.label, cfg.encoder.mix_weight)
            loss = dg.add_scalars([ml.total], [weight])
            if np.isfinite(loss.item()):
                tape.backward(loss)
        total += ml.total.item() * weight
        final += ml.final * weight
        inters += np.asarray(ml.intermediate) * weight
    return StepStats(total, final, inters.tolist(), skipped)


def validation_loss(model: SelfCondEncoder, corpus: Sequence[Utterance], mix_weight: float) -> float:
    """Mean mixed loss over ``corpus``; no tape, no augmentation."""
    losses = []
    for utt in corpus:
        if not is_feasible(utt.frames, utt.label):
            continue
        out = model.forward(utt.features)
        losses.append(mixed_loss(out.final, out.intermediates, utt.label, mix_weight).total.item())
    if not losses:
        raise ConfigError("validation corpus has no usable utterances")
    return float(np.mean(losses))


def corpus_for(cfg: TrainConfig, split: str, run_dir: Optional[Path] = None) -> List[Utterance]:
    """Load a split from its configured path, or generate it from ``cfg.data``."""
    explicit = getattr(cfg.data, f"{split}_path")
    if explicit or run_dir is not None:
        path = cfg.data.corpus_path(split, run_dir)
        if path.exists():
            log.info("loading %s corpus from %s", split, path)
            return load_corpus(path)
        if explicit:
            raise ConfigError(f"data.{split}_path: {path} does not exist")
    spec = cfg.data.synth_spec(split)
    log.info("generating %d %s utterances (seed %d)", spec.num_utterances, split, spec.seed)
    return generate(spec)


STEP_LOG = "metrics.csv"
EPOCH_LOG = "epochs.csv"
MODEL_FILE = "model.ckpt"


@dataclass
class TrainResult:
    """Averaged model plus what training saw along the way."""

    model: SelfCondEncoder
    steps: int
    val_losses: List[float]
    kept_epochs: List[int]
    final_val_loss: float
    model_path: Optional[Path] = None


class _CsvLog:
    """Append-only CSV, or a no-op when there is no run directory."""

    def __init__(self, path: Optional[Path], columns: Sequence[str]):
        self.f = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self.f = open(path, "w", newline="")
            self.writer = csv.writer(self.f, lineterminator="\n")
            self.writer.writerow(columns)

    def row(self, values: Sequence) -> None:
        if self.f is not None:
            self.writer.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in values])

    def close(self) -> None:
        if self.f is not None:
            self.f.close()


def train(
    cfg: TrainConfig,
    run_dir: Optional[Path] = None,
    train_corpus: Optional[Sequence[Utterance]] = None,
    dev_corpus: Optional[Sequence[Utterance]] = None,
) -> TrainResult:
    """Train with seeded shuffling and keep the k best epochs by validation loss.

    The returned model holds the mean of the retained checkpoints. With a
    ``run_dir`` the step and epoch logs and the averaged model are written
    there.
    """
    cfg.validate()
    train_corpus = list(train_corpus) if train_corpus is not None else corpus_for(cfg, "train", run_dir)
    dev_corpus = list(dev_corpus) if dev_corpus is not None else corpus_for(cfg, "dev", run_dir)
    if not train_corpus:
        raise ConfigError("training corpus is empty")

    model = SelfCondEncoder(cfg.encoder, seed=cfg.seed)
    params = model.parameters()
    optimizer = Adam(params, cfg.beta1, cfg.beta2, cfg.eps)
    shuffle_rng = SeededRng(cfg.seed, "shuffle")
    augment_rng = SeededRng(cfg.seed, "augment")

    inter_cols = [f"inter_loss_{n}" for n in cfg.encoder.intermediate_layers]
    step_log = _CsvLog(run_dir / STEP_LOG if run_dir else None,
                       ["step", "lr", "train_loss", "final_loss", *inter_cols, "grad_norm", "skipped"])
    epoch_log = _CsvLog(run_dir / EPOCH_LOG if run_dir else None, ["epoch", "val_loss", "kept"])

    step = 0
    last_finite: Optional[float] = None
    kept: List[Tuple[float, int, State]] = []
    val_losses = []
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = shuffle_rng.derive(str(epoch)).permutation(len(train_corpus))
            epoch_rng = augment_rng.derive(str(epoch))
            for start in range(0, len(order), cfg.batch_size):
                batch = [train_corpus[i] for i in order[start:start + cfg.batch_size]]
                step += 1
                model.zero_grad()
                stats = accumulate_gradients(model, batch, cfg, epoch_rng)
                if not np.isfinite(stats.loss):
                    raise DivergenceError(step, last_finite)
                last_finite = stats.loss
                norm = clip_grad_norm(params, cfg.grad_clip)
                lr = lr_schedule(step, cfg.encoder.model_dim, cfg.warmup_steps, cfg.lr_factor)
                optimizer.step(lr)
                step_log.row([step, lr, stats.loss, stats.final, *stats.intermediate, norm, stats.skipped])

            val = validation_loss(model, dev_corpus or train_corpus, cfg.encoder.mix_weight)
            val_losses.append(val)
            kept.append((val, epoch, model.state_dict()))
            kept.sort(key=lambda item: (item[0], item[1]))
            kept = kept[:cfg.checkpoint_avg_k]
            retained = any(e == epoch for _, e, _ in kept)
            epoch_log.row([epoch, val, int(retained)])
            log.info("epoch %d: val_loss %.4f%s", epoch, val, " (kept)" if retained else "")
    finally:
        step_log.close()
        epoch_log.close()

    # ascending epoch order so the mean does not depend on ranking ties
    kept_epochs = sorted(e for _, e, _ in kept)
    by_epoch = {e: state for _, e, state in kept}
    model.load_state_dict(average_parameters([by_epoch[e] for e in kept_epochs]))
    final_val = validation_loss(model, dev_corpus or train_corpus, cfg.encoder.mix_weight)
    log.info("averaged epochs %s: val_loss %.4f", kept_epochs, final_val)

    model_path = None
    if run_dir is not None:
        model_path = run_dir / MODEL_FILE
        save_checkpoint(model_path, cfg, model)
    return TrainResult(model, step, val_losses, kept_epochs, final_val, model_path)


@dataclass
class EvaluationReport:
    summary: ErrorBreakdown
    records: List[UtteranceRecord]


def evaluate(model: SelfCondEncoder, corpus: Sequence[Utterance]) -> EvaluationReport:
    """Greedy-decode every utterance and score it; augmentation is never active here."""
    records = []
    for utt in corpus:
        hyp = model.decode(utt.features)
        records.append(UtteranceRecord(utt.id, tuple(utt.label), hyp, align(utt.label, hyp)))
    summary = corpus_report((r.ref, r.hyp) for r in records)
    return EvaluationReport(summary, records)


@dataclass(frozen=True)
class Variant:
    """One matrix row: an operator and any config overrides it needs.

    Overrides apply on top of the base config, so augmentation strengths set
    there carry into every row.
    """

    name: str
    operator: str = "none"
    overrides: Tuple[str, ...] = ()


def operator_variants() -> List[Variant]:
    """Baselines and the five single-operator rows."""
    return [
        Variant("CTC", "none", ("encoder.intermediate_layers=", "encoder.mix_weight=0")),
        Variant("Intermediate CTC", "none", ("encoder.self_condition=false",)),
        Variant("Self-conditioned", "none"),
        Variant("Time masking", "time_mask"),
        Variant("Feature masking", "feature_mask"),
        Variant("Token deletion", "token_delete"),
        Variant("Token insertion", "token_insert"),
        Variant("Token substitution", "token_substitute"),
    ]


def position_variants() -> List[Variant]:
    """Time masking on the encoder feature against the conditioning feature."""
    masked = ("augmentation.w_time_ratio=0.1", "augmentation.p_time=0.5")
    return [
        Variant("Self-conditioned", "none"),
        Variant("Encoder feature", "time_mask", ("augmentation.position=encoder_feature", *masked)),
        Variant("Conditioning feature", "time_mask", masked),
    ]


MATRIX_PRESETS = {"operators": operator_variants, "position": position_variants}


def variant_config(base: TrainConfig, variant: Variant, seed: Optional[int] = None) -> TrainConfig:
    """Base config with the variant applied; rows sit on the conditioning feature unless overridden."""
    items = [f"augmentation.operator={variant.operator}", "augmentation.position=conditioning_feature"]
    cfg = apply_overrides(base, items + list(variant.overrides))
    if seed is not None:
        cfg.seed = seed
    cfg.validate()
    return cfg


@dataclass
class MatrixRow:
    """Test-set breakdowns of one variant, one per seed, with the dev-set ones alongside."""

    name: str
    seeds: List[int]
    results: List[ErrorBreakdown]
    dev_results: List[ErrorBreakdown] = field(default_factory=list)

    def _mean(self, attr: str) -> float:
        return float(np.mean([getattr(r, attr) for r in self.results]))

    @property
    def wer(self) -> float:
        return self._mean("wer")

    @property
    def sub_rate(self) -> float:
        return self._mean("sub_rate")

    @property
    def del_rate(self) -> float:
        return self._mean("del_rate")

    @property
    def ins_rate(self) -> float:
        return self._mean("ins_rate")

    @property
    def dev_wer(self) -> float:
        return float(np.mean([r.wer for r in self.dev_results])) if self.dev_results else float("nan")

    @property
    def wer_range(self) -> Tuple[float, float]:
        wers = [r.wer for r in self.results]
        return min(wers), max(wers)


def _run_job(cfg: TrainConfig, corpora: Dict[str, List[Utterance]]) -> Tuple[ErrorBreakdown, ErrorBreakdown]:
    """(dev, test) breakdowns of one trained variant."""
    result = train(cfg, train_corpus=corpora["train"], dev_corpus=corpora["dev"])
    return evaluate(result.model, corpora["dev"]).summary, evaluate(result.model, corpora["test"]).summary


def run_matrix(
    base: TrainConfig,
    variants: Sequence[Variant],
    seeds: Sequence[int] = (),
    jobs: int = 1,
    run_dir: Optional[Path] = None,
) -> List[MatrixRow]:
    """Train and test every variant on one shared corpus, once per seed.

    Rows come back in variant order whatever the completion order of jobs.
    """
    if len(variants) < 2:
        raise ConfigError(f"run_matrix needs at least 2 variants (got {len(variants)})")
    seeds = list(seeds) or [base.seed]
    base.validate()
    corpora = {split: corpus_for(base, split, run_dir) for split in ("train", "dev", "test")}

    configs = [(v, s, variant_config(base, v, s)) for v in variants for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_job, cfg, corpora) for _, _, cfg in configs]
            summaries = [f.result() for f in futures]
    else:
        summaries = [_run_job(cfg, corpora) for _, _, cfg in configs]

    rows = []
    for i, variant in enumerate(variants):
        chunk = summaries[i * len(seeds):(i + 1) * len(seeds)]
        rows.append(MatrixRow(variant.name, list(seeds), [test for _, test in chunk], [dev for dev, _ in chunk]))
        log.info("%s: dev wer %.4f, test wer %.4f", variant.name, rows[-1].dev_wer, rows[-1].wer)
    if run_dir is not None:
        write_matrix(run_dir / "matrix.csv", rows)
    return rows


MATRIX_COLUMNS = ("variant", "seeds", "dev_wer", "wer", "sub", "del", "ins", "wer_min", "wer_max")


def write_matrix(path: Path, rows: Sequence[MatrixRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MATRIX_COLUMNS)
        for row in rows:
            low, high = row.wer_range
            writer.writerow([
                row.name,
                " ".join(str(s) for s in row.seeds),
                *(f"{v:.6f}" for v in (row.dev_wer, row.wer, row.sub_rate, row.del_rate, row.ins_rate, low, high)),
            ])
