"""Experiment commands: train, eval, matrix."""

from pathlib import Path
from typing import Annotated, Optional

import typer

from .. import output
from ... import config, metrics, trainer
from ...checkpoint import load_checkpoint
from ...data import write_labels
from .helpers import (
    EXIT_USAGE,
    ConfigOption,
    OutOption,
    SeedOption,
    SetOption,
    exit_on_error,
    fail,
    load_experiment,
    parse_seeds,
    run_dir,
)


def train_cmd(
    config_path: ConfigOption = None,
    overrides: SetOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
) -> None:
    """Train one model and save the averaged checkpoint."""
    cfg = load_experiment(config_path, overrides, seed)
    target = run_dir(out)
    config.write_config(cfg, target / "config.toml")

    output.header(f"Training: {cfg.augmentation.operator}")
    output.info(
        f"{cfg.epochs} epochs, batch {cfg.batch_size}, "
        f"{cfg.encoder.num_layers} layers, intermediate {list(cfg.encoder.intermediate_layers)}"
    )
    with exit_on_error():
        result = trainer.train(cfg, target)

    output.success(f"Averaged epochs {result.kept_epochs}: val_loss {result.final_val_loss:.4f}")
    output.info(f"Model: {result.model_path}")
    output.info(f"Step log: {target / trainer.STEP_LOG}")


def eval_cmd(
    out: OutOption = None,
    model_path: Annotated[
        Optional[Path], typer.Option("--model", "-m", help="Checkpoint (default: <run dir>/model.ckpt)")
    ] = None,
    split: Annotated[str, typer.Option("--split", help="Corpus split to score")] = "test",
) -> None:
    """Greedy-decode a split and write the WER report."""
    if split not in config.SPLITS:
        fail(f"--split must be one of {', '.join(config.SPLITS)} (got {split!r})", EXIT_USAGE)
    target = run_dir(out)
    model_path = model_path or target / trainer.MODEL_FILE
    if not model_path.exists():
        fail(f"No checkpoint at {model_path}; run 'ctcaug train' first", EXIT_USAGE)

    with exit_on_error():
        cfg, model = load_checkpoint(model_path)
        corpus = trainer.corpus_for(cfg, split, target)
        if not corpus:
            fail(f"{split} corpus is empty", EXIT_USAGE)
        report = trainer.evaluate(model, corpus)

    report_path = target / f"report_{split}.csv"
    hyp_path = target / f"hyp_{split}.txt"
    metrics.write_report(report_path, report.records, report.summary)
    write_labels(hyp_path, [(r.utt_id, r.hyp) for r in report.records])

    output.print_breakdown(report.summary, title=f"{split} ({len(report.records)} utterances)")
    output.success(f"Report written to {report_path}")
    output.info(f"Hypotheses: {hyp_path}")


def matrix_cmd(
    config_path: ConfigOption = None,
    overrides: SetOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    preset: Annotated[
        str, typer.Option("--preset", "-p", help="Variant set: operators or position")
    ] = "operators",
    seeds: Annotated[
        Optional[str], typer.Option("--seeds", help="Comma-separated training seeds, e.g. 0,1,2")
    ] = None,
    jobs: Annotated[int, typer.Option("--jobs", "-j", help="Variants trained in parallel")] = 1,
) -> None:
    """Train every variant of a preset on one corpus and compare test WER."""
    if preset not in trainer.MATRIX_PRESETS:
        fail(f"--preset must be one of {', '.join(trainer.MATRIX_PRESETS)} (got {preset!r})", EXIT_USAGE)
    if jobs < 1:
        fail(f"--jobs must be >= 1 (got {jobs})", EXIT_USAGE)
    cfg = load_experiment(config_path, overrides, seed)
    seed_list = parse_seeds(seeds)
    target = run_dir(out)
    config.write_config(cfg, target / "config.toml")

    variants = trainer.MATRIX_PRESETS[preset]()
    output.header(f"Matrix: {preset}")
    output.info(f"{len(variants)} variants x {len(seed_list) or 1} seed(s), {jobs} job(s)")
    with exit_on_error():
        rows = trainer.run_matrix(cfg, variants, seed_list, jobs, target)

    output.print_matrix(rows)
    output.success(f"Table written to {target / 'matrix.csv'}")
