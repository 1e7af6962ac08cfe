"""Inspection commands: augment-demo, oracle-check."""

from pathlib import Path
from typing import Annotated, Optional

import typer

from .. import output
from ... import trainer
from ...checkpoint import load_checkpoint
from ...encoder import SelfCondEncoder
from ...oracle import run_oracle_suite
from ...rng import SeededRng
from .helpers import (
    EXIT_RUNTIME,
    EXIT_USAGE,
    ConfigOption,
    OutOption,
    SeedOption,
    SetOption,
    exit_on_error,
    fail,
    load_experiment,
    run_dir,
)


def augment_demo(
    utt_id: Annotated[str, typer.Argument(help="Utterance id, e.g. train-00003")],
    config_path: ConfigOption = None,
    overrides: SetOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    model_path: Annotated[
        Optional[Path], typer.Option("--model", "-m", help="Checkpoint to inspect (default: random init)")
    ] = None,
    split: Annotated[str, typer.Option("--split", help="Corpus split holding the utterance")] = "train",
) -> None:
    """Show what the configured operator does to each intermediate prediction."""
    cfg = load_experiment(config_path, overrides, seed)
    target = run_dir(out)

    with exit_on_error():
        if model_path:
            _, model = load_checkpoint(model_path)
        else:
            model = SelfCondEncoder(cfg.encoder, seed=cfg.seed)
        corpus = {u.id: u for u in trainer.corpus_for(cfg, split, target)}
        utt = corpus.get(utt_id)
        if utt is None:
            fail(f"Unknown utterance '{utt_id}' in the {split} split", EXIT_USAGE)
        result = model.forward(utt.features, cfg.augmentation, SeededRng(cfg.seed, "augment-demo"))

    if not result.traces:
        output.warning("No conditioning layers: set encoder.self_condition=true and encoder.intermediate_layers")
        return
    output.info(f"reference: {' '.join(str(k) for k in utt.label)}")
    output.print_augment_trace(utt.id, cfg.augmentation.operator, result.traces)


def oracle_check(
    seed: Annotated[int, typer.Option("--seed", help="Seed for the random cases")] = 0,
    report: Annotated[
        Optional[Path], typer.Option("--report", help="Where failing cases are written (JSON)")
    ] = None,
) -> None:
    """Check CTC, gradients and scoring against independent references."""
    output.header("Oracle checks")
    with exit_on_error():
        result = run_oracle_suite(seed)
    output.print_oracle_report(result)

    if result:
        output.success("All properties hold")
        return

    path = report or Path("oracle_failures.json")
    path.write_text(result.to_json() + "\n")
    output.print_json(result.failures)
    output.error(f"Oracle checks failed; cases for replay written to {path}")
    raise typer.Exit(EXIT_RUNTIME)
