"""Shared helper functions for CLI commands."""

import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Annotated, Iterator, List, Optional

import typer

from .. import output
from ... import config
from ...config import ConfigError, TrainConfig
from ...ctc import VocabularyError
from ...data import CorpusFormatError, DataError
from ...diffgraph import NumericError, ShapeError
from ...trainer import DivergenceError

log = logging.getLogger(__name__)

# Exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

ConfigOption = Annotated[
    Optional[Path], typer.Option("--config", "-c", help="Experiment config file (TOML)")
]
SetOption = Annotated[
    Optional[List[str]],
    typer.Option("--set", "-s", help="Override a config key, e.g. augmentation.p_del=0.2 (repeatable)"),
]
SeedOption = Annotated[
    Optional[int], typer.Option("--seed", help="Root seed for data, initialization and augmentation")
]
OutOption = Annotated[
    Optional[Path], typer.Option("--out", "-o", help="Run directory (default: runs/default)")
]


def fail(message: str, code: int = EXIT_USAGE) -> None:
    """Print an error and exit with ``code``."""
    output.error(message)
    raise typer.Exit(code)


@contextmanager
def exit_on_error() -> Iterator[None]:
    """Map library errors to the exit-code contract.

    Configuration and input problems exit 1; failures while computing exit 2.
    """
    try:
        yield
    except (ConfigError, CorpusFormatError, VocabularyError, FileNotFoundError) as e:
        log.debug("usage error", exc_info=True)
        fail(str(e), EXIT_USAGE)
    except DivergenceError as e:
        log.debug("divergence", exc_info=True)
        fail(f"training diverged at step {e.step} (last finite loss {e.last_finite_loss})", EXIT_RUNTIME)
    except (DataError, NumericError, ShapeError) as e:
        log.debug("runtime failure", exc_info=True)
        fail(str(e), EXIT_RUNTIME)


def load_experiment(
    config_path: Optional[Path],
    overrides: Optional[List[str]],
    seed: Optional[int] = None,
) -> TrainConfig:
    """Read, override and validate the experiment config.

    ``--seed`` sets both the corpus seed and the training seed.
    """
    items = list(overrides or [])
    if seed is not None:
        items += [f"training.seed={seed}", f"data.seed={seed}"]
    try:
        return config.load_config(config_path, items)
    except ConfigError as e:
        fail(str(e), EXIT_USAGE)


def run_dir(out: Optional[Path]) -> Path:
    """Resolve the run directory, creating it."""
    path = out or config.get_run_dir("default")
    path.mkdir(parents=True, exist_ok=True)
    return path


def parse_seeds(text: Optional[str]) -> List[int]:
    """Parse a comma-separated seed list."""
    if not text:
        return []
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        fail(f"--seeds must be comma-separated integers (got {text!r})", EXIT_USAGE)
