"""Typer-based CLI for ctcaug."""

import logging
import sys
from typing import Annotated

import click
import typer
from rich.logging import RichHandler

from .commands import augment_demo, eval_cmd, gen_data, matrix_cmd, oracle_check, train_cmd
from .commands.helpers import EXIT_USAGE
from .menu import interactive_menu
from .output import err_console

app = typer.Typer(
    name="ctcaug",
    help="Self-conditioned CTC with augmented intermediate predictions.",
    no_args_is_help=False,
    rich_markup_mode="rich",
)

# Register commands
app.command("gen-data", help="Generate the synthetic train/dev/test corpora")(gen_data)
app.command("train", help="Train a model and average its best checkpoints")(train_cmd)
app.command("eval", help="Greedy-decode a split and report WER")(eval_cmd)
app.command("matrix", help="Compare augmentation variants on one corpus")(matrix_cmd)
app.command("augment-demo", help="Show an operator's effect on intermediate predictions")(augment_demo)
app.command("oracle-check", help="Run the self-check suite")(oracle_check)

# Aliases (hidden from help)
app.command("gen", hidden=True)(gen_data)
app.command("oracle", hidden=True)(oracle_check)


def setup_logging(verbose: bool = False) -> None:
    """Send library log records to stderr through rich."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=err_console, show_path=False)],
        force=True,
    )


@app.callback(invoke_without_command=True)
def callback(
    ctx: typer.Context,
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging on stderr")] = False,
) -> None:
    """Show interactive menu if no command is provided."""
    setup_logging(verbose)
    if ctx.invoked_subcommand is None:
        interactive_menu()


def main() -> None:
    """Console entry point; usage errors exit 1 like configuration errors."""
    try:
        code = app(standalone_mode=False)
    except click.exceptions.Abort:
        err_console.print("Aborted.")
        sys.exit(EXIT_USAGE)
    except click.ClickException as e:
        e.show()
        sys.exit(EXIT_USAGE)
    sys.exit(code if isinstance(code, int) else 0)
