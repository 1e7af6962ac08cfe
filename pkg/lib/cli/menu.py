"""Interactive menu for the CLI."""

import questionary
from questionary import Choice, Separator

from .prompts import STYLE


def interactive_menu() -> None:
    """Show interactive menu and run selected command."""
    from .output import console

    console.print()
    console.print("[bold cyan]=== ctcaug ===[/bold cyan]")
    console.print("[dim]Self-conditioned CTC with augmented intermediate predictions[/dim]")
    console.print()

    action = questionary.select(
        "What would you like to do?",
        choices=[
            Choice("Generate corpus", value="gen-data"),
            Choice("Train a model", value="train"),
            Choice("Evaluate a run", value="eval"),
            Choice("Run the comparison matrix", value="matrix"),
            Separator(),
            Choice("Inspect an augmentation", value="augment-demo"),
            Choice("Run oracle checks", value="oracle-check"),
            Separator(),
            Choice("List runs", value="list"),
            Separator(),
            Choice("Exit", value="exit"),
        ],
        style=STYLE,
    ).ask()

    if action is None or action == "exit":
        return

    # Import and run the appropriate command
    from . import commands, output, prompts
    from .. import config

    if action == "list":
        output.print_runs(config.list_runs())
        return

    out = None
    if action in ("gen-data", "train", "eval", "matrix", "augment-demo"):
        out = prompts.select_run(config.list_runs(), action)
        if out is None:
            return

    if action == "gen-data":
        commands.gen_data(out=out)
    elif action == "train":
        commands.train_cmd(out=out)
    elif action == "eval":
        commands.eval_cmd(out=out)
    elif action == "matrix":
        preset = prompts.select_preset()
        if preset:
            commands.matrix_cmd(out=out, preset=preset)
    elif action == "augment-demo":
        operator = prompts.select_operator()
        utt_id = prompts.text("Utterance id", default="train-00000")
        if operator and utt_id:
            commands.augment_demo(utt_id, overrides=[f"augmentation.operator={operator}"], out=out)
    elif action == "oracle-check":
        commands.oracle_check()
