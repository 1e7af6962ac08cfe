"""Questionary-based interactive prompts."""

import re
from pathlib import Path
from typing import List, Optional, Tuple

import questionary
from questionary import Choice, Style

from .. import config

# Custom style for consistent look
STYLE = Style([
    ("qmark", "fg:cyan bold"),
    ("question", "bold"),
    ("answer", "fg:green"),
    ("pointer", "fg:cyan bold"),
    ("highlighted", "fg:cyan bold"),
    ("selected", "fg:green"),
    ("separator", "fg:gray"),
    ("instruction", "fg:gray"),
])

RUN_NAME = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")


def is_valid_run_name(name: str) -> bool | str:
    """Run names become directory names under runs/."""
    return True if RUN_NAME.fullmatch(name) else "Use letters, digits, '.', '_' or '-'"


def text(
    message: str,
    default: str = "",
    required: bool = True,
    validate: Optional[callable] = None,
) -> Optional[str]:
    """Prompt for text input."""

    def validator(val: str) -> bool | str:
        if required and not val.strip():
            return "This field is required"
        if validate and val.strip():
            result = validate(val.strip())
            if result is not True and result:
                return result
        return True

    result = questionary.text(
        message,
        default=default,
        validate=validator,
        style=STYLE,
    ).ask()

    return result.strip() if result else None


def select(
    message: str,
    choices: List[Tuple[str, str]],
    default: Optional[str] = None,
) -> Optional[str]:
    """Prompt to select from choices.

    Args:
        message: The prompt message
        choices: List of (value, label) tuples
        default: Default value to select

    Returns:
        Selected value or None if cancelled
    """
    choice_objects = [Choice(title=label, value=value) for value, label in choices]

    result = questionary.select(
        message,
        choices=choice_objects,
        default=default,
        style=STYLE,
    ).ask()

    return result


def select_run(runs: List[str], action: str = "use") -> Optional[Path]:
    """Pick an existing run directory or name a new one."""
    choices = [(name, name) for name in runs]
    choices.append(("new", "[New run]"))
    selected = select(f"Select run to {action}:", choices)
    if selected is None:
        return None
    if selected == "new":
        selected = text("Run name", default="default", validate=is_valid_run_name)
        if not selected:
            return None
    return config.get_run_dir(selected)


def select_preset() -> Optional[str]:
    """Prompt for a matrix preset."""
    return select(
        "Select variant set:",
        [
            ("operators", "Baselines and the five operators"),
            ("position", "Time masking: encoder feature vs conditioning feature"),
        ],
    )


def select_operator() -> Optional[str]:
    """Prompt for one augmentation operator."""
    return select("Select operator:", [(op, op) for op in config.OPERATORS])
