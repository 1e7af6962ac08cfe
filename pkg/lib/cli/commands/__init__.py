"""CLI commands module.

Re-exports all command functions.
"""

from .data import gen_data
from .diagnostics import augment_demo, oracle_check
from .experiment import eval_cmd, matrix_cmd, train_cmd

__all__ = [
    "gen_data",
    "train_cmd",
    "eval_cmd",
    "matrix_cmd",
    "augment_demo",
    "oracle_check",
]
