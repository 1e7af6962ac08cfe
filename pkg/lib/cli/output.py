"""Rich-based output helpers for the CLI."""

import json
from typing import Any, List, Sequence

from rich.console import Console
from rich.markup import escape
from rich.panel import Panel
from rich.table import Table

from ..encoder import LayerTrace
from ..metrics import ErrorBreakdown
from ..oracle import OracleReport
from ..trainer import MatrixRow

console = Console()
# Log records go here so stdout stays clean for results
err_console = Console(stderr=True)


def success(message: str) -> None:
    """Print a success message."""
    console.print(f"[green]✓[/green] {escape(message)}")


def error(message: str) -> None:
    """Print an error message."""
    console.print(f"[red]✗[/red] [red]ERROR:[/red] {escape(message)}")


def warning(message: str) -> None:
    """Print a warning message."""
    console.print(f"[yellow]![/yellow] [yellow]WARNING:[/yellow] {escape(message)}")


def info(message: str) -> None:
    """Print an info message."""
    console.print(f"[cyan]→[/cyan] {escape(message)}")


def header(title: str) -> None:
    """Print a section header."""
    console.print()
    console.print(f"[bold]=== {title} ===[/bold]")
    console.print()


def print_json(data: Any) -> None:
    """Print data as formatted JSON."""
    print(json.dumps(data, indent=2, default=str))


def print_panel(content: str, title: str = "", style: str = "cyan") -> None:
    """Print content in a panel."""
    console.print(Panel(content, title=title, border_style=style))


def _pct(rate: float) -> str:
    return f"{100 * rate:.2f}"


def print_corpus_summary(rows: List[dict]) -> None:
    """Print one line per generated split."""
    table = Table(title="Corpus", show_header=True, header_style="bold cyan")
    table.add_column("Split", style="cyan")
    table.add_column("Utterances", justify="right")
    table.add_column("Frames", justify="right")
    table.add_column("Rejected", justify="right", style="yellow")
    table.add_column("File", style="dim")
    for row in rows:
        table.add_row(row["split"], str(row["utterances"]), str(row["frames"]), str(row["rejected"]), row["path"])
    console.print(table)


def print_breakdown(summary: ErrorBreakdown, title: str = "Error breakdown") -> None:
    """Print WER and its sub/del/ins decomposition, in percent."""
    table = Table(title=title, show_header=True, header_style="bold cyan")
    for name in ("WER", "Sub", "Del", "Ins", "Ref tokens"):
        table.add_column(name, justify="right")
    table.add_row(
        _pct(summary.wer),
        _pct(summary.sub_rate),
        _pct(summary.del_rate),
        _pct(summary.ins_rate),
        str(summary.ref_len),
    )
    console.print(table)


def print_matrix(rows: Sequence[MatrixRow]) -> None:
    """Print the variant comparison; a range column appears with several seeds."""
    multi_seed = any(len(r.seeds) > 1 for r in rows)
    table = Table(title="WER (%)", show_header=True, header_style="bold cyan")
    table.add_column("Variant", style="cyan")
    for name in ("Dev", "Test", "Sub", "Del", "Ins"):
        table.add_column(name, justify="right")
    if multi_seed:
        table.add_column("Range", justify="right", style="dim")
    for row in rows:
        cells = [row.name, *(_pct(v) for v in (row.dev_wer, row.wer, row.sub_rate, row.del_rate, row.ins_rate))]
        if multi_seed:
            low, high = row.wer_range
            cells.append(f"{_pct(low)} to {_pct(high)}")
        table.add_row(*cells)
    console.print(table)


def print_oracle_report(report: OracleReport) -> None:
    """Print case counts per property."""
    table = Table(title=f"Oracle checks (seed {report.seed})", show_header=True, header_style="bold cyan")
    table.add_column("Property", style="cyan")
    table.add_column("Cases", justify="right")
    table.add_column("Failed", justify="right")
    table.add_column("Status")
    for prop in report.properties:
        status = "[green]pass[/green]" if prop else "[red]FAIL[/red]"
        table.add_row(prop.name, str(prop.cases), str(prop.failed), status)
    console.print(table)


def _path_text(path) -> str:
    return " ".join("_" if k == 0 else str(int(k)) for k in path)


def print_augment_trace(utt_id: str, operator: str, traces: Sequence[LayerTrace]) -> None:
    """Per conditioning layer: argmax path, what conditioning saw, and both collapses."""
    header(f"Augmentation: {operator} on {utt_id}")
    for trace in traces:
        lines = [
            f"[bold]argmax path:[/bold]      {_path_text(trace.argmax_path)}",
            f"[bold]conditioned path:[/bold] {_path_text(trace.conditioned_path)}",
            f"[bold]before:[/bold] {' '.join(str(k) for k in trace.before) or '(empty)'}",
            f"[bold]after:[/bold]  {' '.join(str(k) for k in trace.after) or '(empty)'}",
        ]
        if trace.time_spans:
            spans = ", ".join(f"frames {s}..{s + w - 1}" if w else "empty" for s, w in trace.time_spans)
            lines.append(f"[bold]time mask:[/bold] {spans}")
        if trace.feature_spans:
            spans = ", ".join(f"channels {s}..{s + w - 1}" if w else "empty" for s, w in trace.feature_spans)
            lines.append(f"[bold]feature mask:[/bold] {spans}")
        print_panel("\n".join(lines), title=f"Layer {trace.layer}")


def print_runs(runs: List[str]) -> None:
    """Print run directories that hold a config."""
    if not runs:
        console.print("[dim]No runs found[/dim]")
        return
    table = Table(title="Runs", show_header=True, header_style="bold cyan")
    table.add_column("Name", style="cyan")
    for name in runs:
        table.add_row(name)
    console.print(table)
