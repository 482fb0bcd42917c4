"""
Utility functions for urfdyn.

Small helpers shared by the command handlers:
  - Package version lookup (recorded in every manifest)
  - Rich tables and panels summarizing a run on the console

Pure helpers with no state; the only side effect is console output.
"""

from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

from rich import box
from rich.panel import Panel
from rich.table import Table

from .console import console


def get_version() -> str:
    """Installed package version, or "dev" when running from a source checkout."""
    try:
        return version("urfdyn")
    except PackageNotFoundError:
        return "dev"


def format_cost(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.6g}"


def print_costs(costs: dict[str, float | None], title: str = "Trajectory cost") -> None:
    """Best / mean / worst (and true, when known) cost table."""
    table = Table(title=title, box=box.ROUNDED, expand=False)
    table.add_column("bound", style="cyan")
    table.add_column("J", justify="right")
    for key in ("best", "mean", "true", "worst"):
        if key in costs:
            table.add_row(key, format_cost(costs[key]))
    console.print(table)


def print_written(root: Path, files: list[Path]) -> None:
    """Panel listing the files a command wrote, relative to the output dir."""
    names = "\n".join(f"[dim]{path.relative_to(root)}[/dim]" for path in sorted(files))
    console.print(
        Panel(names or "[dim]nothing written[/dim]", title=f"[green]✓ {root}[/green]", box=box.ROUNDED, expand=False)
    )
