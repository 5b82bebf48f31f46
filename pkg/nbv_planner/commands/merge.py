"""Merge command implementation."""

from typing import List

import typer
from rich.console import Console

from nbv_planner.errors import ErrorHandler
from nbv_planner.persistence import merge_datasets, removed_on_failure

console = Console()


def merge_command(
    inputs: List[str] = typer.Argument(..., help="Dataset files to concatenate"),
    out: str = typer.Option(..., "--out", "-o", help="Merged dataset path"),
):
    """Concatenate datasets that share grid edge and class count."""
    try:
        with removed_on_failure([out]):
            total = merge_datasets(inputs, out)
        console.print(f"[green]✓[/green] Merged {len(inputs)} files, {total} examples into {out}")
    except Exception as e:
        ErrorHandler.handle_exception(e, "merge")
