"""Train command implementation."""

from pathlib import Path
from typing import Optional

import typer
from rich.console import Console

from nbv_planner.config import resolve_config
from nbv_planner.errors import ErrorHandler
from nbv_planner.models import Architecture
from nbv_planner.net import forward_flops
from nbv_planner.persistence import (
    manifest_data,
    read_dataset,
    removed_on_failure,
    write_history_csv,
    write_manifest,
    write_weights,
)
from nbv_planner.training import HistoryRow, train

console = Console()


def train_command(
    dataset: str = typer.Option(..., "--dataset", "-d", help="Dataset file from gen-dataset"),
    arch: Architecture = typer.Option(Architecture.NBVNET, "--arch", help="Network layout"),
    epochs: Optional[int] = typer.Option(None, "--epochs", min=0, help="Epochs (default: 500)"),
    lr: Optional[float] = typer.Option(None, "--lr", help="Adam step size (default: 0.001)"),
    batch: Optional[int] = typer.Option(None, "--batch", min=1, help="Batch size (default: 200)"),
    keep_prob: Optional[float] = typer.Option(
        None, "--keep-prob", help="Dropout keep probability (default: 0.7)"
    ),
    seed: Optional[int] = typer.Option(None, "--seed", min=0, help="Training seed (default: 0)"),
    out: str = typer.Option("weights.nbvw", "--out", "-o", help="Weights output path"),
    history: Optional[str] = typer.Option(
        None, "--history", help="History CSV path (default: <out>.history.csv)"
    ),
    config: Optional[str] = typer.Option(None, "--config", "-c", help="Flat YAML config file"),
):
    """Train a network on a dataset and save the best weights and the epoch history."""
    history_path = history or str(Path(out).with_suffix(".history.csv"))
    manifest_path = str(Path(out).with_suffix(".manifest.yaml"))
    try:
        cfg = resolve_config(
            config,
            {
                "train.epochs": epochs,
                "train.learning_rate": lr,
                "train.batch_size": batch,
                "train.keep_prob": keep_prob,
                "train.seed": seed,
            },
        )
        data = read_dataset(dataset)
        console.print(
            f"Loaded {len(data.examples)} examples (edge {data.edge}, {data.num_classes} classes)"
        )

        def report(row: HistoryRow) -> None:
            if row.epoch == 1 or row.epoch % 10 == 0 or row.epoch == cfg.train.epochs:
                console.print(
                    f"  epoch {row.epoch}: loss {row.loss:.4f}, "
                    f"train {row.train_acc:.3f}, test {row.test_acc:.3f}"
                )

        params, rows = train(data.examples, arch, cfg.train, report, data.num_classes)
        with removed_on_failure([out, history_path, manifest_path]):
            write_weights(params, out)
            write_history_csv(rows, history_path)
            extra = {"dataset": dataset, "architecture": arch.value}
            write_manifest(
                manifest_data(cfg, "train", {"seed": cfg.train.seed}, extra=extra), manifest_path
            )

        best = max((row.test_acc for row in rows), default=0.0)
        cost = forward_flops(params, data.edge)
        console.print(
            f"[green]✓[/green] Wrote {arch.value} weights to {out} "
            f"(best test accuracy {best:.3f}, {cost:,} multiply-adds per grid)"
        )
        console.print(f"[green]✓[/green] Wrote history to {history_path}")
    except Exception as e:
        ErrorHandler.handle_exception(e, "train")
