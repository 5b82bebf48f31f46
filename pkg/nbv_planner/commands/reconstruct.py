"""Reconstruct command implementation."""

from enum import Enum
from pathlib import Path
from typing import Optional

import typer
from rich.console import Console
from rich.table import Table

from nbv_planner.config import parse_objects, resolve_config, worker_count
from nbv_planner.errors import ErrorHandler, InvalidArgumentError
from nbv_planner.loop import (
    EvalSummary,
    NetworkPolicy,
    OraclePolicy,
    Predictor,
    RandomPolicy,
    compare_policies,
    episode_scenario,
)
from nbv_planner.models import Architecture
from nbv_planner.persistence import (
    load_object,
    manifest_data,
    read_weights,
    removed_on_failure,
    write_comparison_csv,
    write_episode_csv,
    write_manifest,
    write_summary_csv,
)

console = Console()


class PolicyName(str, Enum):
    NETWORK = "network"
    RANDOM = "random"
    ORACLE = "oracle"


def _summary_table(summaries: dict[str, EvalSummary]) -> Table:
    table = Table(title="Final coverage")
    table.add_column("object")
    table.add_column("policy")
    table.add_column("mean", justify="right")
    table.add_column("std", justify="right")
    table.add_column("iterations", justify="right")
    for policy, summary in summaries.items():
        for row in summary.rows:
            table.add_row(
                row.name,
                policy,
                f"{row.mean_cov:.3f}",
                f"{row.std_cov:.3f}",
                f"{row.mean_iters:.1f}",
            )
    return table


def reconstruct_command(
    objects: str = typer.Option(
        ..., "--object", "--objects", help="Comma-separated kind:seed entries or PLY mesh paths"
    ),
    weights: Optional[str] = typer.Option(
        None, "--weights", "-w", help="Weights file (required for the network policy)"
    ),
    arch: Architecture = typer.Option(
        Architecture.NBVNET, "--arch", help="Architecture the weights were trained with"
    ),
    classes: Optional[int] = typer.Option(
        None, "--classes", min=1, max=255, help="Number of NBV classes (default: 14)"
    ),
    episodes: int = typer.Option(10, "--episodes", min=1, help="Episodes per object"),
    seed: int = typer.Option(0, "--seed", min=0, help="Seed for initial poses and policies"),
    policy: PolicyName = typer.Option(PolicyName.NETWORK, "--policy", help="Next-view policy"),
    compare_random: bool = typer.Option(
        False, "--compare-random", help="Also run the random policy on the same initial poses"
    ),
    out: str = typer.Option("reconstruction", "--out", "-o", help="Output directory"),
    config: Optional[str] = typer.Option(None, "--config", "-c", help="Flat YAML config file"),
):
    """Run closed-loop reconstructions and write per-episode and summary CSVs."""
    out_dir = Path(out)
    try:
        cfg = resolve_config(config, {"reconstruction.class_views": classes})
        specs = parse_objects(objects)
        workers = worker_count()

        predictors: list[Predictor] = []
        if policy == PolicyName.NETWORK:
            if weights is None:
                raise InvalidArgumentError("the network policy needs --weights")
            params = read_weights(weights, expected=arch, keep=cfg.train.keep_prob)
            predictors.append(NetworkPolicy(params))
        elif policy == PolicyName.ORACLE:
            predictors.append(OraclePolicy())
        else:
            predictors.append(RandomPolicy())
        if compare_random and policy != PolicyName.RANDOM:
            predictors.append(RandomPolicy())

        scenarios = []
        for spec in specs:
            mesh = load_object(spec, cfg.scene)
            scenarios.append(
                episode_scenario(mesh, cfg.scene, cfg.reconstruction, spec.object_id, workers)
            )
        names = {spec.object_id: spec.label for spec in specs}
        summaries = compare_policies(scenarios, predictors, episodes, seed, names, workers)

        summary_path = out_dir / "summary.csv"
        comparison_path = out_dir / "comparison.csv"
        manifest_path = out_dir / "manifest.yaml"
        with removed_on_failure([summary_path, comparison_path, manifest_path]) as outputs:
            for name, summary in summaries.items():
                for log in summary.logs:
                    path = out_dir / "episodes" / f"{name}_obj{log.object_id}_ep{log.episode}.csv"
                    outputs.append(path)
                    write_episode_csv(log, path)
            write_summary_csv(summaries[predictors[0].name], summary_path)
            if len(summaries) > 1:
                write_comparison_csv(summaries, comparison_path)
            extra = {"policy": policy.value, "episodes": episodes, "weights": weights or ""}
            if policy == PolicyName.NETWORK:
                extra["architecture"] = arch.value
            data = manifest_data(cfg, "reconstruct", {"seed": seed}, specs, extra)
            write_manifest(data, manifest_path)

        console.print(_summary_table(summaries))
        console.print(f"[green]✓[/green] Wrote episode logs and summary to {out_dir}")
    except Exception as e:
        ErrorHandler.handle_exception(e, "reconstruct")
