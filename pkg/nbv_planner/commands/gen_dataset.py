"""Gen-dataset command implementation."""

from collections import Counter
from pathlib import Path
from typing import Optional

import numpy as np
import typer
from rich.console import Console
from rich.table import Table

from nbv_planner.config import parse_objects, resolve_config, worker_count
from nbv_planner.errors import ErrorHandler
from nbv_planner.oracle import RunRecord, generate_runs, prepare_scenario, select_initial_views
from nbv_planner.persistence import (
    load_object,
    manifest_data,
    removed_on_failure,
    write_dataset,
    write_manifest,
    write_xyz,
)

console = Console()


def _print_runs(runs: list[RunRecord], labels: np.ndarray, num_classes: int) -> None:
    lengths = Counter(len(run.views) for run in runs)
    table = Table(title="Run lengths")
    table.add_column("iterations", justify="right")
    table.add_column("runs", justify="right")
    for length in sorted(lengths):
        table.add_row(str(length), str(lengths[length]))
    console.print(table)

    histogram = np.bincount(labels, minlength=num_classes)
    table = Table(title="Labels")
    table.add_column("class", justify="right")
    table.add_column("examples", justify="right")
    for label, count in enumerate(histogram):
        table.add_row(str(label), str(int(count)))
    console.print(table)


def gen_dataset_command(
    objects: str = typer.Option(
        ..., "--objects", help="Comma-separated kind:seed entries or PLY mesh paths"
    ),
    views: Optional[int] = typer.Option(
        None, "--views", min=1, help="Search space size (default: 14)"
    ),
    classes: Optional[int] = typer.Option(
        None, "--classes", min=1, max=255, help="Number of NBV classes (default: 14)"
    ),
    scov: Optional[float] = typer.Option(None, "--scov", help="Stop coverage (default: 0.8)"),
    max_iter: Optional[int] = typer.Option(
        None, "--max-iter", min=1, help="Iterations per run (default: 10)"
    ),
    gap: Optional[float] = typer.Option(
        None, "--gap", help="Correspondence radius in meters (default: 0.005)"
    ),
    overlap: Optional[float] = typer.Option(
        None, "--overlap", help="Minimum overlap fraction (default: 0.5)"
    ),
    initial_views: Optional[int] = typer.Option(
        None, "--initial-views", min=1, help="Initial views per object (default: all)"
    ),
    audit: Optional[str] = typer.Option(
        None, "--audit", help="Directory for accumulated-cloud XYZ sidecars"
    ),
    out: str = typer.Option("dataset.nbvd", "--out", "-o", help="Dataset output path"),
    manifest: Optional[str] = typer.Option(
        None, "--manifest", help="Manifest path (default: <out>.manifest.yaml)"
    ),
    config: Optional[str] = typer.Option(None, "--config", "-c", help="Flat YAML config file"),
):
    """Simulate oracle-driven reconstructions and save the labeled grids."""
    manifest_path = manifest or str(Path(out).with_suffix(".manifest.yaml"))
    try:
        cfg = resolve_config(
            config,
            {
                "reconstruction.search_views": views,
                "reconstruction.class_views": classes,
                "reconstruction.s_cov": scov,
                "reconstruction.max_iter": max_iter,
                "reconstruction.initial_view_count": initial_views,
                "metric.gap": gap,
                "metric.thresh1": overlap,
            },
        )
        specs = parse_objects(objects)
        workers = worker_count()
        rec = cfg.reconstruction

        with removed_on_failure([out, manifest_path]) as outputs:
            all_runs: list[RunRecord] = []
            examples = []
            for spec in specs:
                mesh = load_object(spec, cfg.scene)
                scenario = prepare_scenario(mesh, cfg.scene, rec, spec.object_id, workers)
                starts = select_initial_views(scenario.perceptions.views, rec.initial_view_count)
                runs = generate_runs(scenario, starts, workers, keep_clouds=audit is not None)
                console.print(
                    f"{spec.label}: {len(scenario.w_obj)} ground-truth points, {len(runs)} runs"
                )
                for run in runs:
                    console.print(
                        f"  run {run.run_id} from view {run.initial_view}: "
                        f"{len(run.views)} iterations, coverage {run.final_coverage:.3f} "
                        f"({run.termination.value})"
                    )
                    for example in run.examples:
                        if audit is not None and example.p_acu is not None:
                            sidecar = Path(audit) / (
                                f"obj{example.object_id}_run{example.run_id}"
                                f"_it{example.iteration}.xyz"
                            )
                            outputs.append(sidecar)
                            write_xyz(example.p_acu, sidecar)
                        examples.append(example)
                if not any(run.examples for run in runs):
                    ErrorHandler.print_warning(f"{spec.label} contributed no examples")
                all_runs += runs

            write_dataset(examples, out, cfg.grid.edge, rec.class_views)
            data = manifest_data(
                cfg, "gen-dataset", {}, specs, {"examples": len(examples), "dataset": out}
            )
            write_manifest(data, manifest_path)

        labels = np.array([e.label for e in examples], dtype=np.int64)
        _print_runs(all_runs, labels, rec.class_views)
        console.print(f"[green]✓[/green] Wrote {len(examples)} examples to {out}")
        console.print(f"[green]✓[/green] Wrote manifest to {manifest_path}")
    except Exception as e:
        ErrorHandler.handle_exception(e, "gen-dataset")
