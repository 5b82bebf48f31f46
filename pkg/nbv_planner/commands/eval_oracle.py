"""Eval-oracle command implementation."""

from typing import Optional

import typer
from rich.console import Console

from nbv_planner.config import parse_objects, resolve_config, worker_count
from nbv_planner.errors import ErrorHandler, InvalidArgumentError
from nbv_planner.grid import VoxelState, state_counts
from nbv_planner.oracle import ReconstructionState, prepare_scenario
from nbv_planner.persistence import load_object, removed_on_failure, write_candidates_csv

console = Console()


def eval_oracle_command(
    object_: str = typer.Option(..., "--object", help="One kind:seed entry or a PLY mesh path"),
    views: Optional[int] = typer.Option(
        None, "--views", min=1, help="Search space size (default: 14)"
    ),
    initial: int = typer.Option(0, "--initial", min=0, help="Id of the first view"),
    steps: int = typer.Option(
        0, "--steps", min=0, help="Oracle moves to make before the audited call"
    ),
    out: str = typer.Option("candidates.csv", "--out", "-o", help="Candidate table path"),
    config: Optional[str] = typer.Option(None, "--config", "-c", help="Flat YAML config file"),
):
    """Dump the full candidate table of one oracle call."""
    try:
        cfg = resolve_config(config, {"reconstruction.search_views": views})
        specs = parse_objects(object_)
        if len(specs) != 1:
            raise InvalidArgumentError(f"eval-oracle takes one object, got {len(specs)}")
        spec = specs[0]
        mesh = load_object(spec, cfg.scene)
        scenario = prepare_scenario(mesh, cfg.scene, cfg.reconstruction, 0, worker_count())
        search = scenario.perceptions.views
        if initial >= len(search):
            raise InvalidArgumentError(
                f"initial view {initial} is not in a search space of {len(search)} views"
            )

        # Integrate the initial view and the oracle's picks
        state = ReconstructionState.start(scenario)
        state.integrate(scenario, search[initial])
        if state.p_acu.is_empty:
            raise InvalidArgumentError(f"view {initial} does not see {spec.label}")
        for _ in range(steps):
            result = state.next_best_view(scenario)
            if not result.feasible or result.nbv is None:
                break
            state.integrate(scenario, result.nbv)

        result = state.next_best_view(scenario)
        selected = result.nbv.id if result.nbv is not None else None
        with removed_on_failure([out]):
            write_candidates_csv(result.per_candidate, selected, out)

        console.print(
            f"{spec.label}: views {state.visited}, coverage {state.coverage:.3f}, "
            f"{len(state.p_acu)} accumulated points"
        )
        voxels = state_counts(state.grid)
        console.print(
            f"Grid: {voxels[VoxelState.OCCUPIED]} occupied, {voxels[VoxelState.FREE]} free, "
            f"{voxels[VoxelState.UNKNOWN]} unknown voxels"
        )
        if selected is None:
            ErrorHandler.print_warning("no feasible candidate")
        else:
            console.print(f"Next best view: {selected} (gain {result.delta:.4f})")
        console.print(f"[green]✓[/green] Wrote {len(result.per_candidate)} candidates to {out}")
    except Exception as e:
        ErrorHandler.handle_exception(e, "eval-oracle")
