"""Gen-views command implementation."""

from typing import Optional

import typer
from rich.console import Console

from nbv_planner.config import resolve_config
from nbv_planner.errors import ErrorHandler
from nbv_planner.persistence import removed_on_failure, write_views_csv
from nbv_planner.scene import generate_view_sphere

console = Console()


def gen_views_command(
    count: int = typer.Option(14, "--count", "-n", min=1, help="Number of views"),
    radius: Optional[float] = typer.Option(
        None, "--radius", "-r", help="Sphere radius in meters (default: scene.sphere_radius)"
    ),
    hemisphere: bool = typer.Option(
        False, "--hemisphere", help="Only place views on the upper half (z >= 0)"
    ),
    out: str = typer.Option("views.csv", "--out", "-o", help="Output CSV path"),
    config: Optional[str] = typer.Option(None, "--config", "-c", help="Flat YAML config file"),
):
    """Generate a view sphere and write it as CSV (id,x,y,z,alpha,beta,gamma)."""
    try:
        cfg = resolve_config(config, {"scene.sphere_radius": radius})
        views = generate_view_sphere(count, cfg.scene.sphere_radius, hemisphere)
        with removed_on_failure([out]):
            write_views_csv(views, out)
        console.print(
            f"[green]✓[/green] Wrote {len(views)} views (radius {views.radius:g}) to {out}"
        )
    except Exception as e:
        ErrorHandler.handle_exception(e, "gen-views")
