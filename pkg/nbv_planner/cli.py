import typer
from rich.console import Console

from nbv_planner import __version__
from nbv_planner.commands import eval_oracle, gen_dataset, gen_views, merge, reconstruct, train

app = typer.Typer(
    name="nbv-planner",
    help="Simulate object reconstructions, learn next-best-view classes and evaluate policies",
    no_args_is_help=True,
)
console = Console()


def version_callback(value: bool):
    if value:
        console.print(f"nbv-planner version: {__version__}")
        raise typer.Exit()


@app.callback()
def main(
    version: bool = typer.Option(
        None,
        "--version",
        "-v",
        help="Show version and exit",
        callback=version_callback,
        is_eager=True,
    ),
):
    pass


app.command("gen-views")(gen_views.gen_views_command)
app.command("gen-dataset")(gen_dataset.gen_dataset_command)
app.command("train")(train.train_command)
app.command("reconstruct")(reconstruct.reconstruct_command)
app.command("eval-oracle")(eval_oracle.eval_oracle_command)
app.command("merge")(merge.merge_command)


if __name__ == "__main__":
    app()
