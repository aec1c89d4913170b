"""
The edgeworth command line.

    edgeworth simulate CONFIG [--seed N] [-o DIR] [-w WORKERS] [-v]
    edgeworth sweep CONFIG ...
    edgeworth analyze SNAPSHOT [REFERENCE]
    edgeworth validate-config CONFIG

Exit codes: 0 success, 2 config error, 3 simulation error, 4 I/O error.
"""

import logging
from pathlib import Path
from typing import Optional

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table
from typing_extensions import Annotated

from edgeworth.config import AnalysisConfig, load_config
from edgeworth.errors import ArtifactError, ConfigError, EdgeworthError
from edgeworth.experiments import Report, analyze_snapshot, run_experiment, run_sweep

logger = logging.getLogger(__name__)

app = typer.Typer(help="Kinetic simulation of two-good Edgeworth box markets.", no_args_is_help=True)
console = Console()
errors = Console(stderr=True)

SeedOption = Annotated[Optional[int], typer.Option("--seed", envvar="EDGEWORTH_SEED", help="Master seed.")]
OutputOption = Annotated[Optional[Path], typer.Option("--output-dir", "-o", envvar="EDGEWORTH_OUTPUT_DIR",
                                                      help="Where the artifacts go.")]
WorkersOption = Annotated[Optional[int], typer.Option("--workers", "-w", min=1, help="Processes for sweep points.")]
VerboseOption = Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging.")]


def _setup_logging(verbose: bool):
    # only the package logger, so imported libraries keep their own settings
    package = logging.getLogger("edgeworth")
    package.handlers = [RichHandler(console=errors, show_path=False, rich_tracebacks=False)]
    package.setLevel(logging.DEBUG if verbose else logging.INFO)
    package.propagate = False


def _report_table(report: Report, title: str) -> Table:
    table = Table(title=title)
    table.add_column("section", style="cyan")
    table.add_column("key")
    table.add_column("value", justify="right")
    for section, entries in report.items():
        for key, value in entries.items():
            if isinstance(value, float):
                value = f"{value:.6g}"
            elif isinstance(value, (tuple, list)):
                value = ", ".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in value)
            table.add_row(section, key, str(value))
            section = ""
    return table


def _fail(error: Exception) -> typer.Exit:
    if isinstance(error, ConfigError):
        table = Table(title="configuration problems", style="red")
        table.add_column("where")
        table.add_column("problem")
        for issue in error.issues:
            table.add_row(issue.location, issue.message)
        errors.print(table)
        return typer.Exit(code=error.exit_code)
    if isinstance(error, EdgeworthError):
        errors.print(f"[red]error:[/red] {error}")
        return typer.Exit(code=error.exit_code)
    errors.print(f"[red]I/O error:[/red] {error}")
    return typer.Exit(code=ArtifactError.exit_code)


def _load(config: Path, seed, output_dir, workers):
    return load_config(config).with_overrides(seed=seed, output_dir=output_dir, workers=workers)


@app.command()
def simulate(config: Path, seed: SeedOption = None, output_dir: OutputOption = None,
             workers: WorkersOption = None, verbose: VerboseOption = False):
    """Run the experiment described by CONFIG."""
    _setup_logging(verbose)
    try:
        cfg = _load(config, seed, output_dir, workers)
        result = run_experiment(cfg)
    except (EdgeworthError, OSError) as e:
        raise _fail(e)
    console.print(_report_table(result.report, f"{result.kind} (seed {cfg.seed})"))
    typer.echo(f"artifacts written to {result.output_dir}")


@app.command()
def sweep(config: Path, seed: SeedOption = None, output_dir: OutputOption = None,
          workers: WorkersOption = None, verbose: VerboseOption = False):
    """Quasi-invariant sweep over the epsilons of CONFIG, whatever its experiment kind."""
    _setup_logging(verbose)
    try:
        cfg = _load(config, seed, output_dir, workers)
        result = run_sweep(cfg)
    except (EdgeworthError, OSError) as e:
        raise _fail(e)
    console.print(_report_table(result.report, f"quasi-invariant sweep (seed {cfg.seed})"))
    typer.echo(f"artifacts written to {result.output_dir}")


@app.command()
def analyze(snapshot: Path,
            reference: Annotated[Optional[Path], typer.Argument(help="Second snapshot for the d_s distance.")] = None,
            s: Annotated[Optional[float], typer.Option(help="Metric exponent; chosen from the means if unset.")] = None,
            tail_fraction: Annotated[float, typer.Option(help="Top fraction used by the Hill estimator.")] = 0.05,
            seed: SeedOption = None, verbose: VerboseOption = False):
    """Conservation totals, concentration, tail index and d_s of a stored snapshot."""
    _setup_logging(verbose)
    try:
        settings = AnalysisConfig(s=s, tail_fraction=tail_fraction)
        report = analyze_snapshot(snapshot, reference, settings, seed=seed or 0)
    except (EdgeworthError, OSError) as e:
        raise _fail(e)
    console.print(_report_table(report, str(snapshot)))


@app.command("validate-config")
def validate_config(config: Path, verbose: VerboseOption = False):
    """Check CONFIG and list every problem found."""
    _setup_logging(verbose)
    try:
        cfg = load_config(config)
    except (EdgeworthError, OSError) as e:
        raise _fail(e)
    summary = {
        "config": {
            "experiment": str(cfg.experiment),
            "agents": cfg.population.n,
            "lambda": cfg.trade.lam,
            "alpha": cfg.trade.alpha,
            "noise": f"{cfg.trade.noise.kind} (delta {cfg.trade.noise.delta:g})",
            "horizon": cfg.time.horizon,
            "seed": cfg.seed,
            "hash": cfg.config_hash()[:16],
        }
    }
    console.print(_report_table(summary, f"{config} is valid"))


def main():
    app()


if __name__ == "__main__":
    main()
