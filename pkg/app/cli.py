import json
import os
from pathlib import Path
import click
from pydantic import ValidationError
from app.config import settings
from app.database.storage import TABLE_FORMATS, storage
from app.models.schemas import ExperimentConfig, SolverConfig
from app.services.exceptions import SolverError
from app.services.experiments import run_experiment
from app.services.linear_model import least_squares_solution, scale_invariant_solution
from app.services.logging import logger
from app.services.total_projections import solve as solve_system

"""
Command Line Interface for the Normalized Projections Application.

`solve` runs the Total Projections iteration on a system file, `experiment` runs one of the
experiments and writes its report. Input files are read where the user points; outputs go to
the --out directory.

Exit codes are 0 on success, 1 on invalid input and 2 when a run-time check of an experiment
fails. Click reports its own usage errors with 2 as well.
"""

CHECK_FAILED = 2


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as f:
            values = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise click.ClickException(f"Cannot read config {path}: {e}")
    if not isinstance(values, dict):
        raise click.ClickException(f"Config {path} must hold a JSON object")
    return values


def _run_experiment(ctx: click.Context, name: str, config_path: str | None, **options):
    values = _load_config(config_path)
    values.pop("name", None)
    if ctx.obj["seed"] is not None:
        values["seed"] = ctx.obj["seed"]
    values.update({k: v for k, v in options.items() if v is not None})
    values.setdefault("out", ctx.obj["out"])
    try:
        cfg = ExperimentConfig.for_experiment(name, **values)
        report = run_experiment(cfg)
    except (ValidationError, SolverError) as e:
        logger.error(f"Experiment {name} rejected: {str(e)}")
        raise click.ClickException(str(e))

    paths = storage(cfg.out, fmt=ctx.obj["fmt"]).write_report(report)
    for path in paths:
        click.echo(f"wrote {path}")
    click.echo(f"{name}: {report.wall_time:.2f}s, config {report.config_hash[:12]}")
    if report.failures:
        for failure in report.failures:
            click.echo(f"FAILED: {failure}", err=True)
        ctx.exit(CHECK_FAILED)


@click.group()
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.option("--seed", type=int, default=None, help="Root seed, overriding config files.")
@click.option("--format", "fmt", type=click.Choice(TABLE_FORMATS), default="csv", show_default=True,
              help="Format of written tables.")
@click.pass_context
def main(ctx: click.Context, out: str | None, seed: int | None, fmt: str):
    """Scale-invariant Total Projections solver and normalized value estimators."""
    ctx.ensure_object(dict)
    ctx.obj.update(out=out or settings.OUTPUT_DIR, seed=seed, fmt=fmt)


@main.command()
@click.argument("system_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(["batch", "stochastic"]), default="stochastic", show_default=True)
@click.option("--step-rule", type=click.Choice(["curvature", "fixed"]), default="curvature", show_default=True)
@click.option("--alpha", type=float, default=1.0, show_default=True, help="Step of the fixed rule.")
@click.option("--beta", type=float, default=settings.DEFAULT_BETA, show_default=True)
@click.option("--p", type=float, default=settings.DEFAULT_P, show_default=True, help="Step decay exponent.")
@click.option("--tau", type=int, default=1, show_default=True, help="Rows per stochastic step.")
@click.option("--iters", type=int, default=10_000, show_default=True)
@click.option("--epsilon-guard", type=float, default=settings.EPSILON_GUARD, show_default=True)
@click.option("--no-decay", is_flag=True, help="Keep the curvature step undamped.")
@click.pass_context
def solve(ctx, system_csv, mode, step_rule, alpha, beta, p, tau, iters, epsilon_guard, no_decay):
    """Solve the system in SYSTEM_CSV (columns phi_0..phi_{n-1},v[,d])."""
    seed = settings.DEFAULT_SEED if ctx.obj["seed"] is None else ctx.obj["seed"]
    try:
        cfg = SolverConfig(
            mode=mode, step_rule=step_rule, alpha=alpha, beta=beta, p=p, tau=tau,
            max_iters=iters, epsilon_guard=epsilon_guard, step_decay=not no_decay, seed=seed,
        )
        store = storage(ctx.obj["out"], fmt=ctx.obj["fmt"])
        system = store.read_system(os.path.abspath(system_csv))
        w_star = scale_invariant_solution(system)
        w, trace = solve_system(system, cfg, w_star=w_star)
        w_l = least_squares_solution(system)
    except (ValidationError, SolverError) as e:
        logger.error(f"Solve of {system_csv} rejected: {str(e)}")
        raise click.ClickException(str(e))

    path = store.write_trace(trace, f"{Path(system_csv).stem}_trace.{store.fmt}")
    click.echo(json.dumps({
        "w": w.tolist(),
        "scale_invariant_solution": w_star.tolist(),
        "least_squares_solution": w_l.tolist(),
        "final_err": float(trace.errors[-1]),
        "skipped_steps": trace.skipped_steps,
    }))
    click.echo(f"wrote {path}")


@main.group()
def experiment():
    """Run one of the experiments and write its report."""


_config_option = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
    help="JSON file with ExperimentConfig fields.",
)


@experiment.command()
@_config_option
@click.option("--m", type=int, default=None, help="Number of states.")
@click.option("--mu", type=float, default=None, help="Feature mean.")
@click.option("--sigma", type=float, default=None, help="Feature standard deviation.")
@click.option("--p", "p_outlier", type=float, default=None, help="Outlier feature multiplier.")
@click.option("--r", type=float, default=None, help="Constant reward.")
@click.option("--gamma", type=float, default=None)
@click.option("--reps", "repetitions", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
def outlier(ctx, config_path, **options):
    """Per-state errors of w^M and w^L on the outlier chain."""
    _run_experiment(ctx, "outlier", config_path, **options)


@experiment.command()
@_config_option
@click.option("--m", type=int, default=None)
@click.option("--n", type=int, default=None)
@click.option("--iters", "iterations", type=int, default=None)
@click.option("--beta", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
def steps(ctx, config_path, **options):
    """Plain TP against the curvature step, with and without momentum."""
    _run_experiment(ctx, "steps", config_path, **options)


@experiment.command()
@_config_option
@click.option("--m", type=int, default=None)
@click.option("--n", type=int, default=None)
@click.option("--iters", "iterations", type=int, default=None)
@click.option("--reps", "repetitions", type=int, default=None)
@click.option("--beta", "betas", type=float, multiple=True, help="Repeat for each beta of the sweep.")
@click.option("--seed", type=int, default=None)
@click.pass_context
def momentum(ctx, config_path, betas, **options):
    """Heavy-ball momentum sweep."""
    _run_experiment(ctx, "momentum", config_path, betas=list(betas) or None, **options)


@experiment.command()
@_config_option
@click.option("--m", type=int, default=None)
@click.option("--n", type=int, default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--iters", "iterations", type=int, default=None)
@click.option("--reps", "repetitions", type=int, default=None)
@click.option("--beta", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
def rl(ctx, config_path, **options):
    """Normalized Monte Carlo and TD(0) against their fixed points."""
    _run_experiment(ctx, "rl", config_path, **options)


if __name__ == "__main__":
    main()
