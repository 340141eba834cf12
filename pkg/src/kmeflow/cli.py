"""Command-line interface: experiment subcommands with config-file support.

Exit codes: 0 on success, 1 on runtime failure (flow divergence, exhausted
retries), 2 on configuration errors.
"""

from __future__ import annotations

import sys

import click

from . import __version__
from .config import load_config_file
from .errors import ConfigError, KmeFlowError
from .experiments import run_experiment


def _comma_list(kind):
    def convert(_ctx, _param, value):
        if value is None:
            return None
        try:
            return [kind(v) for v in str(value).split(",") if v != ""]
        except ValueError:
            raise click.BadParameter(f"expected comma-separated {kind.__name__} values")

    return convert


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__)
@click.option("--seed", type=int, default=None, help="Root seed for all randomness.")
@click.option("--out", type=click.Path(), default=None, help="Output directory.")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="TOML config file; CLI flags override its keys.")
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default=None,
              help="Output table format.")
@click.option("--deterministic", is_flag=True, default=False,
              help="Pin BLAS to one thread so results match across --threads.")
@click.option("--threads", type=int, default=None,
              help="Worker processes for replicate jobs (0 = number of CPUs).")
@click.option("--figures/--no-figures", default=None,
              help="Render matplotlib figures alongside the CSV output.")
@click.pass_context
def cli(ctx, seed, out, config_path, fmt, deterministic, threads, figures):
    """Kernel mean embedding particle flows: experiment harness."""
    ctx.ensure_object(dict)
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if out is not None:
        overrides["out"] = out
    if fmt is not None:
        overrides["format"] = fmt
    if deterministic:
        overrides["deterministic"] = True
    if threads is not None:
        overrides["threads"] = threads
    if figures is not None:
        overrides["figures"] = figures
    ctx.obj["overrides"] = overrides
    ctx.obj["config_path"] = config_path


def _execute(ctx, experiment, options):
    overrides = dict(ctx.obj["overrides"])
    overrides.update({k: v for k, v in options.items() if v is not None})
    try:
        file_config = (
            load_config_file(ctx.obj["config_path"]) if ctx.obj["config_path"] else None
        )
        files = run_experiment(experiment, file_config, overrides)
    except ConfigError as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(2)
    except KmeFlowError as exc:
        click.echo(f"run failed: {exc}", err=True)
        sys.exit(1)
    for path in files:
        click.echo(str(path))


@cli.command()
@click.option("--case", type=click.Choice(["gauss-to-gauss", "mixture-to-mixture", "gauss-to-mixture"]),
              default=None, help="Toy problem preset.")
@click.option("--n-particles", type=int, default=None)
@click.option("--n-steps", type=int, default=None)
@click.option("--kernel", type=click.Choice(["rbf", "quadratic"]), default=None)
@click.option("--bandwidth", type=float, default=None)
@click.option("--epsilon", type=float, default=None)
@click.option("--trace", is_flag=True, default=None, help="Write per-step flow diagnostics.")
@click.pass_context
def toy(ctx, **options):
    """Run one 1-d toy problem and write samples, target pdf and metrics."""
    _execute(ctx, "toy", options)


@cli.command()
@click.option("--dims", callback=_comma_list(int), default=None,
              help="Comma-separated dimensions, e.g. 1,2,5,10,20,50.")
@click.option("--n-particles", callback=_comma_list(int), default=None,
              help="Comma-separated ensemble sizes.")
@click.option("--kernels", callback=_comma_list(str), default=None,
              help="Comma-separated kernels from {rbf, quadratic}.")
@click.option("--bandwidth", type=float, default=None,
              help="RBF bandwidth; default is the sqrt(2 d) scale rule.")
@click.option("--n-steps", type=int, default=None)
@click.option("--epsilon", type=float, default=None)
@click.option("--n-replicates", type=int, default=None)
@click.pass_context
def skew(ctx, **options):
    """Skew-normal target: Wasserstein error against dimension and kernel."""
    options["n_particles"] = options.pop("n_particles")
    _execute(ctx, "skew", options)


@cli.command("bandwidth-sweep")
@click.option("--bandwidths", callback=_comma_list(float), default=None,
              help="Comma-separated RBF bandwidths.")
@click.option("--n-particles", type=int, default=None)
@click.option("--n-steps", type=int, default=None)
@click.option("--epsilon", type=float, default=None)
@click.option("--n-replicates", type=int, default=None)
@click.pass_context
def bandwidth_sweep(ctx, **options):
    """Wasserstein error of the 10-d Gaussian problem against RBF bandwidth."""
    _execute(ctx, "bandwidth-sweep", options)


@cli.command("lorenz63")
@click.option("--methods", callback=_comma_list(str), default=None,
              help="Comma-separated methods from {enkf, kme, kme-kalman}.")
@click.option("--ensemble-sizes", callback=_comma_list(int), default=None)
@click.option("--n-replicates", type=int, default=None)
@click.option("--kernel", type=click.Choice(["rbf", "quadratic"]), default=None)
@click.option("--bandwidth", type=float, default=None)
@click.option("--epsilon", type=float, default=None)
@click.option("--n-steps", type=int, default=None)
@click.option("--n-cycles", type=int, default=None)
@click.option("--dt-inner", type=float, default=None)
@click.option("--dt-obs", type=float, default=None)
@click.option("--obs-noise", type=float, default=None, help="Observation noise variance per coordinate.")
@click.option("--forecast-noise", type=float, default=None, help="Forecast noise variance per coordinate.")
@click.option("--prior-spread", type=float, default=None, help="Initial prior variance per coordinate.")
@click.option("--max-retries", type=int, default=None)
@click.option("--trace", is_flag=True, default=None, help="Write per-cycle traces for replicate 0.")
@click.pass_context
def lorenz63(ctx, **options):
    """Sequential data assimilation on Lorenz-63: RMSE per method and size."""
    _execute(ctx, "lorenz63", options)


@cli.command("plot")
@click.option("--out", type=click.Path(exists=True), required=False, default=None,
              help="Result directory holding the CSV files (default: --out of the group).")
@click.pass_context
def plot_cmd(ctx, out):
    """Re-render figures from the CSV files of a previous run."""
    from .plots import regenerate_figures

    target = out or ctx.obj["overrides"].get("out") or "results"
    try:
        made = regenerate_figures(target)
    except Exception as exc:  # malformed/missing files
        click.echo(f"plotting failed: {exc}", err=True)
        sys.exit(1)
    if not made:
        click.echo(f"no recognised CSV files in {target}", err=True)
        sys.exit(2)
    for path in made:
        click.echo(str(path))


def main():
    cli(obj={})
