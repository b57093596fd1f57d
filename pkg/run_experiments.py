#!/usr/bin/env python3
"""
Experiment CLI

Regenerates figure traces and rate tables, runs the verification suites and
prints theoretical rates.

Exit codes: 0 success, 2 configuration error, 3 verification failure.
"""

import functools
import sys
from typing import Any, Dict

import click
from tabulate import tabulate

from permcd.core.config_loader import (
    ExperimentConfig,
    TableConfig,
    VerifyConfig,
    get_config_loader,
    parse_d_spec,
)
from permcd.core.errors import ConfigError, EstimationError, InvalidParameterError
from permcd.core.logging_setup import setup_logging
from permcd.harness.experiments import (
    FIGURE_COLUMNS,
    TABLE_METRICS,
    WEIGHTED_METRICS,
    run_figure,
    run_table,
    table_records,
    theoretical_rates,
)
from permcd.harness.output import format_ab, open_output, render_table, write_csv, write_json
from permcd.harness.verify import run_verify
from permcd.numerics.matrices import build_perturbed_identity

EXIT_CONFIG_ERROR = 2
EXIT_VERIFY_FAILED = 3


def _config_errors(func):
    """Map configuration and parameter errors to exit code 2, failed cross-checks to 3"""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (ConfigError, InvalidParameterError) as e:
            click.echo(f"Configuration error: {e}", err=True)
            sys.exit(EXIT_CONFIG_ERROR)
        except EstimationError as e:
            click.echo(f"Numerical check failed: {e}", err=True)
            sys.exit(EXIT_VERIFY_FAILED)

    return wrapper


def _overrides(**values: Any) -> Dict[str, Any]:
    return {k: v for k, v in values.items() if v is not None and v != ()}


output_options = [
    click.option('--out', 'out', default=None, help='Output file (default: stdout)'),
    click.option('--format', 'fmt', type=click.Choice(['csv', 'json']), default='csv',
                 help='Output format'),
]


def with_output(func):
    for option in reversed(output_options):
        func = option(func)
    return func


@click.group()
@click.option('--log-level', default=None, help='DEBUG, INFO, WARNING (default: PERMCD_LOG_LEVEL or INFO)')
def cli(log_level):
    """
    Coordinate descent ordering experiments

    Examples:
        python run_experiments.py figure figure1 --out results/figure1.csv
        python run_experiments.py table table1 --seeds 10 --workers 4
        python run_experiments.py verify --suite identities --suite scaling
        python run_experiments.py rates --n 100 --delta 0.01 --eps 0.01
    """
    get_config_loader()
    try:
        setup_logging(log_level)
    except ValueError as e:
        click.echo(f"Configuration error: {e}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)


@cli.command()
@click.argument('preset', required=False)
@click.option('--family', type=click.Choice(['perturbed', 'spike', 'spiked-eigvec']), default=None)
@click.option('--n', type=int, default=None)
@click.option('--delta', type=float, default=None)
@click.option('--eps', type=float, default=None)
@click.option('--d-spec', default=None, help='linspace | uniform:<seed>')
@click.option('--u-spec', default=None, help='band:<seed>')
@click.option('--x0-spec', default=None, help='normal[:<seed>] | ones')
@click.option('--strategy', 'strategies', multiple=True,
              type=click.Choice(['ccd', 'rcd', 'rpcd', 'rcd-weighted']))
@click.option('--epochs', type=int, default=None)
@click.option('--seeds', type=int, default=None, help='Number of seeds')
@click.option('--seed-base', type=int, default=None, help='First seed')
@click.option('--twin/--no-twin', default=None, help='Also emit the companion-matrix run')
@with_output
@_config_errors
def figure(preset, family, n, delta, eps, d_spec, u_spec, x0_spec, strategies, epochs, seeds,
           seed_base, twin, out, fmt):
    """Per-epoch objective traces (one CSV row per epoch boundary)"""
    config = get_config_loader().load(ExperimentConfig, preset, _overrides(
        matrix_family=family, n=n, delta=delta, eps=eps, d_spec=d_spec, u_spec=u_spec,
        x0_spec=x0_spec, strategies=list(strategies) or None, epochs=epochs, seeds=seeds,
        seed_base=seed_base, twin=twin,
    ))
    rows = run_figure(config)
    with open_output(out) as stream:
        if fmt == 'csv':
            write_csv(rows, stream, FIGURE_COLUMNS)
        else:
            write_json({"config": config.model_dump(mode="json"), "rows": rows}, stream)


@cli.command()
@click.argument('preset', required=False)
@click.option('--n', type=int, default=None)
@click.option('--delta', 'deltas', type=float, multiple=True, help='Grid value; repeatable')
@click.option('--eps-rule', type=click.Choice(['equal', 'sqrt-delta-over-10', 'fixed']), default=None)
@click.option('--eps', type=float, default=None, help='eps for --eps-rule fixed')
@click.option('--d-spec', default=None)
@click.option('--x0-spec', default=None)
@click.option('--epochs', type=int, default=None)
@click.option('--seeds', type=int, default=None)
@click.option('--seed-base', type=int, default=None)
@click.option('--rho-bar', type=float, default=None, help='Remainder constant for the regime flag')
@click.option('--weighted/--no-weighted', default=None, help='Add diagonal-weighted RCD')
@click.option('--workers', type=int, default=None, help='Process pool size')
@with_output
@_config_errors
def table(preset, n, deltas, eps_rule, eps, d_spec, x0_spec, epochs, seeds, seed_base, rho_bar,
          weighted, workers, out, fmt):
    """Observed and predicted rates over a delta grid"""
    config = get_config_loader().load(TableConfig, preset, _overrides(
        n=n, deltas=list(deltas) or None, eps_rule=eps_rule, eps=eps, d_spec=d_spec,
        x0_spec=x0_spec, epochs=epochs, seeds=seeds, seed_base=seed_base, rho_bar=rho_bar,
        include_weighted=weighted, workers=workers,
    ))
    rows = run_table(config)
    records = table_records(rows, config)
    metrics = TABLE_METRICS + (WEIGHTED_METRICS if config.include_weighted else [])
    click.echo(render_table([r.to_dict() for r in rows], metrics), err=True)
    with open_output(out) as stream:
        if fmt == 'csv':
            write_csv(records, stream)
        else:
            write_json({"config": config.model_dump(mode="json", exclude={"workers"}), "rows": records}, stream)


@cli.command()
@click.argument('preset', required=False)
@click.option('--suite', 'suites', multiple=True,
              type=click.Choice(['identities', 'lemmas', 'recurrence', 'first-iter', 'scaling']))
@click.option('--seed', type=int, default=None)
@click.option('--out', 'out', default=None, help='Output file (default: stdout)')
@_config_errors
def verify(preset, suites, seed, out):
    """Run verification suites; JSON report, exit code 3 on any failure"""
    config = get_config_loader().load(VerifyConfig, preset, _overrides(
        suites=list(suites) or None, seed=seed,
    ))
    report = run_verify(config)
    with open_output(out) as stream:
        write_json(report.to_dict(), stream)
    if not report:
        for failure in report.failures():
            click.echo(f"FAILED {failure.name}: max_error={failure.max_error:.3e}", err=True)
        sys.exit(EXIT_VERIFY_FAILED)


@cli.command()
@click.option('--n', type=int, default=100)
@click.option('--delta', type=float, required=True)
@click.option('--eps', type=float, default=0.0)
@click.option('--d-spec', default='linspace')
@click.option('--tol', type=float, default=1e-10, help='Target accuracy for the iteration count')
@click.option('--format', 'fmt', type=click.Choice(['table', 'json']), default='table')
@_config_errors
def rates(n, delta, eps, d_spec, tol, fmt):
    """Theoretical per-epoch rates for one parameter set"""
    try:
        spec = parse_d_spec(d_spec)
    except ValueError as e:
        raise ConfigError(str(e))
    values = theoretical_rates(build_perturbed_identity(n, delta, eps, spec), tol)
    if fmt == 'json':
        write_json(values, sys.stdout)
        return
    body = [[key, format_ab(value) if isinstance(value, float) else value]
            for key, value in values.items()]
    click.echo(tabulate(body, headers=['quantity', 'value'], tablefmt='simple'))


if __name__ == '__main__':
    cli()
