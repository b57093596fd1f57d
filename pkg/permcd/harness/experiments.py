"""
Figure and table experiment runners.

A figure run produces one row per epoch boundary for every (strategy, seed)
pair. A table run estimates per-epoch rates for the three orderings over a
grid of delta values and sets them beside the theoretical predictions.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from permcd.core.config_loader import ExperimentConfig, TableConfig
from permcd.core.errors import EstimationError
from permcd.core.types import MatrixFamily, OrderingKind
from permcd.harness.output import build_id
from permcd.numerics.cd_engine import initial_point, replay_dense, run_epochs
from permcd.numerics.matrices import (
    StructuredHessian,
    build_perturbed_identity,
    build_spiked_eigvec,
    spike_matrix,
)
from permcd.numerics.rates import (
    RateReport,
    ccd_bound_suny,
    ccd_spectral_analysis,
    observed_rate,
    rcd_iteration_complexity,
    rcd_naive_rate,
    rcd_nonuniform_rate,
    rcd_predicted_rate,
)
from permcd.numerics.recurrence import RegimeParams, regime_check

logger = logging.getLogger(__name__)

FIGURE_COLUMNS = [
    "epoch", "strategy", "seed", "fval", "fval_over_f0",
    "matrix", "n", "delta", "eps", "d_spec", "x0_spec", "build_id",
]


def _figure_hessian(config: ExperimentConfig) -> StructuredHessian:
    if config.matrix_family is MatrixFamily.SPIKE:
        return spike_matrix(config.n, config.delta)
    return build_perturbed_identity(config.n, config.delta, config.eps, config.parsed_d_spec())


def _trace_rows(fvals: np.ndarray, matrix: str, strategy: str, seed: int,
                base: Dict[str, Any]) -> List[Dict[str, Any]]:
    f0 = float(fvals[0])
    return [
        {**base, "epoch": t, "strategy": strategy, "seed": seed, "matrix": matrix,
         "fval": float(f), "fval_over_f0": float(f) / f0 if f0 > 0 else None}
        for t, f in enumerate(fvals)
    ]


def run_figure(config: ExperimentConfig) -> List[Dict[str, Any]]:
    """
    Per-epoch objective traces for every configured strategy and seed.

    On the spiked-eigvec family the structured run happens on the companion
    matrix from U x0; its realized orders are replayed densely on B_u from
    x0. With ``twin`` both traces are emitted.

    Returns:
        Rows keyed by FIGURE_COLUMNS, ordered by strategy, seed, epoch
    """
    bid = build_id(config)
    x0_spec = config.parsed_x0_spec()
    rows: List[Dict[str, Any]] = []

    if config.matrix_family is MatrixFamily.SPIKED_EIGVEC:
        B, H = build_spiked_eigvec(config.n, config.delta, config.eps, config.parsed_u_spec())
        B_dense = B.dense()
    else:
        B = None
        H = _figure_hessian(config)
    base = {"n": config.n, "delta": config.delta, "eps": H.eps, "d_spec": H.d_label,
            "x0_spec": x0_spec.label(), "build_id": bid}

    logger.info(f"Figure {config.name}: {config.matrix_family.value} n={config.n} "
                f"delta={config.delta} eps={config.eps}, {len(config.seeds)} seed(s)")
    for strategy in config.strategies:
        for seed in config.seeds:
            x0 = initial_point(x0_spec, config.n, seed)
            if B is None:
                trace = run_epochs(H, x0, strategy, config.epochs, seed=seed,
                                   stop_below=config.stop_below)
                rows.extend(_trace_rows(trace.fvals, "perturbed", strategy.value, seed, base))
                continue

            trace = run_epochs(H, B.u * x0, strategy, config.epochs, seed=seed,
                               stop_below=config.stop_below, record_orders=True)
            indices = np.concatenate(trace.orders) if trace.orders else np.array([], dtype=int)
            replay = replay_dense(B_dense, x0, indices)
            b_fvals = replay.fvals[::config.n][:len(trace.fvals)]
            rows.extend(_trace_rows(b_fvals, "B_u", strategy.value, seed, base))
            if config.twin:
                rows.extend(_trace_rows(trace.fvals, "companion", strategy.value, seed, base))
            logger.debug(f"{strategy.value} seed={seed}: max twin gap "
                         f"{float(np.max(np.abs(b_fvals - trace.fvals[:len(b_fvals)]))):.3e}")
    return rows


@dataclass
class TableRow:
    """One grid point; rate columns are per-epoch deficits 1 - rho"""
    delta: float
    eps: float
    ccd_observed: Optional[float]
    ccd_spectral: float
    rcd_observed: Optional[float]
    rcd_predicted: float
    rpcd_observed: Optional[float]
    benchmark_2delta: float
    regime_ok: bool
    rcd_weighted_observed: Optional[float] = None
    rcd_nonuniform_predicted: Optional[float] = None
    unestimable: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def rate_reports(self) -> List[RateReport]:
        """Observed and predicted deficits per ordering; CCD is predicted by rho(C)^2"""
        params = {"delta": self.delta, "eps": self.eps}
        return [
            RateReport(OrderingKind.CYCLIC, self.ccd_observed, self.ccd_spectral, dict(params)),
            RateReport(OrderingKind.UNIFORM_RANDOM, self.rcd_observed, self.rcd_predicted, dict(params)),
            RateReport(OrderingKind.RANDOM_PERMUTATION, self.rpcd_observed, None, dict(params)),
        ]


TABLE_METRICS = [
    ("1-rho CCD observed", "ccd_observed"),
    ("1-rho(C)^2", "ccd_spectral"),
    ("1-rho RCD observed", "rcd_observed"),
    ("1-rho RCD predicted", "rcd_predicted"),
    ("1-rho RPCD observed", "rpcd_observed"),
    ("2 delta", "benchmark_2delta"),
]

WEIGHTED_METRICS = [
    ("1-rho RCD weighted observed", "rcd_weighted_observed"),
    ("1-rho RCD nonuniform predicted", "rcd_nonuniform_predicted"),
]


@dataclass(frozen=True)
class _Cell:
    n: int
    delta: float
    eps: float
    d_spec: Any
    x0_spec: Any
    strategy: OrderingKind
    seed: int
    epochs: int
    stop_below: float
    window: int


def _run_cell(cell: _Cell) -> Optional[float]:
    """Observed per-epoch rate of one (delta, strategy, seed) cell, None if unestimable"""
    H = build_perturbed_identity(cell.n, cell.delta, cell.eps, cell.d_spec)
    x0 = initial_point(cell.x0_spec, cell.n, cell.seed)
    trace = run_epochs(H, x0, cell.strategy, cell.epochs, seed=cell.seed, stop_below=cell.stop_below)
    try:
        return observed_rate(trace, cell.window)
    except EstimationError as e:
        logger.warning(f"{cell.strategy.value} delta={cell.delta} seed={cell.seed}: {e}")
        return None


def _geometric_mean(rates: List[Optional[float]]) -> Optional[float]:
    usable = [r for r in rates if r is not None and r > 0]
    if not usable:
        return None
    return math.exp(math.fsum(math.log(r) for r in usable) / len(usable))


def run_table(config: TableConfig) -> List[TableRow]:
    """
    Rate table over ``config.deltas``.

    Observed rates are geometric means over seeds of the windowed per-epoch
    ratio. Cells run in a process pool when ``workers`` > 1; results are
    assembled in grid order.
    """
    strategies = [OrderingKind.CYCLIC, OrderingKind.UNIFORM_RANDOM, OrderingKind.RANDOM_PERMUTATION]
    if config.include_weighted:
        strategies.append(OrderingKind.DIAGONAL_WEIGHTED)
    d_spec, x0_spec = config.parsed_d_spec(), config.parsed_x0_spec()

    cells = [
        _Cell(config.n, delta, config.eps_for(delta), d_spec, x0_spec, kind, seed,
              config.epochs, config.stop_below, config.window)
        for delta in config.deltas for kind in strategies for seed in config.seeds
    ]
    logger.info(f"Table {config.name}: {len(config.deltas)} deltas x {len(strategies)} strategies "
                f"x {len(config.seeds)} seeds on {config.workers} worker(s)")
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]

    rates: Dict[Tuple[float, OrderingKind], List[Optional[float]]] = {}
    for cell, rate in zip(cells, results):
        rates.setdefault((cell.delta, cell.strategy), []).append(rate)

    rows = []
    for delta in config.deltas:
        eps = config.eps_for(delta)
        H = build_perturbed_identity(config.n, delta, eps, d_spec)
        observed = {kind: _geometric_mean(rates[(delta, kind)]) for kind in strategies}
        unestimable = [kind.value for kind, rate in observed.items() if rate is None]
        if unestimable:
            logger.warning(f"delta={delta}: unestimable rates for {unestimable}")
        deficit = lambda kind: None if observed.get(kind) is None else 1.0 - observed[kind]
        regime = regime_check(RegimeParams(config.n, delta, eps, config.rho_bar))
        row = TableRow(
            delta=delta, eps=eps,
            ccd_observed=deficit(OrderingKind.CYCLIC),
            ccd_spectral=1.0 - ccd_spectral_analysis(H).rho_sq,
            rcd_observed=deficit(OrderingKind.UNIFORM_RANDOM),
            rcd_predicted=1.0 - rcd_predicted_rate(config.n, delta, eps),
            rpcd_observed=deficit(OrderingKind.RANDOM_PERMUTATION),
            benchmark_2delta=2.0 * delta,
            regime_ok=bool(regime),
            unestimable=unestimable,
        )
        if config.include_weighted:
            row.rcd_weighted_observed = deficit(OrderingKind.DIAGONAL_WEIGHTED)
            row.rcd_nonuniform_predicted = 1.0 - rcd_nonuniform_rate(config.n, delta, eps, H.d_av)
        rows.append(row)
    return rows


def table_records(rows: List[TableRow], config: TableConfig) -> List[Dict[str, Any]]:
    """Flat rows with provenance for CSV/JSON output"""
    bid = build_id(config)
    d_label = config.parsed_d_spec().label()
    x0_label = config.parsed_x0_spec().label()
    return [
        {**row.to_dict(), "unestimable": ";".join(row.unestimable), "n": config.n,
         "seeds": ";".join(str(s) for s in config.seeds), "d_spec": d_label,
         "x0_spec": x0_label, "build_id": bid}
        for row in rows
    ]


def theoretical_rates(H: StructuredHessian, tol: float = 1e-10) -> Dict[str, Any]:
    """All theoretical per-epoch factors for one Hessian"""
    n, delta, eps = H.n, H.delta, H.eps
    spectral = ccd_spectral_analysis(H)
    return {
        "n": n, "delta": delta, "eps": eps, "d_spec": H.d_label, "d_av": H.d_av,
        "rcd_naive": rcd_naive_rate(n, delta, eps),
        "rcd_predicted": rcd_predicted_rate(n, delta, eps),
        "rcd_nonuniform": rcd_nonuniform_rate(n, delta, eps, H.d_av),
        "ccd_worst_case_bound": ccd_bound_suny(n, delta, eps),
        "ccd_spectral": spectral.rho_sq,
        "ccd_spectral_cross_checked": spectral.cross_checked,
        "rcd_iterations": rcd_iteration_complexity(delta, eps, tol),
        "tol": tol,
    }
