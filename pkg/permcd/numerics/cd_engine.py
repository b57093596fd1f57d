"""
Coordinate descent with exact line search.

On a structured Hessian each update costs O(1) given the cached coordinate
sum: x_i <- -(1-delta)(s - x_i)/(1 + eps*d_i). A generic dense engine replays
arbitrary index sequences and serves as the oracle for scaling checks.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from permcd.core.errors import InvalidParameterError, NumericalDegeneracyError
from permcd.core.types import OrderingKind
from permcd.numerics.matrices import (
    Explicit,
    PermutationRec,
    StructuredHessian,
    epoch_matrix,
    quad_value,
)
from permcd.numerics.orderings import OrderingStrategy, create_ordering

logger = logging.getLogger(__name__)

UNDERFLOW_GUARD = 1e-280


@dataclass(frozen=True)
class StdNormal:
    """Standard normal x0; seed None means the run seed"""
    seed: Optional[int] = None

    def label(self) -> str:
        return "normal" if self.seed is None else f"normal:{self.seed}"


@dataclass(frozen=True)
class Ones:
    def label(self) -> str:
        return "ones"


X0Spec = Union[StdNormal, Ones, Explicit]


def seed_streams(seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    """Independent generators for the starting point and the ordering"""
    x0_seq, order_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(x0_seq), np.random.default_rng(order_seq)


def initial_point(spec: X0Spec, n: int, seed: int = 0) -> np.ndarray:
    """Materialize a starting point from its specification"""
    if isinstance(spec, StdNormal):
        x0_rng, _ = seed_streams(seed if spec.seed is None else spec.seed)
        return x0_rng.standard_normal(n)
    if isinstance(spec, Ones):
        return np.ones(n)
    if isinstance(spec, Explicit):
        x0 = np.asarray(spec.values, dtype=float)
        if x0.shape != (n,):
            raise InvalidParameterError(f"Explicit x0 has length {x0.shape[0]}, expected {n}")
        return x0
    raise InvalidParameterError(f"Unknown x0 specification: {spec!r}")


@dataclass(frozen=True, eq=False)
class CdState:
    """Iterate with its cached coordinate sum and objective"""
    x: np.ndarray
    coord_sum: float
    fval: float

    @classmethod
    def from_vector(cls, H: StructuredHessian, x: np.ndarray) -> "CdState":
        x = np.array(x, dtype=float, copy=True)
        return cls(x=x, coord_sum=math.fsum(x), fval=quad_value(H, x))


def cd_step(H: StructuredHessian, state: CdState, i: int) -> CdState:
    """
    Exact minimization along coordinate i (zero-based).

    Args:
        H: Hessian
        state: Current iterate
        i: Coordinate index

    Returns:
        New state; the objective is refreshed exactly
    """
    if not 0 <= i < H.n:
        raise InvalidParameterError(f"Coordinate {i} out of range for n={H.n}")
    x = state.x.copy()
    old = x[i]
    new = -(1.0 - H.delta) * (state.coord_sum - old) / (1.0 + H.eps * H.d[i])
    x[i] = new
    return CdState(x=x, coord_sum=state.coord_sum + (new - old), fval=quad_value(H, x))


@dataclass(frozen=True, eq=False)
class EpochTrace:
    """Objective values at epoch boundaries plus run metadata"""
    fvals: np.ndarray
    seed: int
    params: Dict[str, Any]
    final_x: np.ndarray
    truncated: bool = False
    stopped_early: bool = False
    orders: Optional[List[np.ndarray]] = field(default=None, repr=False)

    @property
    def epochs_run(self) -> int:
        return len(self.fvals) - 1


def run_epochs(H: StructuredHessian, x0: np.ndarray,
               strategy: Union[str, OrderingKind, OrderingStrategy], epochs: int, seed: int = 0,
               stop_below: Optional[float] = None, record_orders: bool = False,
               params: Optional[Dict[str, Any]] = None) -> EpochTrace:
    """
    Run ``epochs`` epochs of n coordinate steps each.

    Args:
        H: Hessian
        x0: Starting point
        strategy: Ordering kind or strategy instance
        epochs: Number of epochs, >= 0
        seed: Seed of the ordering stream
        stop_below: Stop once f drops below this value (value is kept)
        record_orders: Keep each epoch's realized index array
        params: Extra metadata merged into the trace parameters

    Returns:
        EpochTrace. Once 0 < f < 1e-280 the offending value is dropped and
        the trace is flagged as truncated; an exact 0 is kept.
    """
    if epochs < 0:
        raise InvalidParameterError(f"epochs must be non-negative, got {epochs}")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (H.n,):
        raise InvalidParameterError(f"x0 has shape {x0.shape}, expected ({H.n},)")
    ordering = strategy if isinstance(strategy, OrderingStrategy) else create_ordering(strategy, H)
    _, rng = seed_streams(seed)

    c = 1.0 - H.delta
    denom = (1.0 + H.eps * H.d).tolist()
    x = x0.tolist()
    s = math.fsum(x)
    fvals = [quad_value(H, x0)]
    orders: Optional[List[np.ndarray]] = [] if record_orders else None
    truncated = stopped = False

    for epoch in range(epochs):
        order = ordering.epoch_indices(rng)
        if orders is not None:
            orders.append(np.array(order, copy=True))
        for i in order.tolist():
            xi = x[i]
            new = -c * (s - xi) / denom[i]
            s += new - xi
            x[i] = new
        # refresh cached sum to stop drift
        s = math.fsum(x)
        f = quad_value(H, np.asarray(x))
        # f == 0 is the exact minimizer, not underflow
        if 0.0 < f < UNDERFLOW_GUARD:
            truncated = True
            logger.debug(f"Trace truncated at epoch {epoch + 1}: f={f:.3e}")
            break
        fvals.append(f)
        if stop_below is not None and f < stop_below:
            stopped = True
            break

    meta = {
        "n": H.n, "delta": H.delta, "eps": H.eps, "d_spec": H.d_label,
        "strategy": ordering.kind.value,
    }
    if params:
        meta.update(params)
    return EpochTrace(fvals=np.asarray(fvals), seed=seed, params=meta, final_x=np.asarray(x),
                      truncated=truncated, stopped_early=stopped, orders=orders)


def epoch_via_matrix(H: StructuredHessian, P: PermutationRec, x: np.ndarray) -> np.ndarray:
    """P C_P P^T x"""
    return P.apply(epoch_matrix(H, P) @ P.apply_transpose(x))


@dataclass(frozen=True, eq=False)
class DenseReplay:
    fvals: np.ndarray
    x: np.ndarray
    iterates: Optional[np.ndarray] = None


def replay_dense(A: np.ndarray, x0: np.ndarray, indices: Sequence[int],
                 keep_iterates: bool = False) -> DenseReplay:
    """
    Generic dense coordinate descent along an explicit index sequence.

    fvals[k] is f after k steps; fvals[0] = f(x0).
    """
    A = np.asarray(A, dtype=float)
    x = np.array(x0, dtype=float, copy=True)
    if np.any(np.diag(A) <= 0):
        raise NumericalDegeneracyError("Dense coordinate descent needs a positive diagonal")
    fvals = [0.5 * x @ A @ x]
    iterates = [x.copy()] if keep_iterates else None
    for i in indices:
        x[i] -= (A[i] @ x) / A[i, i]
        fvals.append(0.5 * x @ A @ x)
        if iterates is not None:
            iterates.append(x.copy())
    return DenseReplay(fvals=np.asarray(fvals), x=x,
                       iterates=np.asarray(iterates) if iterates is not None else None)


@dataclass(frozen=True, eq=False)
class TwinRun:
    fvals: np.ndarray
    twin_fvals: np.ndarray
    max_gap: float
    max_iterate_gap: float


def scaled_twin_run(A: np.ndarray, F_diag: np.ndarray, x0: np.ndarray,
                    index_seq: Sequence[int]) -> TwinRun:
    """
    Run the same index sequence on A from x0 and on F^-1 A F^-1 from F x0.

    The iterates satisfy x_twin^k = F x^k and the objective values coincide.
    """
    F_diag = np.asarray(F_diag, dtype=float)
    if np.any(F_diag == 0):
        raise InvalidParameterError("Scaling entries must be nonzero")
    inv = 1.0 / F_diag
    scaled = A * np.outer(inv, inv)
    base = replay_dense(A, x0, index_seq, keep_iterates=True)
    twin = replay_dense(scaled, F_diag * np.asarray(x0, dtype=float), index_seq, keep_iterates=True)
    gap = float(np.max(np.abs(base.fvals - twin.fvals)))
    mapped = base.iterates * F_diag
    scale = max(1.0, float(np.max(np.abs(mapped))))
    iterate_gap = float(np.max(np.abs(mapped - twin.iterates))) / scale
    return TwinRun(fvals=base.fvals, twin_fvals=twin.fvals, max_gap=gap, max_iterate_gap=iterate_gap)


def shift_linear_term(H: StructuredHessian, x0: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Starting point for the homogeneous problem equivalent to f = x^T A x/2 - b^T x.

    Returns x0 - A^-1 b, solved in O(n) with Sherman-Morrison.
    """
    b = np.asarray(b, dtype=float)
    lam = H.delta + H.eps * H.d
    c = 1.0 - H.delta
    lam_inv_b = b / lam
    lam_inv_1 = 1.0 / lam
    denom = 1.0 + c * lam_inv_1.sum()
    if abs(denom) < 1e-300:
        raise NumericalDegeneracyError("Rank-one update makes the Hessian singular")
    x_star = lam_inv_b - c * lam_inv_1 * lam_inv_b.sum() / denom
    return np.asarray(x0, dtype=float) - x_star


@dataclass(frozen=True, eq=False)
class BatchStatistics:
    """Per-epoch sample mean and standard error of f across runs"""
    mean: np.ndarray
    stderr: np.ndarray
    runs: int


def run_rpcd_batch(H: StructuredHessian, x0: np.ndarray, epochs: int, runs: int,
                   seed: int = 0) -> BatchStatistics:
    """Many independent random-permutation runs from the same x0, vectorized over runs"""
    if runs < 2:
        raise InvalidParameterError("Need at least two runs for a standard error")
    rng = np.random.default_rng(seed)
    n = H.n
    c = 1.0 - H.delta
    denom = 1.0 + H.eps * H.d
    X = np.tile(np.asarray(x0, dtype=float), (runs, 1))
    rows = np.arange(runs)
    base = np.tile(np.arange(n), (runs, 1))

    def objective(X: np.ndarray) -> np.ndarray:
        S = X.sum(axis=1)
        sq = X * X
        return 0.5 * (H.delta * sq.sum(axis=1) + c * S * S + H.eps * sq @ H.d)

    f = np.empty((epochs + 1, runs))
    f[0] = objective(X)
    for t in range(1, epochs + 1):
        perms = rng.permuted(base, axis=1)
        S = X.sum(axis=1)
        for j in range(n):
            idx = perms[:, j]
            xi = X[rows, idx]
            new = -c * (S - xi) / denom[idx]
            S += new - xi
            X[rows, idx] = new
        f[t] = objective(X)
    return BatchStatistics(mean=f.mean(axis=1), stderr=f.std(axis=1, ddof=1) / math.sqrt(runs),
                           runs=runs)
