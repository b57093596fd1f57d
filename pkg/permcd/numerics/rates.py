"""
Convergence rates: theoretical per-epoch factors, the spectral CCD rate,
first-iteration decrease bounds and the observed-rate estimator.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, eigs

from permcd.core.errors import EstimationError, InvalidParameterError
from permcd.core.types import OrderingKind
from permcd.numerics.cd_engine import CdState, EpochTrace, cd_step
from permcd.numerics.matrices import DENSE_LIMIT, PermutationRec, StructuredHessian, epoch_matrix

logger = logging.getLogger(__name__)

CROSS_CHECK_RTOL = 1e-8
ARNOLDI_MAXITER = 100_000


@dataclass
class RateReport:
    """Observed and predicted per-epoch deficits 1 - rho for one variant"""
    variant: OrderingKind
    one_minus_rho_observed: Optional[float]
    one_minus_rho_predicted: Optional[float]
    params: Dict[str, Any] = field(default_factory=dict)


def _check_positive(delta: float, eps: float) -> None:
    if delta <= 0 or eps < 0:
        raise InvalidParameterError(f"Need delta > 0 and eps >= 0, got delta={delta}, eps={eps}")


def rcd_predicted_rate(n: int, delta: float, eps: float) -> float:
    """(1 - 2 delta / (n (1 + eps + delta)))^n"""
    _check_positive(delta, eps)
    return (1.0 - 2.0 * delta / (n * (1.0 + eps + delta))) ** n


def rcd_naive_rate(n: int, delta: float, eps: float) -> float:
    """(1 - delta / (n (1 + eps)))^n, from modulus delta and coordinate Lipschitz constant 1 + eps"""
    _check_positive(delta, eps)
    return (1.0 - delta / (n * (1.0 + eps))) ** n


def rcd_nonuniform_rate(n: int, delta: float, eps: float, d_av: float) -> float:
    """(1 - delta / (n (1 + d_av eps)))^n for diagonal-weighted sampling"""
    _check_positive(delta, eps)
    if not 0 <= d_av <= 1:
        raise InvalidParameterError(f"d_av must lie in [0, 1], got {d_av}")
    return (1.0 - delta / (n * (1.0 + d_av * eps))) ** n


def ccd_bound_suny(n: int, delta: float, eps: float) -> float:
    """
    Upper bound on the CCD per-epoch factor.

    ``log n`` is the natural logarithm.
    """
    _check_positive(delta, eps)
    lam_max = n * (1.0 - delta) + delta + eps
    return 1.0 - max(
        delta / (n * lam_max),
        delta / (lam_max ** 2 * (2.0 + math.log(n) / math.pi) ** 2),
        delta / n ** 2,
    )


def rcd_iteration_complexity(delta: float, eps: float, tol: float) -> int:
    """Single-coordinate iterations for a tol-accurate objective: |log tol| (1+eps+delta)/(2 delta)"""
    if not 0 < tol < 1:
        raise InvalidParameterError(f"tol must lie in (0, 1), got {tol}")
    _check_positive(delta, eps)
    return math.ceil(abs(math.log(tol)) * (1.0 + eps + delta) / (2.0 * delta))


@dataclass
class SpectralRate:
    rho_sq: float
    rho_dense: float
    rho_iterative: Optional[float]
    cross_checked: bool


def _arnoldi_radius(C: np.ndarray) -> float:
    n = C.shape[0]
    v0 = np.random.default_rng(0).standard_normal(n)
    values = eigs(C, k=1, which="LM", v0=v0, ncv=min(n - 1, 120), tol=0.0,
                  maxiter=ARNOLDI_MAXITER, return_eigenvectors=False)
    return float(np.max(np.abs(values)))


def ccd_spectral_analysis(H: StructuredHessian) -> SpectralRate:
    """
    rho(C)^2 for the cyclic epoch matrix C = C_I.

    The dense eigenvalue solve is cross-checked against implicitly restarted
    Arnoldi; when Arnoldi fails to converge the dense value is used alone and
    a warning is logged.

    Raises:
        EstimationError: If the two radii differ by more than CROSS_CHECK_RTOL
    """
    if H.n > DENSE_LIMIT:
        raise InvalidParameterError(f"Spectral rate needs n <= {DENSE_LIMIT}")
    C = epoch_matrix(H, PermutationRec.identity(H.n))
    rho_dense = float(np.max(np.abs(np.linalg.eigvals(C))))
    rho_iter: Optional[float] = None
    checked = False
    if H.n >= 4:
        try:
            rho_iter = _arnoldi_radius(C)
        except ArpackNoConvergence:
            logger.warning(f"Arnoldi did not converge for n={H.n}; using dense eigenvalues only")
        else:
            if abs(rho_iter - rho_dense) > CROSS_CHECK_RTOL * max(rho_dense, 1e-300):
                raise EstimationError(f"Spectral radius disagreement for n={H.n}: "
                                      f"dense {rho_dense:.12g}, Arnoldi {rho_iter:.12g}")
            checked = True
    return SpectralRate(rho_sq=rho_dense ** 2, rho_dense=rho_dense, rho_iterative=rho_iter,
                        cross_checked=checked)


def ccd_spectral_rate(H: StructuredHessian) -> float:
    """Asymptotic CCD per-epoch factor rho(C)^2"""
    return ccd_spectral_analysis(H).rho_sq


def observed_rate(trace: Union[EpochTrace, Sequence[float]], window: int = 10) -> float:
    """
    Geometric mean of the per-epoch ratios over the last ``window`` epochs.

    Raises:
        EstimationError: If the trace is shorter than window + 1 or the
            window contains non-positive or non-finite values
    """
    fvals = np.asarray(trace.fvals if isinstance(trace, EpochTrace) else trace, dtype=float)
    if window < 1:
        raise EstimationError(f"window must be positive, got {window}")
    if fvals.shape[0] < window + 1:
        raise EstimationError(f"Need at least {window + 1} epochs, trace has {fvals.shape[0]}")
    tail = fvals[-(window + 1):]
    if not np.all(np.isfinite(tail)) or np.any(tail <= 0):
        raise EstimationError("Rate window contains non-positive or non-finite values")
    return float((tail[-1] / tail[0]) ** (1.0 / window))


def first_epoch_decrease(trace: Union[EpochTrace, Sequence[float]]) -> float:
    """f_1 / f_0"""
    fvals = np.asarray(trace.fvals if isinstance(trace, EpochTrace) else trace, dtype=float)
    if fvals.shape[0] < 2 or fvals[0] <= 0:
        raise EstimationError("Need f_0 > 0 and at least one completed epoch")
    return float(fvals[1] / fvals[0])


@dataclass
class FirstIterBounds:
    f1_actual: float
    f1_bound: float
    expected_bound: float


def first_iter_bounds(H: StructuredHessian, x0: np.ndarray, i: int) -> FirstIterBounds:
    """
    Objective after one exact step on coordinate i against its upper bounds.

    Args:
        H: Hessian with eps in (0, 1) for the bounds to apply
        x0: Starting point
        i: Zero-based coordinate updated first
    """
    x0 = np.asarray(x0, dtype=float)
    if not 0 <= i < H.n:
        raise InvalidParameterError(f"Coordinate {i} out of range for n={H.n}")
    d, e, n = H.delta, H.eps, H.n
    mask = np.ones(n, dtype=bool)
    mask[i] = False
    rest = x0[mask]
    factor = (1.0 - d) * (d + e) / (1.0 + e)
    f1 = cd_step(H, CdState.from_vector(H, x0), i).fval
    bound = 0.5 * math.fsum(rest ** 2 * (d + e * H.d[mask])) + 0.5 * factor * math.fsum(rest) ** 2
    return FirstIterBounds(f1_actual=f1, f1_bound=bound,
                           expected_bound=first_iter_expected_bound(H, x0))


def first_iter_expected_bound(H: StructuredHessian, x0: np.ndarray) -> float:
    """(d+e)/(2n) (n - (d+e)/(1+e)) ||x0||^2 + (n-2)/n (1-d)(d+e)/(1+e) (1^T x0)^2"""
    x0 = np.asarray(x0, dtype=float)
    d, e, n = H.delta, H.eps, H.n
    de = d + e
    return (de / (2 * n) * (n - de / (1 + e)) * math.fsum(x0 ** 2)
            + (n - 2) / n * (1 - d) * de / (1 + e) * math.fsum(x0) ** 2)


def first_iter_expected_actual(H: StructuredHessian, x0: np.ndarray) -> float:
    """Exact average over i of f after one step on coordinate i"""
    state = CdState.from_vector(H, x0)
    return math.fsum(cd_step(H, state, i).fval for i in range(H.n)) / H.n
