"""
Four-term quadruplet recurrence bounding the expected RPCD Hessian.

Quadruplets (eta, nu, eps, tau) are the coefficients of
eta*I + nu*11^T + eps*D + tau*(1 r^T + r 1^T). One epoch maps
q -> max((1-delta)^2 * Mhat q, 0).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from permcd.core.errors import InvalidParameterError

logger = logging.getLogger(__name__)

EXTENDED_PRECISION_THRESHOLD = 1e-200
BOUND_RTOL = 1e-12


@dataclass(frozen=True)
class Quadruplet:
    eta: float
    nu: float
    epsv: float
    tau: float

    def __post_init__(self):
        if min(self.eta, self.nu, self.epsv, self.tau) < 0:
            raise InvalidParameterError(f"Quadruplet components must be non-negative: {self}")

    @classmethod
    def initial(cls, delta: float, eps: float) -> "Quadruplet":
        return cls(delta, 1.0 - delta, eps, 0.0)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Quadruplet":
        return cls(*(float(v) for v in values))

    def as_array(self) -> np.ndarray:
        return np.array([self.eta, self.nu, self.epsv, self.tau])

    @property
    def max_norm(self) -> float:
        return max(self.eta, self.nu, self.epsv, self.tau)


@dataclass(frozen=True)
class RegimeParams:
    n: int
    delta: float
    eps: float
    rho_bar: float = 1.0

    def __post_init__(self):
        if self.rho_bar < 0:
            raise InvalidParameterError(f"rho_bar must be non-negative, got {self.rho_bar}")


@dataclass
class RegimeCheck:
    ok: bool
    violations: List[str] = field(default_factory=list)

    def __bool__(self):
        return self.ok


def rhohat(rho_bar: float) -> float:
    """3.05 + 2.1 rho + 0.6 rho^2 + 0.01 rho^3"""
    if rho_bar < 0:
        raise InvalidParameterError(f"rho_bar must be non-negative, got {rho_bar}")
    return 3.05 + 2.1 * rho_bar + 0.6 * rho_bar ** 2 + 0.01 * rho_bar ** 3


def regime_check(p: RegimeParams) -> RegimeCheck:
    """0 < delta <= eps, rhohat*eps^2 <= delta/2, n*eps <= 1, n >= 5"""
    violations = []
    if not 0 < p.delta <= p.eps:
        violations.append(f"need 0 < delta <= eps (delta={p.delta:g}, eps={p.eps:g})")
    bound = rhohat(p.rho_bar) * p.eps ** 2
    if bound > p.delta / 2:
        violations.append(f"rhohat*eps^2 = {bound:.4g} exceeds delta/2 = {p.delta / 2:.4g}")
    if p.n * p.eps > 1:
        violations.append(f"n*eps = {p.n * p.eps:g} exceeds 1")
    if p.n < 5:
        violations.append(f"n = {p.n} is below 5")
    return RegimeCheck(ok=not violations, violations=violations)


RhoAssign = Union[float, Sequence[float]]


def _rho_slots(rho_assign: RhoAssign) -> np.ndarray:
    if np.isscalar(rho_assign):
        return np.full(10, float(rho_assign))
    slots = np.asarray(rho_assign, dtype=float)
    if slots.shape != (10,):
        raise InvalidParameterError(f"Explicit rho assignment needs 10 values, got {slots.shape}")
    return slots


def mhat(p: RegimeParams, d_av: float, rho_assign: Optional[RhoAssign] = None) -> np.ndarray:
    """
    Recurrence matrix, rows and columns ordered (eta, nu, eps, tau).

    Args:
        p: Parameters; rho_bar fills every slot unless rho_assign is given
        d_av: Mean diagonal weight
        rho_assign: Scalar for all ten remainder slots, or ten explicit values
            in row-major display order
    """
    r = _rho_slots(p.rho_bar if rho_assign is None else rho_assign)
    e, e2, rn = p.eps, p.eps ** 2, 1.0 / math.sqrt(p.n)
    return np.array([
        [1 + r[0] * e2, r[1] * e2, 2 * e + r[2] * e2, r[3] * e],
        [1 + r[4] * e2, 0.0, d_av + r[5] * e2, r[6] * e * rn],
        [0.0, 0.0, 1.0, 0.0],
        [r[7] * e * rn, 0.0, r[8] * rn + r[9] * e2, 0.0],
    ])


def mhat_dominant_eigenvalue(p: RegimeParams, d_av: float,
                             rho_assign: Optional[RhoAssign] = None) -> float:
    """Spectral radius of (1-delta)^2 Mhat"""
    M = (1.0 - p.delta) ** 2 * mhat(p, d_av, rho_assign)
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def iterate_quadruplet(p: RegimeParams, d_av: float, T: int, q0: Optional[Quadruplet] = None,
                       rho_assign: Optional[RhoAssign] = None) -> List[Quadruplet]:
    """
    q_0..q_T of the clamped recurrence.

    Switches to extended precision once a positive component drops below 1e-200.
    """
    q0 = q0 or Quadruplet.initial(p.delta, p.eps)
    M = (1.0 - p.delta) ** 2 * mhat(p, d_av, rho_assign)
    q = q0.as_array()
    out = [q0]
    extended = False
    for t in range(T):
        if not extended:
            positive = q[q > 0]
            if positive.size and positive.min() < EXTENDED_PRECISION_THRESHOLD:
                extended = True
                M = M.astype(np.longdouble)
                q = q.astype(np.longdouble)
                logger.debug(f"Quadruplet recurrence switched to extended precision at t={t}")
        q = np.maximum(M @ q, 0)
        out.append(Quadruplet.from_array(q))
    return out


def tail_ratio(quadruplets: Sequence[Quadruplet], window: int = 10) -> float:
    """Geometric per-step ratio of the max-norm over the last ``window`` steps"""
    if len(quadruplets) < window + 1:
        raise InvalidParameterError(f"Need at least {window + 1} quadruplets, got {len(quadruplets)}")
    last, first = quadruplets[-1].max_norm, quadruplets[-1 - window].max_norm
    if first <= 0 or last <= 0:
        raise InvalidParameterError("Max-norm vanished inside the window")
    return (last / first) ** (1.0 / window)


def tail_horizon(delta: float, T: int) -> int:
    """Horizon past the polynomial transient of the recurrence: max(T, 20/delta)"""
    return max(T, math.ceil(20.0 / delta))


@dataclass(frozen=True, eq=False)
class BoundSeq:
    eta_bar: np.ndarray
    eps_bar: np.ndarray


def bound_sequences(p: RegimeParams, T: int) -> BoundSeq:
    """eta_bar_t = 1.5 rhohat (1-1.4 delta)^t t delta,  eps_bar_t = (1-1.8 delta)^t eps"""
    t = np.arange(T + 1, dtype=float)
    eta_bar = 1.5 * rhohat(p.rho_bar) * (1.0 - 1.4 * p.delta) ** t * t * p.delta
    eps_bar = (1.0 - 1.8 * p.delta) ** t * p.eps
    return BoundSeq(eta_bar=eta_bar, eps_bar=eps_bar)


@dataclass
class BoundViolation:
    t: int
    name: str
    value: float
    bound: float

    @property
    def margin(self) -> float:
        return self.bound - self.value


@dataclass
class HatbarReport:
    checked: int
    violations: List[BoundViolation] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.passed


def check_hatbar_bounds(quadruplets: Sequence[Quadruplet], bounds: BoundSeq,
                        p: RegimeParams) -> HatbarReport:
    """
    Compare quadruplets against the bound sequences for t = 1..T.

    Checks eta <= eta_bar, eps <= eps_bar, both tau bounds
    (0.5*eps*rho and 0.1*rho on eta_bar) and the nu bound.
    """
    T = min(len(quadruplets), len(bounds.eta_bar)) - 1
    rho = p.rho_bar
    report = HatbarReport(checked=T)
    for t in range(1, T + 1):
        q = quadruplets[t]
        eb, epb = float(bounds.eta_bar[t]), float(bounds.eps_bar[t])
        checks = (
            ("eta", q.eta, eb),
            ("eps", q.epsv, epb),
            ("tau (eps-weighted)", q.tau, 0.5 * p.eps * rho * eb + 0.54 * rho * epb),
            ("tau", q.tau, 0.1 * rho * eb + 0.54 * rho * epb),
            ("nu", q.nu, (1.1 + 0.01 * rho ** 2) * eb + (1.1 + 0.1 * rho ** 2) * epb),
        )
        for name, value, bound in checks:
            if float(value) > bound * (1.0 + BOUND_RTOL):
                report.violations.append(BoundViolation(t, name, float(value), bound))
    if report.violations:
        logger.info(f"{len(report.violations)} bound violations; first at t={report.violations[0].t}")
    return report


def conv_envelope(p: RegimeParams, x0_norm: float, T: int, Cfit: Optional[float] = None,
                  fvals: Optional[Sequence[float]] = None) -> Tuple[np.ndarray, float]:
    """
    C (1-1.4 delta)^t t eps ||x0||^2 for t = 1..T.

    Args:
        p: Parameters
        x0_norm: ||x0||
        T: Last epoch
        Cfit: Constant; fitted from ``fvals`` when omitted
        fvals: Observed trace f_0..f_m used for the fit

    Returns:
        (envelope over t = 1..T, constant used)
    """
    shape = lambda t: (1.0 - 1.4 * p.delta) ** t * t * p.eps * x0_norm ** 2
    if Cfit is None:
        if fvals is None or len(fvals) < 2:
            raise InvalidParameterError("Need an observed trace to fit the envelope constant")
        ts = np.arange(1, len(fvals))
        Cfit = float(np.max(np.asarray(fvals[1:], dtype=float) / shape(ts)))
    t = np.arange(1, T + 1, dtype=float)
    return Cfit * shape(t), Cfit


def abar_norm_bound(Abar_t: np.ndarray, q_t: Quadruplet, n: int) -> bool:
    """lambda_max(Abar) <= eta + n*nu + eps + 2*sqrt(n)*tau"""
    lam = float(np.linalg.eigvalsh(0.5 * (Abar_t + Abar_t.T))[-1])
    bound = q_t.eta + n * q_t.nu + q_t.epsv + 2.0 * math.sqrt(n) * q_t.tau
    return lam <= bound * (1.0 + BOUND_RTOL)


def calibrate_rho_bar(abar: Sequence[np.ndarray], p: RegimeParams, d_av: float,
                      candidates: Sequence[float] = (0.0, 0.5, 1.0, 2.0)) -> Optional[float]:
    """Smallest candidate rho_bar for which the eigenvalue bound holds at every t"""
    T = len(abar) - 1
    for rho in sorted(candidates):
        trial = RegimeParams(p.n, p.delta, p.eps, rho)
        quads = iterate_quadruplet(trial, d_av, T)
        if all(abar_norm_bound(abar[t], quads[t], p.n) for t in range(T + 1)):
            logger.info(f"Eigenvalue bound calibrated at rho_bar={rho}")
            return rho
    logger.warning(f"No candidate rho_bar in {list(candidates)} bounds the expected Hessian")
    return None
