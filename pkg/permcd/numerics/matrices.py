"""
Matrix families and epoch iteration matrices.

Hessians have the form A = delta*I + (1-delta)*11^T + eps*D with D diagonal,
its weights normalized to min 0 and max 1. They are stored by their
parameters and applied in O(n); dense copies are built only on demand.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import permutations
from typing import Iterator, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import solve_triangular

from permcd.core.errors import InvalidParameterError, NumericalDegeneracyError, EnumerationLimitError

logger = logging.getLogger(__name__)

DENSE_LIMIT = 2000
ENUMERATION_LIMIT = 8
NORMALIZATION_TOL = 1e-12


# ---------------------------------------------------------------------------
# Weight / eigenvector specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Linspace:
    """d_i = (i-1)/(n-1)"""

    def label(self) -> str:
        return "linspace"


@dataclass(frozen=True)
class SeededUniformRescaled:
    """i.i.d. uniforms affinely rescaled to min 0, max 1"""
    seed: int

    def label(self) -> str:
        return f"uniform:{self.seed}"


@dataclass(frozen=True)
class SeededUniformInBand:
    """|u_i| uniform in [sqrt(delta/(delta+eps)), 1] with both ends attained"""
    seed: int

    def label(self) -> str:
        return f"band:{self.seed}"


@dataclass(frozen=True)
class Explicit:
    """User supplied vector"""
    values: Tuple[float, ...]

    def __init__(self, values: Sequence[float]):
        object.__setattr__(self, "values", tuple(float(v) for v in values))

    def label(self) -> str:
        return "explicit:" + ",".join(repr(v) for v in self.values)


DSpec = Union[Linspace, SeededUniformRescaled, Explicit]
USpec = Union[SeededUniformInBand, Explicit]


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=float, copy=True)
    out.setflags(write=False)
    return out


def _check_delta(n: int, delta: float) -> None:
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidParameterError(f"n must be a positive integer, got {n!r}")
    if not math.isfinite(delta) or delta <= 0:
        raise InvalidParameterError(f"delta must be positive, got {delta}")
    if n > 1 and delta >= n / (n - 1):
        raise InvalidParameterError(f"delta must be below n/(n-1) = {n / (n - 1):.6g}, got {delta}")


# ---------------------------------------------------------------------------
# Structured Hessian
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StructuredHessian:
    """
    A = delta*I + (1-delta)*11^T + eps*diag(d), kept in O(n) form.

    Usage:
        H = build_perturbed_identity(100, 0.01, 0.05, Linspace())
        f = quad_value(H, x)
        A = H.dense()
    """
    n: int
    delta: float
    eps: float
    d: np.ndarray
    d_label: str = "zero"
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "d", _frozen(self.d))
        if self.validate:
            self._check()

    def _check(self) -> None:
        _check_delta(self.n, self.delta)
        if not math.isfinite(self.eps) or self.eps < 0:
            raise InvalidParameterError(f"eps must be non-negative, got {self.eps}")
        if self.d.shape != (self.n,):
            raise InvalidParameterError(f"d must have length {self.n}, got shape {self.d.shape}")
        if not np.all(np.isfinite(self.d)):
            raise InvalidParameterError("d contains non-finite entries")
        if self.eps > 0:
            lo, hi = float(self.d.min()), float(self.d.max())
            if abs(lo) > NORMALIZATION_TOL or abs(hi - 1.0) > NORMALIZATION_TOL:
                raise InvalidParameterError(
                    f"d must have min 0 and max 1 when eps > 0, got min {lo:.3g}, max {hi:.3g}"
                )
        elif np.any(self.d != 0.0):
            raise InvalidParameterError("d must be all zero when eps = 0")

    def with_weights(self, d: Sequence[float], validate: bool = True) -> "StructuredHessian":
        """Copy with different weights; validate=False builds deliberately broken instances"""
        return StructuredHessian(self.n, self.delta, self.eps, np.asarray(d, dtype=float),
                                 d_label="explicit", validate=validate)

    @property
    def diagonal(self) -> np.ndarray:
        return 1.0 + self.eps * self.d

    @property
    def d_av(self) -> float:
        return math.fsum(self.d) / self.n

    @property
    def d_av2(self) -> float:
        return math.fsum(self.d ** 2) / self.n

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.delta * x + (1.0 - self.delta) * x.sum() + self.eps * self.d * x

    def dense(self) -> np.ndarray:
        if self.n > DENSE_LIMIT:
            raise InvalidParameterError(f"Refusing dense materialization above n={DENSE_LIMIT}")
        A = np.full((self.n, self.n), 1.0 - self.delta)
        A[np.diag_indices(self.n)] = self.diagonal
        return A


@dataclass(frozen=True, eq=False)
class SpikedEigvecMatrix:
    """B_u = delta*I + (1-delta)*uu^T, generated for a given eps band"""
    n: int
    delta: float
    eps: float
    u: np.ndarray
    u_label: str = "explicit"

    def __post_init__(self):
        object.__setattr__(self, "u", _frozen(self.u))
        if not 0 < self.delta < 1:
            raise InvalidParameterError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.eps > 0:
            raise InvalidParameterError(f"eps must be positive for the band, got {self.eps}")
        if self.u.shape != (self.n,):
            raise InvalidParameterError(f"u must have length {self.n}")
        lo = math.sqrt(self.delta / (self.delta + self.eps))
        mags = np.abs(self.u)
        if abs(mags.min() - lo) > NORMALIZATION_TOL or abs(mags.max() - 1.0) > NORMALIZATION_TOL:
            raise InvalidParameterError(
                f"|u| must span [{lo:.6g}, 1] exactly, got [{mags.min():.6g}, {mags.max():.6g}]"
            )

    def dense(self) -> np.ndarray:
        if self.n > DENSE_LIMIT:
            raise InvalidParameterError(f"Refusing dense materialization above n={DENSE_LIMIT}")
        return self.delta * np.eye(self.n) + (1.0 - self.delta) * np.outer(self.u, self.u)


# ---------------------------------------------------------------------------
# Permutations and splittings
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PermutationRec:
    """
    Zero-based permutation pi with P^T u = u[pi] and P e_j = e_{pi[j]}.
    """
    pi: np.ndarray

    def __post_init__(self):
        pi = np.array(self.pi, dtype=np.intp, copy=True)
        n = pi.shape[0] if pi.ndim == 1 else -1
        if n < 1 or not np.array_equal(np.sort(pi), np.arange(n)):
            raise InvalidParameterError(f"Not a permutation of 0..n-1: {self.pi!r}")
        pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)

    @classmethod
    def identity(cls, n: int) -> "PermutationRec":
        return cls(np.arange(n))

    @classmethod
    def from_one_based(cls, values: Sequence[int]) -> "PermutationRec":
        return cls(np.asarray(values, dtype=np.intp) - 1)

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "PermutationRec":
        return cls(rng.permutation(n))

    @property
    def n(self) -> int:
        return int(self.pi.shape[0])

    @cached_property
    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.pi)
        inv[self.pi] = np.arange(self.n)
        inv.setflags(write=False)
        return inv

    def apply(self, x: np.ndarray) -> np.ndarray:
        """P x"""
        out = np.empty_like(np.asarray(x, dtype=float))
        out[self.pi] = x
        return out

    def apply_transpose(self, x: np.ndarray) -> np.ndarray:
        """P^T x"""
        return np.asarray(x, dtype=float)[self.pi]

    def conjugate(self, M: np.ndarray) -> np.ndarray:
        """P M P^T"""
        out = np.empty_like(np.asarray(M, dtype=float))
        out[np.ix_(self.pi, self.pi)] = M
        return out

    def matrix(self) -> np.ndarray:
        P = np.zeros((self.n, self.n))
        P[self.pi, np.arange(self.n)] = 1.0
        return P


def all_permutations(n: int) -> Iterator[PermutationRec]:
    """Every permutation of size n in lexicographic order"""
    if n > ENUMERATION_LIMIT:
        raise EnumerationLimitError(f"Exact enumeration is capped at n={ENUMERATION_LIMIT}, got n={n}")
    for pi in permutations(range(n)):
        yield PermutationRec(np.asarray(pi))


@dataclass(frozen=True, eq=False)
class SplitRec:
    """P^T A P = lower + diag(diag) + lower^T"""
    lower: np.ndarray
    diag: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.lower + np.diag(self.diag) + self.lower.T


def strict_lower_ones(n: int) -> np.ndarray:
    """E: ones strictly below the diagonal"""
    return np.tril(np.ones((n, n)), k=-1)


def superdiagonal_ones(n: int) -> np.ndarray:
    """F: ones on the first superdiagonal"""
    return np.eye(n, k=1)


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def _generate_d(n: int, d_spec: DSpec) -> np.ndarray:
    if isinstance(d_spec, Linspace):
        if n == 1:
            raise InvalidParameterError("Linspace weights need n >= 2")
        return np.arange(n, dtype=float) / (n - 1)
    if isinstance(d_spec, SeededUniformRescaled):
        if n == 1:
            raise InvalidParameterError("Rescaled uniform weights need n >= 2")
        w = np.random.default_rng(d_spec.seed).uniform(size=n)
        return (w - w.min()) / (w.max() - w.min())
    if isinstance(d_spec, Explicit):
        d = np.asarray(d_spec.values, dtype=float)
        if d.shape != (n,):
            raise InvalidParameterError(f"Explicit d has length {d.shape[0]}, expected {n}")
        return d
    raise InvalidParameterError(f"Unknown d specification: {d_spec!r}")


def build_perturbed_identity(n: int, delta: float, eps: float,
                             d_spec: Optional[DSpec] = None) -> StructuredHessian:
    """
    Build A = delta*I + (1-delta)*11^T + eps*D.

    Args:
        n: Dimension
        delta: Small eigenvalue parameter, 0 < delta < n/(n-1)
        eps: Diagonal perturbation scale, >= 0
        d_spec: Weight generator; ignored when eps is 0

    Returns:
        Validated StructuredHessian

    Raises:
        InvalidParameterError: On range, length or normalization violations
    """
    _check_delta(n, delta)
    if not math.isfinite(eps) or eps < 0:
        raise InvalidParameterError(f"eps must be non-negative, got {eps}")
    if eps == 0:
        return StructuredHessian(n, delta, 0.0, np.zeros(n), d_label="zero")
    spec = d_spec if d_spec is not None else Linspace()
    d = _generate_d(n, spec)
    H = StructuredHessian(n, delta, eps, d, d_label=spec.label())
    logger.debug(f"Built perturbed identity n={n} delta={delta} eps={eps} d={spec.label()}")
    return H


def spike_matrix(n: int, delta: float) -> StructuredHessian:
    """delta*I + (1-delta)*11^T"""
    return build_perturbed_identity(n, delta, 0.0)


def spike_eigenvalues(n: int, delta: float) -> np.ndarray:
    """Ascending eigenvalues of the spike matrix"""
    return np.sort(np.append(np.full(n - 1, delta), delta + (1.0 - delta) * n))


def companion(B: SpikedEigvecMatrix) -> StructuredHessian:
    """U^-1 B U^-1 as a StructuredHessian, d_i = (delta/u_i^2 - delta)/eps"""
    # B validates that |u| attains both band ends, so raw spans [0, 1] up to rounding
    raw = (B.delta / B.u ** 2 - B.delta) / B.eps
    if abs(raw.min()) > 1e-9 or abs(raw.max() - 1.0) > 1e-9:
        raise InvalidParameterError(f"u does not span the eps band: d in [{raw.min()}, {raw.max()}]")
    d = (raw - raw.min()) / (raw.max() - raw.min())
    return StructuredHessian(B.n, B.delta, B.eps, d, d_label=f"companion({B.u_label})")


def build_spiked_eigvec(n: int, delta: float, eps: float,
                        u_spec: USpec) -> Tuple[SpikedEigvecMatrix, StructuredHessian]:
    """
    Build B_u and its diagonally scaled companion.

    Returns:
        (B_u, companion) where companion = U^-1 B_u U^-1
    """
    if not math.isfinite(delta + eps) or delta + eps <= 0:
        raise InvalidParameterError(f"Invalid band: delta + eps = {delta + eps}")
    if not 0 < delta < 1 or not eps > 0:
        raise InvalidParameterError(f"Need 0 < delta < 1 and eps > 0, got delta={delta}, eps={eps}")
    lo = math.sqrt(delta / (delta + eps))
    if isinstance(u_spec, SeededUniformInBand):
        if n < 2:
            raise InvalidParameterError("Band sampling needs n >= 2 to attain both ends")
        w = np.random.default_rng(u_spec.seed).uniform(size=n)
        u = lo + (1.0 - lo) * (w - w.min()) / (w.max() - w.min())
        u[np.argmin(w)] = lo
        u[np.argmax(w)] = 1.0
    elif isinstance(u_spec, Explicit):
        u = np.asarray(u_spec.values, dtype=float)
        if u.shape != (n,):
            raise InvalidParameterError(f"Explicit u has length {u.shape[0]}, expected {n}")
    else:
        raise InvalidParameterError(f"Unknown u specification: {u_spec!r}")
    B = SpikedEigvecMatrix(n, delta, eps, u, u_label=u_spec.label())
    return B, companion(B)


# ---------------------------------------------------------------------------
# Splitting and epoch matrix
# ---------------------------------------------------------------------------

def split_permuted(H: StructuredHessian, P: PermutationRec) -> SplitRec:
    """Triangular-diagonal splitting of P^T A P"""
    if P.n != H.n:
        raise InvalidParameterError(f"Permutation has length {P.n}, Hessian has n={H.n}")
    lower = (1.0 - H.delta) * strict_lower_ones(H.n)
    diag = H.delta + (1.0 - H.delta) + H.eps * H.d[P.pi]
    return SplitRec(lower=lower, diag=diag)


def epoch_matrix(H: StructuredHessian, P: PermutationRec) -> np.ndarray:
    """
    C_P = -(L_P + Delta_P)^-1 L_P^T by forward substitution.

    Raises:
        NumericalDegeneracyError: If the triangular factor is singular
    """
    split = split_permuted(H, P)
    factor = split.lower + np.diag(split.diag)
    if np.any(np.abs(split.diag) < np.finfo(float).tiny):
        raise NumericalDegeneracyError("Zero pivot in triangular factor")
    C = solve_triangular(factor, -split.lower.T, lower=True, check_finite=False)
    if not np.all(np.isfinite(C)):
        raise NumericalDegeneracyError("Non-finite entries in epoch matrix")
    return C


def epoch_matrix_scaled_form(H: StructuredHessian, P: PermutationRec) -> np.ndarray:
    """-(1-delta) [(1-delta)E + I + eps*D_P]^-1 E^T"""
    E = strict_lower_ones(H.n)
    factor = (1.0 - H.delta) * E + np.diag(1.0 + H.eps * H.d[P.pi])
    return -(1.0 - H.delta) * solve_triangular(factor, E.T, lower=True)


def lbar(n: int, delta: float) -> np.ndarray:
    """-(I + (1-delta)E)^-1 in closed form"""
    if n < 1:
        raise InvalidParameterError(f"n must be positive, got {n}")
    i, j = np.indices((n, n))
    gap = np.maximum(i - j - 1, 0)
    L = np.where(i > j, (1.0 - delta) * np.power(delta, gap), 0.0)
    L[np.diag_indices(n)] = -1.0
    return L


def sandwich_check(H: StructuredHessian) -> bool:
    """
    Elementwise delta*I + (1-delta)*11^T <= A <= (1+eps)(delta'*I + (1-delta')*11^T),
    delta' = (delta+eps)/(1+eps).
    """
    tol = 1e-12
    diag = H.diagonal
    delta_p = (H.delta + H.eps) / (1.0 + H.eps)
    upper_diag = 1.0 + H.eps
    upper_off = (1.0 + H.eps) * (1.0 - delta_p)
    lower_off = 1.0 - H.delta
    # off-diagonal entries of A all equal 1 - delta
    a_off = 1.0 - H.delta
    diag_ok = np.all(diag >= 1.0 - tol) and np.all(diag <= upper_diag + tol)
    off_ok = H.n == 1 or (lower_off <= a_off + tol and a_off <= upper_off + tol)
    return bool(diag_ok and off_ok)


def quad_value(H: StructuredHessian, x: np.ndarray) -> float:
    """f(x) = x^T A x / 2 in O(n)"""
    x = np.asarray(x, dtype=float)
    if x.shape != (H.n,):
        raise InvalidParameterError(f"x has shape {x.shape}, expected ({H.n},)")
    sq = x * x
    return 0.5 * (H.delta * math.fsum(sq) + (1.0 - H.delta) * math.fsum(x) ** 2
                  + H.eps * math.fsum(H.d * sq))
