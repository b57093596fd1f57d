"""
Expectations over uniformly random permutations.

Exact mode enumerates all n! permutations (n <= 8); Monte Carlo mode samples
them. Accumulation uses per-entry ``math.fsum`` over a fixed partition so
results do not depend on evaluation order.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from permcd.core.errors import EnumerationLimitError, InvalidParameterError
from permcd.numerics.matrices import (
    ENUMERATION_LIMIT,
    PermutationRec,
    StructuredHessian,
    all_permutations,
    build_perturbed_identity,
    epoch_matrix,
    superdiagonal_ones,
)

logger = logging.getLogger(__name__)

EXACT_TOL = 1e-12
RATIO_WINDOW = (0.15, 0.6)
CHUNK = 720


@dataclass(frozen=True)
class Exact:
    def label(self) -> str:
        return "exact"


@dataclass(frozen=True)
class MonteCarlo:
    samples: int
    seed: int = 0

    def label(self) -> str:
        return f"montecarlo({self.samples})"


ExpectationMode = Union[Exact, MonteCarlo]


@dataclass
class ExpectationReport:
    """Outcome of one identity or expansion check"""
    identity_name: str
    max_abs_error: float
    n: int
    delta: Optional[float] = None
    eps: Optional[float] = None
    mode: str = "exact"
    tolerance: Optional[float] = EXACT_TOL
    passed: bool = True
    detail: Dict[str, Any] = field(default_factory=dict)

    def __bool__(self):
        return self.passed

    def to_dict(self) -> Dict[str, Any]:
        return {
            "identity": self.identity_name, "passed": self.passed,
            "max_abs_error": self.max_abs_error, "tolerance": self.tolerance,
            "n": self.n, "delta": self.delta, "eps": self.eps, "mode": self.mode,
            "detail": self.detail,
        }


def _exact_report(name: str, error: float, n: int, **kwargs) -> ExpectationReport:
    return ExpectationReport(identity_name=name, max_abs_error=float(error), n=n,
                             passed=bool(error <= EXACT_TOL), **kwargs)


# ---------------------------------------------------------------------------
# Compensated accumulation
# ---------------------------------------------------------------------------

def _fsum_stack(stack: np.ndarray) -> np.ndarray:
    """Entrywise compensated sum along axis 0"""
    flat = stack.reshape(stack.shape[0], -1)
    return np.array([math.fsum(col) for col in flat.T]).reshape(stack.shape[1:])


def compensated_mean(items: Iterable[np.ndarray], chunk: int = CHUNK) -> np.ndarray:
    """Mean of equally shaped arrays, summed chunk by chunk in a fixed order"""
    partials: List[np.ndarray] = []
    buffer: List[np.ndarray] = []
    count = 0
    for item in items:
        buffer.append(np.asarray(item, dtype=float))
        count += 1
        if len(buffer) == chunk:
            partials.append(_fsum_stack(np.stack(buffer)))
            buffer = []
    if buffer:
        partials.append(_fsum_stack(np.stack(buffer)))
    if count == 0:
        raise InvalidParameterError("Cannot average an empty collection")
    return _fsum_stack(np.stack(partials)) / count


def _stack_mean(stack: np.ndarray) -> np.ndarray:
    partials = [_fsum_stack(stack[k:k + CHUNK]) for k in range(0, stack.shape[0], CHUNK)]
    return _fsum_stack(np.stack(partials)) / stack.shape[0]


def _check_exact(n: int) -> None:
    if n > ENUMERATION_LIMIT:
        raise EnumerationLimitError(f"Exact mode is capped at n={ENUMERATION_LIMIT}, got n={n}")


def permutation_sample(n: int, mode: ExpectationMode) -> List[PermutationRec]:
    """All permutations (Exact) or i.i.d. uniform draws (MonteCarlo)"""
    if isinstance(mode, Exact):
        _check_exact(n)
        return list(all_permutations(n))
    if mode.samples < 2:
        raise InvalidParameterError("Monte Carlo needs at least two samples")
    rng = np.random.default_rng(mode.seed)
    return [PermutationRec(rng.permutation(n)) for _ in range(mode.samples)]


def expectation(fn: Callable[[PermutationRec], np.ndarray], n: int,
                mode: ExpectationMode = Exact()) -> np.ndarray:
    """E_P fn(P)"""
    return compensated_mean(fn(P) for P in permutation_sample(n, mode))


# ---------------------------------------------------------------------------
# Abar recursion
# ---------------------------------------------------------------------------

def epoch_operators(H: StructuredHessian, perms: Sequence[PermutationRec]) -> np.ndarray:
    """Stack of P C_P P^T for the given permutations"""
    return np.stack([P.conjugate(epoch_matrix(H, P)) for P in perms])


def _congruence(ops: np.ndarray, A: np.ndarray) -> np.ndarray:
    return np.transpose(ops, (0, 2, 1)) @ A @ ops


def _symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def monte_carlo_epoch(H: StructuredHessian, Aprev: np.ndarray, samples: int,
                      seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Sample mean and entrywise standard error of one expectation step"""
    ops = epoch_operators(H, permutation_sample(H.n, MonteCarlo(samples, seed)))
    transformed = _congruence(ops, np.asarray(Aprev, dtype=float))
    mean = _symmetrize(_stack_mean(transformed))
    stderr = transformed.std(axis=0, ddof=1) / math.sqrt(samples)
    return mean, stderr


def expect_epoch(H: StructuredHessian, Aprev: np.ndarray,
                 mode: ExpectationMode = Exact()) -> np.ndarray:
    """
    E_P (P C_P^T P^T Aprev P C_P P^T), symmetrized.

    Raises:
        EnumerationLimitError: Exact mode with n > 8
    """
    Aprev = np.asarray(Aprev, dtype=float)
    if Aprev.shape != (H.n, H.n):
        raise InvalidParameterError(f"Aprev has shape {Aprev.shape}, expected ({H.n}, {H.n})")
    if isinstance(mode, MonteCarlo):
        return monte_carlo_epoch(H, Aprev, mode.samples, mode.seed)[0]
    ops = epoch_operators(H, permutation_sample(H.n, mode))
    return _symmetrize(_stack_mean(_congruence(ops, Aprev)))


@dataclass(frozen=True, eq=False)
class AbarSequence:
    """Abar^(0..T); Abar^(0) is the Hessian itself"""
    matrices: Tuple[np.ndarray, ...]
    mode: str

    def __len__(self) -> int:
        return len(self.matrices)

    def __getitem__(self, t: int) -> np.ndarray:
        return self.matrices[t]

    def expected_f(self, x0: np.ndarray) -> np.ndarray:
        x0 = np.asarray(x0, dtype=float)
        return np.array([0.5 * x0 @ A @ x0 for A in self.matrices])


def abar_sequence(H: StructuredHessian, T: int, mode: ExpectationMode = Exact()) -> AbarSequence:
    """Run the expectation recursion for T epochs"""
    A = H.dense()
    matrices = [A]
    if isinstance(mode, Exact):
        ops = epoch_operators(H, permutation_sample(H.n, mode))
        for t in range(T):
            A = _symmetrize(_stack_mean(_congruence(ops, A)))
            matrices.append(A)
    else:
        for t in range(T):
            A = expect_epoch(H, A, MonteCarlo(mode.samples, mode.seed + t))
            matrices.append(A)
    logger.debug(f"Abar recursion n={H.n} T={T} mode={mode.label()}")
    return AbarSequence(matrices=tuple(matrices), mode=mode.label())


def expected_f_curve(H: StructuredHessian, x0: np.ndarray, T: int,
                     mode: ExpectationMode = Exact()) -> np.ndarray:
    """x0^T Abar^(t) x0 / 2 for t = 0..T"""
    return abar_sequence(H, T, mode).expected_f(x0)


# ---------------------------------------------------------------------------
# Basic permutation identities
# ---------------------------------------------------------------------------

def verify_basic_identities(n: int) -> List[ExpectationReport]:
    """E Pe_j = 1/n, conditional E Pe_2 given Pe_1 = e_i, and E PFP^T"""
    if not 2 <= n <= ENUMERATION_LIMIT:
        raise InvalidParameterError(f"Basic identities need 2 <= n <= {ENUMERATION_LIMIT}, got {n}")
    perms = list(all_permutations(n))
    ones = np.ones(n)
    I = np.eye(n)
    reports = []

    mean_P = compensated_mean(P.matrix() for P in perms)
    err_pe = float(np.max(np.abs(mean_P - 1.0 / n)))
    err_p1 = max(float(np.max(np.abs(P.apply(ones) - ones))) for P in perms)
    reports.append(_exact_report("Pe_j mean", max(err_pe, err_p1), n,
                                 detail={"mean_Pe1": mean_P[:, 0].tolist()}))

    err_cond = 0.0
    for i in range(n):
        subset = [P for P in perms if P.pi[0] == i]
        cond = compensated_mean(P.matrix()[:, 1] for P in subset)
        target = (ones - I[i]) / (n - 1)
        err_cond = max(err_cond, float(np.max(np.abs(cond - target))))
    reports.append(_exact_report("Pe_2 given Pe_1", err_cond, n))

    F = superdiagonal_ones(n)
    mean_pfp = compensated_mean(P.matrix() @ F @ P.matrix().T for P in perms)
    target = (np.outer(ones, ones) - I) / n
    reports.append(_exact_report("PFP^T mean", float(np.max(np.abs(mean_pfp - target))), n))
    return reports


def verify_pfpdp(n: int, d: Sequence[float]) -> ExpectationReport:
    """E_P (P F^T P^T D P e_1) = (d_av 1 - d/n)/(n-1), and P F P^T D P e_1 = 0"""
    d = np.asarray(d, dtype=float)
    if d.shape != (n,) or n < 2:
        raise InvalidParameterError(f"d must have length n >= 2, got {d.shape}")
    _check_exact(n)
    D = np.diag(d)
    F = superdiagonal_ones(n)
    perms = list(all_permutations(n))
    lhs = compensated_mean(P.matrix() @ F.T @ P.matrix().T @ D @ P.matrix()[:, 0] for P in perms)
    rhs = (d.mean() * np.ones(n) - d / n) / (n - 1)
    zero_err = max(float(np.max(np.abs(P.matrix() @ F @ P.matrix().T @ D @ P.matrix()[:, 0])))
                   for P in perms)
    err = max(float(np.max(np.abs(lhs - rhs))), zero_err)
    return _exact_report("PF^TP^TDPe_1 mean", err, n, detail={"forward_term_max": zero_err})


# ---------------------------------------------------------------------------
# Expansion checks
# ---------------------------------------------------------------------------

def _hessian(n: int, delta: float, eps: float, d: Sequence[float]) -> StructuredHessian:
    if eps == 0:
        return build_perturbed_identity(n, delta, 0.0)
    return StructuredHessian(n, delta, eps, np.asarray(d, dtype=float), d_label="explicit")


def cp_leading_terms(n: int, delta: float, eps: float, d_perm: np.ndarray) -> np.ndarray:
    """I - e_1 1^T + eps(-D_P + F^T D_P)(I - e_1 1^T) + delta(F^T - e_2 1^T)"""
    I = np.eye(n)
    ones = np.ones(n)
    Ft = superdiagonal_ones(n).T
    DP = np.diag(d_perm)
    base = I - np.outer(I[0], ones)
    return base + eps * (-DP + Ft @ DP) @ base + delta * (Ft - np.outer(I[1], ones))


def _cp_residuals(n: int, delta: float, eps: float, d: np.ndarray,
                  perms: Sequence[PermutationRec]) -> np.ndarray:
    H = _hessian(n, delta, eps, d)
    norms = []
    for P in perms:
        scaled = epoch_matrix(H, P) / (1.0 - delta)
        residual = scaled - cp_leading_terms(n, delta, eps, H.d[P.pi])
        norms.append(np.linalg.norm(residual, 2))
    return np.asarray(norms)


def _halving_ratio_ok(ratio: float) -> bool:
    return RATIO_WINDOW[0] <= ratio <= RATIO_WINDOW[1]


def verify_cp_expansion(n: int, delta: float, eps: float, d: Sequence[float],
                        samples: int = 50, seed: int = 0,
                        ratio_bound: float = 10.0) -> ExpectationReport:
    """
    Residual of the first-order expansion of (1-delta)^-1 C_P over random P.

    The report passes when the median of ||R||/eps^2 is at most ``ratio_bound``
    and halving (delta, eps) shrinks the residual by a median factor inside
    [0.15, 0.6].
    """
    d = np.asarray(d, dtype=float)
    rng = np.random.default_rng(seed)
    perms = [PermutationRec(rng.permutation(n)) for _ in range(samples)]
    full = _cp_residuals(n, delta, eps, d, perms)
    half = _cp_residuals(n, delta / 2, eps / 2, d, perms)
    scale = max(eps, delta) ** 2
    ratios_eps2 = full / scale
    with np.errstate(divide="ignore", invalid="ignore"):
        halving = np.where(full > 0, half / full, 0.0)
    median_eps2 = float(np.median(ratios_eps2))
    median_halving = float(np.median(halving))
    exact_to_rounding = float(full.max()) < 1e-13
    passed = exact_to_rounding or (median_eps2 <= ratio_bound and _halving_ratio_ok(median_halving))
    return ExpectationReport(
        identity_name="C_P expansion", max_abs_error=float(full.max()), n=n, delta=delta, eps=eps,
        mode=f"sampled({samples})", tolerance=ratio_bound, passed=passed,
        detail={"median_ratio_eps2": median_eps2, "max_ratio_eps2": float(ratios_eps2.max()),
                "median_halving_ratio": median_halving},
    )


def lemma_expectations(H: StructuredHessian, d: np.ndarray, v: np.ndarray) -> Dict[str, np.ndarray]:
    """
    Exact (1-delta)^-2 E_P of P C_P^T P^T X P C_P P^T for X in {I, D, 1v^T + v1^T}.
    """
    ones = np.ones(H.n)
    middles = {
        "I": np.eye(H.n),
        "D": np.diag(d),
        "1v": np.outer(ones, v) + np.outer(v, ones),
    }
    ops = epoch_operators(H, permutation_sample(H.n, Exact()))
    scale = (1.0 - H.delta) ** 2
    return {key: _symmetrize(_stack_mean(_congruence(ops, X))) / scale for key, X in middles.items()}


def lemma_leading_terms(n: int, delta: float, eps: float, d: np.ndarray,
                        v: np.ndarray) -> Dict[str, np.ndarray]:
    """Stated expansions of the three lemma expectations without their eps^2 remainders"""
    ones = np.ones(n)
    J = np.outer(ones, ones)
    I = np.eye(n)
    D = np.diag(d)
    d_av = d.mean()
    d_av2 = (d ** 2).mean()
    d1 = np.outer(d, ones) + np.outer(ones, d)
    d2 = d ** 2
    s_v = v.sum()
    nn1 = n * (n - 1)

    t_identity = (I + (1 - 2 / n) * J
                  + eps * (-2 * (1 + 1 / n) * D + (3 * n - 2) / nn1 * d1 - 2 * n / (n - 1) * d_av * J)
                  - (2 * delta / n) * I)
    t_diag = (D + d_av * J - d1 / n - (2 * delta / n) * D
              + eps * (-2 * (1 + 1 / n) * D @ D - d_av / (n - 1) * d1 - 2 * d_av2 * J
                       + (2 / n) * np.outer(d, d)
                       + (2 * n - 1) / nn1 * (np.outer(ones, d2) + np.outer(d2, ones))))
    t_rank_two = (-eps * ((np.outer(d, v) + np.outer(v, d)) / n - s_v / nn1 * d1
                          + (np.outer(d * v, ones) + np.outer(ones, v * d)) / nn1)
                  - delta * ((np.outer(ones, v) + np.outer(v, ones)) / (n - 1) - 2 * s_v / nn1 * J))
    return {"I": t_identity, "D": t_diag, "1v": t_rank_two}


def lemma_d_expectation(n: int, delta: float, d: Sequence[float]) -> np.ndarray:
    """(1-delta)^-2 E_P (P C_P^T P^T D P C_P P^T) on the unperturbed Hessian"""
    H = build_perturbed_identity(n, delta, 0.0)
    d = np.asarray(d, dtype=float)
    return lemma_expectations(H, d, np.zeros(n))["D"]


def verify_lemma_leading_terms(n: int, delta: float, eps: float, d: Sequence[float],
                               v: Optional[Sequence[float]] = None,
                               seed: int = 0) -> List[ExpectationReport]:
    """
    Exact sub-identities plus residual-order checks of the single-epoch lemmas.

    Asymptotic reports pass when halving (delta, eps) shrinks the residual by
    a factor in [0.15, 0.6]; ``detail`` carries ||R||/eps^2.
    """
    if not 3 <= n <= 7:
        raise InvalidParameterError(f"Expansion checks need 3 <= n <= 7, got {n}")
    d = np.asarray(d, dtype=float)
    if v is None:
        v = np.random.default_rng(seed).standard_normal(n)
        v /= np.linalg.norm(v)
    v = np.asarray(v, dtype=float)
    ones = np.ones(n)
    I = np.eye(n)
    J = np.outer(ones, ones)
    perms = list(all_permutations(n))
    reports: List[ExpectationReport] = []

    base = I - np.outer(I[0], ones)
    t11 = compensated_mean(P.conjugate(base.T @ base) for P in perms)
    t11_err = float(np.max(np.abs(t11 - (I + (1 - 2 / n) * J))))
    reports.append(_exact_report("first-row sandwich mean", t11_err, n))

    nn1 = n * (n - 1)
    t34 = compensated_mean(
        np.outer(P.matrix()[:, n - 1], v) @ (I - np.outer(P.matrix()[:, 0], ones)) for P in perms
    )
    target = np.outer(ones, v) / n - v.sum() / nn1 * J + np.outer(v, ones) / nn1
    reports.append(_exact_report("last-column outer mean", float(np.max(np.abs(t34 - target))), n))

    unit = v / np.linalg.norm(v) if np.linalg.norm(v) > 0 else I[0]
    r1_err = abs(np.linalg.norm(np.outer(ones, unit), 2) - math.sqrt(n))
    reports.append(_exact_report("rank-one norm", r1_err, n))

    cases = [("I term", "I", v), ("D term", "D", v),
             ("1v term", "1v", v), ("1v term (v=1)", "1v", ones)]
    residual_cache: Dict[Tuple[float, float, int], Dict[str, np.ndarray]] = {}

    def residuals(dl: float, ep: float, vec: np.ndarray, key: int) -> Dict[str, float]:
        if (dl, ep, key) not in residual_cache:
            H = _hessian(n, dl, ep, d)
            actual = lemma_expectations(H, d, vec)
            stated = lemma_leading_terms(n, dl, ep, d, vec)
            residual_cache[(dl, ep, key)] = {k: actual[k] - stated[k] for k in actual}
        return {k: float(np.linalg.norm(r, 2)) for k, r in residual_cache[(dl, ep, key)].items()}

    for name, term, vec in cases:
        key = 1 if vec is ones else 0
        full = residuals(delta, eps, vec, key)[term]
        half = residuals(delta / 2, eps / 2, vec, key)[term]
        ratio = half / full if full > 0 else 0.0
        exact_to_rounding = full < 1e-13
        reports.append(ExpectationReport(
            identity_name=name, max_abs_error=full, n=n, delta=delta, eps=eps, mode="exact",
            tolerance=None, passed=exact_to_rounding or _halving_ratio_ok(ratio),
            detail={"ratio_eps2": full / max(eps, delta) ** 2, "halving_ratio": ratio},
        ))
    return reports
