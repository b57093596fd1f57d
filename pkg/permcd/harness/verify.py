"""
Verification suites.

Each suite returns CheckResult entries; a run fails when any entry fails.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List

import numpy as np

from permcd.core.config_loader import VerifyConfig
from permcd.core.types import CheckResult, VerifySuite
from permcd.harness.output import build_id
from permcd.numerics.cd_engine import scaled_twin_run
from permcd.numerics.matrices import (
    PermutationRec,
    SeededUniformInBand,
    build_perturbed_identity,
    build_spiked_eigvec,
    sandwich_check,
    split_permuted,
)
from permcd.numerics.perm_expect import (
    ExpectationReport,
    verify_basic_identities,
    verify_cp_expansion,
    verify_lemma_leading_terms,
    verify_pfpdp,
)
from permcd.numerics.rates import first_iter_bounds, first_iter_expected_actual
from permcd.numerics.recurrence import (
    RegimeParams,
    bound_sequences,
    check_hatbar_bounds,
    iterate_quadruplet,
    regime_check,
    tail_horizon,
    tail_ratio,
)

logger = logging.getLogger(__name__)

FIRST_ITER_RTOL = 1e-9
EXPECTED_DRAWS = 50
TAIL_BAND = (1.3, 2.2)


@dataclass
class VerifyReport:
    build_id: str
    results: Dict[str, List[CheckResult]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(all(r) for r in self.results.values())

    def __bool__(self):
        return self.passed

    def failures(self) -> List[CheckResult]:
        return [r for rs in self.results.values() for r in rs if not r]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "build_id": self.build_id,
            "passed": self.passed,
            "suites": {name: [r.to_dict() for r in rs] for name, rs in self.results.items()},
        }


def _from_expectation(report: ExpectationReport) -> CheckResult:
    name = f"{report.identity_name} n={report.n}"
    if report.eps is not None:
        name += f" eps={report.eps:g}"
    return CheckResult(name=name, success=report.passed, max_error=report.max_abs_error,
                       tolerance=report.tolerance, detail={**report.detail, "mode": report.mode})


def _linspace(n: int) -> np.ndarray:
    return np.arange(n, dtype=float) / (n - 1)


def run_identities(config: VerifyConfig) -> List[CheckResult]:
    """Enumeration identities, the splitting and the elementwise sandwich"""
    results = []
    for n in config.identity_sizes:
        results.extend(_from_expectation(r) for r in verify_basic_identities(n))
        results.append(_from_expectation(verify_pfpdp(n, _linspace(n))))

        H = build_perturbed_identity(n, 0.1, 0.1)
        rng = np.random.default_rng(config.seed + n)
        P = PermutationRec.random(n, rng)
        split = split_permuted(H, P)
        err = float(np.max(np.abs(split.reconstruct() - P.matrix().T @ H.dense() @ P.matrix())))
        results.append(CheckResult(name=f"splitting n={n}", success=err <= 1e-12, max_error=err,
                                   tolerance=1e-12))
        results.append(CheckResult(name=f"sandwich n={n}", success=sandwich_check(H)))
    return results


def run_lemmas(config: VerifyConfig) -> List[CheckResult]:
    """Single-epoch expansions: exact sub-identities and remainder order"""
    n, eps = config.lemma_n, config.lemma_eps
    d = _linspace(n)
    results = [_from_expectation(r)
               for r in verify_lemma_leading_terms(n, eps, eps, d, seed=config.seed)]
    results.append(_from_expectation(verify_cp_expansion(n, eps, eps, d, seed=config.seed)))
    return results


def run_recurrence(config: VerifyConfig) -> List[CheckResult]:
    """Quadruplet bounds and tail rate on the regime grid"""
    n, T = config.recurrence_n, config.recurrence_epochs
    d_av = 0.5
    results = []
    for delta in config.recurrence_deltas:
        for rho in config.recurrence_rho_bars:
            p = RegimeParams(n, delta, delta, rho)
            name = f"recurrence delta={delta:g} rho_bar={rho:g}"
            regime = regime_check(p)
            if not regime:
                logger.info(f"{name}: outside regime, skipped ({regime.violations})")
                continue
            quads = iterate_quadruplet(p, d_av, tail_horizon(delta, T))
            report = check_hatbar_bounds(quads[:T + 1], bound_sequences(p, T), p)
            worst = max(((v.value - v.bound) / v.bound for v in report.violations), default=0.0)
            results.append(CheckResult(
                name=f"{name} bounds", success=report.passed, max_error=worst,
                detail={"checked": report.checked, "violations": len(report.violations)},
            ))
            deficit = (1.0 - tail_ratio(quads)) / delta
            lo, hi = TAIL_BAND
            results.append(CheckResult(
                name=f"{name} tail rate", success=lo <= deficit <= hi,
                detail={"deficit_over_delta": deficit, "horizon": len(quads) - 1},
            ))
    return results


def run_first_iter(config: VerifyConfig) -> List[CheckResult]:
    """Single-step bound on random draws and the exact average over coordinates"""
    n, delta = config.first_iter_n, config.first_iter_delta
    H = build_perturbed_identity(n, delta, delta)
    rng = np.random.default_rng(config.seed)
    violations = 0
    worst_pointwise = 0.0
    worst_expected = 0.0
    for k in range(config.first_iter_draws):
        x0 = rng.standard_normal(n)
        i = int(rng.integers(n))
        b = first_iter_bounds(H, x0, i)
        slack = b.f1_actual - b.f1_bound
        worst_pointwise = max(worst_pointwise, slack)
        if slack > FIRST_ITER_RTOL * max(b.f1_bound, 1e-300):
            violations += 1
        if k < EXPECTED_DRAWS:
            mean_f1 = first_iter_expected_actual(H, x0)
            worst_expected = max(worst_expected, mean_f1 / b.expected_bound - 1.0)
    return [
        CheckResult(name=f"single step bound n={n}", success=violations == 0,
                    max_error=worst_pointwise, detail={"draws": config.first_iter_draws,
                                                       "violations": violations}),
        CheckResult(name=f"expected single step bound n={n}",
                    success=worst_expected <= FIRST_ITER_RTOL, max_error=max(worst_expected, 0.0),
                    tolerance=FIRST_ITER_RTOL,
                    detail={"draws": min(EXPECTED_DRAWS, config.first_iter_draws)}),
    ]


def _random_spd(n: int, rng: np.random.Generator) -> np.ndarray:
    M = rng.standard_normal((n, n))
    return M @ M.T / n + np.eye(n)


def run_scaling(config: VerifyConfig) -> List[CheckResult]:
    """
    Twin runs under diagonal scaling follow identical objective values.

    Families:
        companion: B_u against U^-1 B_u U^-1 started from U x0
        random SPD: F drawn from [0.5, 2], gap relative to f(x0)
        identity: F = I reproduces the trace bit for bit
    """
    n = config.scaling_n
    companion_gap = companion_iterate_gap = spd_gap = identity_gap = 0.0
    for k in range(config.scaling_instances):
        rng = np.random.default_rng(config.seed + k)
        delta = float(rng.uniform(0.01, 0.2))
        eps = float(rng.uniform(0.01, 0.2))
        B, _ = build_spiked_eigvec(n, delta, eps, SeededUniformInBand(config.seed + k))
        x0 = rng.standard_normal(n)
        indices = rng.integers(n, size=config.scaling_iterations)
        twin = scaled_twin_run(B.dense(), B.u, x0, indices)
        companion_gap = max(companion_gap, twin.max_gap)
        companion_iterate_gap = max(companion_iterate_gap, twin.max_iterate_gap)

        A = _random_spd(n, rng)
        twin = scaled_twin_run(A, rng.uniform(0.5, 2.0, size=n), x0, indices)
        spd_gap = max(spd_gap, twin.max_gap / max(twin.fvals[0], 1.0))
        identity_gap = max(identity_gap, scaled_twin_run(A, np.ones(n), x0, indices).max_gap)

    detail = {"instances": config.scaling_instances, "iterations": config.scaling_iterations}
    return [
        CheckResult(name=f"companion twin run n={n}", success=companion_gap <= config.scaling_tol,
                    max_error=companion_gap, tolerance=config.scaling_tol,
                    detail={**detail, "max_iterate_gap": companion_iterate_gap}),
        CheckResult(name=f"random SPD twin run n={n}", success=spd_gap <= config.scaling_tol,
                    max_error=spd_gap, tolerance=config.scaling_tol, detail=detail),
        CheckResult(name=f"identity scaling n={n}", success=identity_gap == 0.0,
                    max_error=identity_gap, tolerance=0.0, detail=detail),
    ]


SUITES: Dict[VerifySuite, Callable[[VerifyConfig], List[CheckResult]]] = {
    VerifySuite.IDENTITIES: run_identities,
    VerifySuite.LEMMAS: run_lemmas,
    VerifySuite.RECURRENCE: run_recurrence,
    VerifySuite.FIRST_ITER: run_first_iter,
    VerifySuite.SCALING: run_scaling,
}


def run_verify(config: VerifyConfig) -> VerifyReport:
    report = VerifyReport(build_id=build_id(config))
    for suite in config.suites:
        logger.info(f"Running {suite.value} suite")
        results = SUITES[suite](config)
        report.results[suite.value] = results
        failed = [r.name for r in results if not r]
        if failed:
            logger.warning(f"{suite.value}: {len(failed)} failed check(s): {failed}")
        else:
            logger.info(f"{suite.value}: {len(results)} check(s) passed")
    return report
