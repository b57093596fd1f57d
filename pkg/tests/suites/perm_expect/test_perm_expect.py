"""
Permutation Expectation Tests

Exact enumeration identities, expansion checks and the expected-Hessian
recursion against Monte Carlo and direct simulation.
"""

import numpy as np
import pytest

from permcd.core.errors import EnumerationLimitError, InvalidParameterError
from permcd.core.test_decorators import auto_configure_test
from permcd.numerics.cd_engine import run_rpcd_batch
from permcd.numerics.matrices import build_perturbed_identity, quad_value
from permcd.numerics.perm_expect import (
    Exact,
    MonteCarlo,
    abar_sequence,
    compensated_mean,
    expect_epoch,
    expected_f_curve,
    lemma_d_expectation,
    lemma_expectations,
    monte_carlo_epoch,
    permutation_sample,
    verify_basic_identities,
    verify_cp_expansion,
    verify_lemma_leading_terms,
    verify_pfpdp,
)


@auto_configure_test
@pytest.mark.parametrize("n", [3, 4, 5, 6])
def test_basic_identities_hold(n):
    reports = verify_basic_identities(n)

    assert len(reports) == 3
    for report in reports:
        assert report, report.to_dict()
        assert report.max_abs_error <= 1e-12


@auto_configure_test
def test_pfpdp_identity():
    assert verify_pfpdp(4, [0.0, 1 / 3, 2 / 3, 1.0]).max_abs_error <= 1e-14
    assert verify_pfpdp(5, np.zeros(5))
    assert verify_pfpdp(5, np.ones(5))
    with pytest.raises(InvalidParameterError):
        verify_pfpdp(4, [0.0, 1.0])


@auto_configure_test
def test_enumeration_limit():
    with pytest.raises(EnumerationLimitError):
        permutation_sample(9, Exact())
    with pytest.raises(EnumerationLimitError):
        expect_epoch(build_perturbed_identity(9, 0.1, 0.1), np.eye(9))
    with pytest.raises(InvalidParameterError):
        verify_basic_identities(9)
    assert len(permutation_sample(4, Exact())) == 24
    assert len(permutation_sample(9, MonteCarlo(10, seed=1))) == 10


@auto_configure_test
def test_compensated_mean_matches_numpy(rng):
    items = rng.standard_normal((2000, 3, 3))
    np.testing.assert_allclose(compensated_mean(iter(items), chunk=64), items.mean(axis=0),
                               rtol=1e-12, atol=1e-15)
    with pytest.raises(InvalidParameterError):
        compensated_mean(iter([]))


@auto_configure_test
def test_expect_epoch_is_linear(small_hessian):
    np.testing.assert_array_equal(expect_epoch(small_hessian, np.zeros((6, 6))), np.zeros((6, 6)))
    A = small_hessian.dense()
    once = expect_epoch(small_hessian, A)
    np.testing.assert_allclose(expect_epoch(small_hessian, 3.0 * A), 3.0 * once, rtol=1e-13)
    np.testing.assert_allclose(once, once.T, atol=0)
    with pytest.raises(InvalidParameterError):
        expect_epoch(small_hessian, np.eye(5))


@auto_configure_test
def test_monte_carlo_epoch_agrees_with_enumeration(small_hessian):
    A = small_hessian.dense()
    exact = expect_epoch(small_hessian, A)
    mean, stderr = monte_carlo_epoch(small_hessian, A, samples=4000, seed=11)

    assert np.all(np.abs(mean - exact) <= 5.0 * stderr + 1e-10)


@auto_configure_test
def test_expected_curve_starts_at_objective(small_hessian, rng):
    x0 = rng.standard_normal(6)
    curve = expected_f_curve(small_hessian, x0, 5)

    assert curve.shape == (6,)
    assert curve[0] == pytest.approx(quad_value(small_hessian, x0), rel=1e-13)
    assert np.all(np.diff(curve) < 0)
    assert len(abar_sequence(small_hessian, 3, MonteCarlo(200, seed=2))) == 4


@auto_configure_test
def test_expected_hessians_stay_psd_and_shrink(small_hessian):
    seq = abar_sequence(small_hessian, 8)
    traces = [np.trace(A) for A in seq.matrices]

    for prev, nxt in zip(seq.matrices, seq.matrices[1:]):
        assert np.linalg.eigvalsh(nxt).min() >= -1e-12
        assert np.linalg.eigvalsh(prev - nxt).min() >= -1e-12
    assert np.all(np.diff(traces) < 0)


@auto_configure_test
def test_monte_carlo_error_shrinks_with_samples(small_hessian):
    A = small_hessian.dense()
    exact = expect_epoch(small_hessian, A)

    def rms_error(samples):
        errors, stderrs = [], []
        for seed in range(12):
            mean, stderr = monte_carlo_epoch(small_hessian, A, samples=samples, seed=100 + seed)
            errors.append(np.linalg.norm(mean - exact))
            stderrs.append(np.linalg.norm(stderr))
        return np.sqrt(np.mean(np.square(errors))), np.mean(stderrs)

    coarse_err, coarse_se = rms_error(250)
    fine_err, fine_se = rms_error(4000)

    # 16x the samples: error and standard error shrink by about 4
    assert 2.0 <= coarse_err / fine_err <= 8.0
    assert 3.5 <= coarse_se / fine_se <= 4.5

@auto_configure_test
def test_recursion_matches_simulated_runs():
    H = build_perturbed_identity(5, 0.1, 0.1)
    x0 = np.random.default_rng(31).standard_normal(5)
    curve = expected_f_curve(H, x0, 10)
    stats = run_rpcd_batch(H, x0, epochs=10, runs=20000, seed=8)

    gap = np.abs(stats.mean[1:] - curve[1:])
    assert np.all(gap <= 3.0 * stats.stderr[1:] + 1e-14)


@auto_configure_test
def test_cp_expansion_residual_order():
    d = np.linspace(0.0, 1.0, 6)
    report = verify_cp_expansion(6, 0.05, 0.05, d)
    assert report, report.to_dict()

    tiny = verify_cp_expansion(6, 1e-6, 1e-6, d, samples=10)
    assert tiny.max_abs_error <= 1e-11


@auto_configure_test
def test_lemma_expansions():
    reports = verify_lemma_leading_terms(6, 0.05, 0.05, np.linspace(0.0, 1.0, 6), seed=3)

    names = {r.identity_name for r in reports}
    assert {"first-row sandwich mean", "last-column outer mean", "I term", "D term"} <= names
    failed = [r.to_dict() for r in reports if not r]
    assert not failed
    with pytest.raises(InvalidParameterError):
        verify_lemma_leading_terms(8, 0.05, 0.05, np.linspace(0.0, 1.0, 8))


@auto_configure_test
@pytest.mark.parametrize("n", [3, 4, 5])
def test_lemma_exact_identities_small_n(n):
    reports = verify_lemma_leading_terms(n, 0.05, 0.05, np.linspace(0.0, 1.0, n), seed=n)
    exact = {r.identity_name: r for r in reports
             if r.identity_name in ("first-row sandwich mean", "last-column outer mean")}

    assert len(exact) == 2
    for report in exact.values():
        assert report, report.to_dict()
        assert report.max_abs_error <= 1e-12


@auto_configure_test
def test_lemma_expectation_special_cases():
    n = 5
    H = build_perturbed_identity(n, 0.1, 0.0)
    d = np.linspace(0.0, 1.0, n)
    terms = lemma_expectations(H, d, np.zeros(n))

    np.testing.assert_array_equal(terms["1v"], np.zeros((n, n)))
    np.testing.assert_allclose(lemma_d_expectation(n, 0.1, np.ones(n)), terms["I"], atol=1e-13)
