"""
Quadruplet Recurrence Tests
"""

import numpy as np
import pytest

from permcd.core.errors import InvalidParameterError
from permcd.core.test_decorators import auto_configure_test
from permcd.numerics.cd_engine import run_epochs
from permcd.numerics.matrices import build_perturbed_identity
from permcd.numerics.perm_expect import abar_sequence
from permcd.numerics.recurrence import (
    Quadruplet,
    RegimeParams,
    abar_norm_bound,
    bound_sequences,
    calibrate_rho_bar,
    check_hatbar_bounds,
    conv_envelope,
    iterate_quadruplet,
    mhat,
    mhat_dominant_eigenvalue,
    regime_check,
    rhohat,
    tail_horizon,
    tail_ratio,
)


@auto_configure_test
def test_rhohat_polynomial():
    assert rhohat(0.0) == pytest.approx(3.05)
    assert rhohat(0.5) == pytest.approx(4.25125)
    assert rhohat(1.0) == pytest.approx(5.76)
    assert rhohat(2.0) == pytest.approx(9.73)
    with pytest.raises(InvalidParameterError):
        rhohat(-0.1)


@auto_configure_test
def test_regime_check_cases():
    assert regime_check(RegimeParams(100, 0.01, 0.01, 1.0))

    wide = regime_check(RegimeParams(100, 0.03, 0.03, 1.0))
    assert not wide
    assert any("n*eps" in v for v in wide.violations)

    small = regime_check(RegimeParams(4, 0.01, 0.01))
    assert not small
    assert any("below 5" in v for v in small.violations)

    assert not regime_check(RegimeParams(100, 0.01, 0.005))
    with pytest.raises(InvalidParameterError):
        RegimeParams(100, 0.01, 0.01, -1.0)


@auto_configure_test
def test_mhat_structure():
    p = RegimeParams(100, 0.01, 0.01, 0.0)
    expected = np.array([
        [1.0, 0.0, 0.02, 0.0],
        [1.0, 0.0, 0.5, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
    ])
    np.testing.assert_allclose(mhat(p, 0.5), expected, rtol=0, atol=1e-15)

    M = mhat(RegimeParams(100, 0.01, 0.01, 1.0), 0.5)
    assert M[0, 2] == pytest.approx(0.0201)
    np.testing.assert_array_equal(M[2], [0.0, 0.0, 1.0, 0.0])

    explicit = mhat(p, 0.5, rho_assign=np.arange(10, dtype=float))
    assert explicit[3, 2] == pytest.approx(8 * 0.1 + 9 * 1e-4)
    with pytest.raises(InvalidParameterError):
        mhat(p, 0.5, rho_assign=[1.0, 2.0])


@auto_configure_test
def test_dominant_eigenvalue_without_remainder():
    delta = 0.01
    value = mhat_dominant_eigenvalue(RegimeParams(100, delta, delta, 0.0), 0.5)
    assert value == pytest.approx((1 - delta) ** 2, rel=1e-6)
    assert mhat_dominant_eigenvalue(RegimeParams(100, delta, delta, 1.0), 0.5) > value


@auto_configure_test
def test_quadruplet_iteration():
    p = RegimeParams(100, 0.01, 0.01, 1.0)
    quads = iterate_quadruplet(p, 0.5, 50)

    assert len(quads) == 51
    assert quads[0] == Quadruplet.initial(0.01, 0.01)
    assert all(min(q.as_array()) >= 0 for q in quads)
    # eps row is decoupled: epsv_t = (1-delta)^(2t) eps
    assert quads[50].epsv == pytest.approx(0.01 * 0.99 ** 100, rel=1e-12)
    with pytest.raises(InvalidParameterError):
        Quadruplet(-1.0, 0.0, 0.0, 0.0)


@auto_configure_test
def test_bound_sequences_values():
    bounds = bound_sequences(RegimeParams(100, 0.01, 0.01, 1.0), 5)

    assert bounds.eta_bar[0] == 0.0
    assert bounds.eta_bar[1] == pytest.approx(1.5 * 5.76 * 0.986 * 0.01)
    assert bounds.eps_bar[1] == pytest.approx(0.982 * 0.01)


@auto_configure_test
@pytest.mark.parametrize("rho_bar", [0.0, 1.0])
def test_hatbar_bounds_hold(rho_bar):
    p = RegimeParams(100, 0.005, 0.005, rho_bar)
    quads = iterate_quadruplet(p, 0.5, 500)
    report = check_hatbar_bounds(quads, bound_sequences(p, 500), p)

    assert report.checked == 500
    assert report, [v.__dict__ for v in report.violations[:5]]
    if rho_bar == 0.0:
        assert all(q.tau == 0.0 for q in quads)


@auto_configure_test
def test_tail_rate_band():
    delta = 0.005
    p = RegimeParams(100, delta, delta, 0.0)
    quads = iterate_quadruplet(p, 0.5, tail_horizon(delta, 500))
    deficit = (1.0 - tail_ratio(quads)) / delta

    assert 1.3 <= deficit <= 2.2
    assert tail_horizon(0.1, 500) == 500
    with pytest.raises(InvalidParameterError):
        tail_ratio(quads[:5])


@auto_configure_test
@pytest.mark.parametrize("rho_bar", [0.0, 0.5, 1.0])
@pytest.mark.parametrize("delta", [1e-3, 3e-3, 5e-3, 1e-2])
def test_regime_grid_bounds_and_tail_rate(delta, rho_bar):
    p = RegimeParams(100, delta, delta, rho_bar)
    assert regime_check(p), regime_check(p).violations

    quads = iterate_quadruplet(p, 0.5, tail_horizon(delta, 500))
    report = check_hatbar_bounds(quads[:501], bound_sequences(p, 500), p)
    assert report.checked == 500
    assert report, [v.__dict__ for v in report.violations[:5]]

    deficit = (1.0 - tail_ratio(quads)) / delta
    assert 1.3 <= deficit <= 2.2


@auto_configure_test
def test_envelope_decay_and_fit(regime_hessian):
    p = RegimeParams(100, 0.01, 0.01, 1.0)
    env, C = conv_envelope(p, 1.0, 100_000, Cfit=2.0)
    assert C == 2.0
    assert env[-1] / env[-2] == pytest.approx(0.986, rel=1e-4)

    x0 = np.random.default_rng(5).standard_normal(100)
    trace = run_epochs(regime_hessian, x0, "rpcd", 200, seed=5)
    fitted, C = conv_envelope(p, float(np.linalg.norm(x0)), 200, fvals=trace.fvals)
    assert np.all(fitted >= trace.fvals[1:] * (1 - 1e-12))
    with pytest.raises(InvalidParameterError):
        conv_envelope(p, 1.0, 10)


@auto_configure_test
def test_eigenvalue_bound_on_enumerated_hessians():
    H = build_perturbed_identity(6, 0.05, 0.05)
    abar = abar_sequence(H, 10)
    p = RegimeParams(6, 0.05, 0.05, 2.0)
    quads = iterate_quadruplet(p, H.d_av, 10)

    assert all(abar_norm_bound(abar[t], quads[t], 6) for t in range(1, 11))
    assert abar_norm_bound(H.dense(), Quadruplet.initial(0.05, 0.05), 6)


@auto_configure_test
def test_calibration_picks_smallest_candidate(small_hessian):
    p = RegimeParams(6, 0.1, 0.1)
    assert calibrate_rho_bar([small_hessian.dense()], p, small_hessian.d_av) == 0.0
