"""
Matrix Family Tests

Hessian construction, permutations, splittings and the epoch matrix.
"""

import numpy as np
import pytest

from permcd.core.errors import EnumerationLimitError, InvalidParameterError
from permcd.core.test_decorators import auto_configure_test
from permcd.numerics.cd_engine import CdState, cd_step, epoch_via_matrix
from permcd.numerics.matrices import (
    Explicit,
    PermutationRec,
    SeededUniformInBand,
    SeededUniformRescaled,
    all_permutations,
    build_perturbed_identity,
    build_spiked_eigvec,
    epoch_matrix,
    epoch_matrix_scaled_form,
    lbar,
    quad_value,
    sandwich_check,
    spike_eigenvalues,
    spike_matrix,
    split_permuted,
    strict_lower_ones,
)


@auto_configure_test
def test_weights_are_normalized():
    for spec in (None, SeededUniformRescaled(3)):
        H = build_perturbed_identity(50, 0.05, 0.1, spec)
        assert H.d.min() == 0.0
        assert H.d.max() == 1.0
    np.testing.assert_allclose(build_perturbed_identity(5, 0.1, 0.1).d, [0, 0.25, 0.5, 0.75, 1])


@auto_configure_test
def test_invalid_parameters_rejected():
    with pytest.raises(InvalidParameterError):
        build_perturbed_identity(10, 0.0, 0.1)
    with pytest.raises(InvalidParameterError):
        build_perturbed_identity(10, 10 / 9, 0.1)
    with pytest.raises(InvalidParameterError):
        build_perturbed_identity(10, 0.1, -0.1)
    with pytest.raises(InvalidParameterError):
        build_perturbed_identity(3, 0.1, 0.1, Explicit([0.2, 0.5, 1.0]))
    with pytest.raises(InvalidParameterError):
        build_perturbed_identity(3, 0.1, 0.1, Explicit([0.0, 1.0]))


@auto_configure_test
def test_dense_matches_matvec(rng):
    H = build_perturbed_identity(30, 0.2, 0.3, SeededUniformRescaled(1))
    x = rng.standard_normal(30)
    np.testing.assert_allclose(H.dense() @ x, H.matvec(x), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(np.diag(H.dense()), H.diagonal, rtol=0, atol=1e-15)


@auto_configure_test
def test_spike_eigenvalues():
    A = spike_matrix(10, 0.1).dense()
    np.testing.assert_allclose(np.linalg.eigvalsh(A), spike_eigenvalues(10, 0.1), atol=1e-12)
    assert spike_eigenvalues(10, 0.1)[-1] == pytest.approx(0.1 + 0.9 * 10)


@auto_configure_test
def test_permutation_helpers(rng):
    P = PermutationRec.random(7, rng)
    M = P.matrix()
    x = rng.standard_normal(7)
    A = rng.standard_normal((7, 7))

    np.testing.assert_array_equal(P.apply(x), M @ x)
    np.testing.assert_array_equal(P.apply_transpose(x), M.T @ x)
    np.testing.assert_allclose(P.conjugate(A), M @ A @ M.T)
    np.testing.assert_array_equal(P.pi[P.inverse], np.arange(7))
    np.testing.assert_array_equal(PermutationRec.from_one_based([2, 3, 1]).pi, [1, 2, 0])
    with pytest.raises(InvalidParameterError):
        PermutationRec(np.array([0, 0, 1]))


@auto_configure_test
def test_permutation_enumeration():
    assert len(list(all_permutations(4))) == 24
    assert len({tuple(P.pi) for P in all_permutations(5)}) == 120
    with pytest.raises(EnumerationLimitError):
        list(all_permutations(9))


@auto_configure_test
def test_splitting_reconstructs_permuted_hessian(rng):
    H = build_perturbed_identity(8, 0.3, 0.2)
    P = PermutationRec.random(8, rng)
    split = split_permuted(H, P)

    np.testing.assert_allclose(split.reconstruct(), P.matrix().T @ H.dense() @ P.matrix(),
                               atol=1e-14)
    np.testing.assert_allclose(split.lower, 0.7 * strict_lower_ones(8))


@auto_configure_test
def test_epoch_matrix_matches_sweep(rng):
    H = build_perturbed_identity(12, 0.05, 0.1, SeededUniformRescaled(2))
    x0 = rng.standard_normal(12)
    for _ in range(5):
        P = PermutationRec.random(12, rng)
        state = CdState.from_vector(H, x0)
        for i in P.pi:
            state = cd_step(H, state, int(i))
        np.testing.assert_allclose(epoch_via_matrix(H, P, x0), state.x, rtol=1e-10, atol=1e-12)


@auto_configure_test
def test_epoch_matrix_scaled_form(small_hessian, rng):
    P = PermutationRec.random(6, rng)
    np.testing.assert_allclose(epoch_matrix_scaled_form(small_hessian, P),
                               epoch_matrix(small_hessian, P), rtol=1e-10, atol=1e-12)


@auto_configure_test
def test_lbar_closed_form():
    n, delta = 7, 0.2
    expected = -np.linalg.inv(np.eye(n) + (1 - delta) * strict_lower_ones(n))
    np.testing.assert_allclose(lbar(n, delta), expected, atol=1e-14)


@auto_configure_test
def test_sandwich_inequality():
    for delta, eps in ((0.01, 0.01), (0.1, 0.5), (0.5, 1.0)):
        assert sandwich_check(build_perturbed_identity(20, delta, eps))


@auto_configure_test
def test_companion_matrix():
    B, A = build_spiked_eigvec(20, 0.1, 0.2, SeededUniformInBand(1))
    U_inv = np.diag(1.0 / B.u)

    np.testing.assert_allclose(U_inv @ B.dense() @ U_inv, A.dense(), atol=1e-10)
    assert np.abs(B.u).min() == pytest.approx(np.sqrt(0.1 / 0.3))
    assert np.abs(B.u).max() == pytest.approx(1.0)
    assert A.d.min() == 0.0 and A.d.max() == 1.0

    u = np.linspace(np.sqrt(0.1 / 0.3), 0.9, 20)
    with pytest.raises(InvalidParameterError):
        build_spiked_eigvec(20, 0.1, 0.2, Explicit(u))


@auto_configure_test
def test_two_coordinate_epoch_matrix():
    H = build_perturbed_identity(2, 0.5, 0.0)
    C = epoch_matrix(H, PermutationRec.identity(2))
    np.testing.assert_allclose(C, [[0.0, -0.5], [0.0, 0.25]], atol=1e-15)

    split = split_permuted(H, PermutationRec.identity(2))
    np.testing.assert_allclose(split.lower, [[0.0, 0.0], [0.5, 0.0]], atol=1e-15)
    np.testing.assert_allclose(split.diag, [1.0, 1.0], atol=1e-15)
    assert quad_value(H, np.ones(2)) == pytest.approx(1.5, abs=1e-15)
    assert quad_value(H, np.zeros(2)) == 0.0


@auto_configure_test
def test_split_diagonal_follows_permutation():
    H = build_perturbed_identity(3, 0.5, 0.2, Explicit([0.0, 0.5, 1.0]))
    split = split_permuted(H, PermutationRec.from_one_based([3, 1, 2]))
    np.testing.assert_allclose(split.diag, [1.2, 1.0, 1.1], atol=1e-15)


@auto_configure_test
def test_epoch_matrix_first_column_vanishes():
    H = build_perturbed_identity(4, 0.3, 0.4, Explicit([0.0, 1 / 3, 2 / 3, 1.0]))
    for P in all_permutations(4):
        C = epoch_matrix(H, P)
        np.testing.assert_array_equal(C[:, 0], np.zeros(4))
        assert np.max(np.abs(np.linalg.eigvals(C))) < 1.0


@auto_configure_test
def test_lbar_literal_values():
    np.testing.assert_allclose(lbar(3, 0.5),
                               [[-1.0, 0.0, 0.0], [0.5, -1.0, 0.0], [0.25, 0.5, -1.0]], atol=1e-15)
    np.testing.assert_allclose(lbar(2, 1e-12), [[-1.0, 0.0], [1.0, -1.0]], atol=1e-10)
    assert np.linalg.norm(lbar(50, 0.1), 2) <= 2.0


@auto_configure_test
def test_sandwich_rejects_corrupted_weights():
    H = build_perturbed_identity(2, 0.5, 0.1, Explicit([0.0, 1.0]))
    assert sandwich_check(H)

    broken = build_perturbed_identity(5, 0.1, 0.3).with_weights([0.0, 0.25, 2.0, 0.75, 1.0],
                                                                 validate=False)
    assert not sandwich_check(broken)
    with pytest.raises(InvalidParameterError):
        H.with_weights([0.0, 2.0])


@auto_configure_test
def test_companion_weights_span_unit_interval():
    B, A = build_spiked_eigvec(6, 0.2, 1e-6, SeededUniformInBand(8))
    assert A.eps == 1e-6
    assert A.d.min() == 0.0 and A.d.max() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(A.diagonal, 0.2 / B.u ** 2 + 0.8, rtol=1e-12)
