import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riskmon import numerics
from riskmon.numerics import (
    DimensionMismatch,
    NonFiniteEvaluation,
    NotPositiveDefinite,
    cholesky,
    fd_gradient,
    solve_spd,
)


def random_spd(rng, n):
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


def naive_inverse(a):
    """Gauss-Jordan inversion, the independent oracle for solve_spd."""
    n = a.shape[0]
    aug = np.hstack([a.astype(float), np.eye(n)])
    for col in range(n):
        piv = col + np.argmax(np.abs(aug[col:, col]))
        aug[[col, piv]] = aug[[piv, col]]
        aug[col] /= aug[col, col]
        for row in range(n):
            if row != col:
                aug[row] -= aug[row, col] * aug[col]
    return aug[:, n:]


def test_cholesky_hand_factorization():
    f = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]), jitter=0.0)
    expected = np.array([[2.0, 0.0], [1.0, np.sqrt(2.0)]])
    np.testing.assert_allclose(f.lower, expected, atol=1e-12)


def test_cholesky_identity():
    f = cholesky(np.eye(3), jitter=0.0)
    np.testing.assert_allclose(f.lower, np.eye(3))


def test_cholesky_indefinite_raises():
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]), jitter=0.0)


def test_cholesky_jitter_escalation_reconstructs():
    # Rank-deficient PSD matrix: exact factorization can fail, jitter saves it.
    a = np.ones((3, 3))
    f = cholesky(a, jitter=0.0)
    np.testing.assert_allclose(f.lower @ f.lower.T, a + f.jitter * np.eye(3), atol=1e-8)


def test_cholesky_rejects_asymmetric():
    with pytest.raises(ValueError):
        cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_cholesky_reconstruction_randomized():
    rng = np.random.default_rng(0)
    for n in (1, 2, 5, 9, 16):
        a = random_spd(rng, n)
        f = cholesky(a)
        np.testing.assert_allclose(f.lower @ f.lower.T, a + f.jitter * np.eye(n), atol=1e-8)


def test_solve_spd_identity_and_diagonal():
    np.testing.assert_allclose(solve_spd(cholesky(np.eye(2)), [3.0, 5.0]), [3.0, 5.0])
    f = cholesky(np.diag([2.0, 4.0]))
    np.testing.assert_allclose(solve_spd(f, [2.0, 8.0]), [1.0, 2.0])


def test_solve_spd_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        solve_spd(cholesky(np.eye(2)), [1.0, 2.0, 3.0])


def test_solve_spd_matches_naive_inversion():
    rng = np.random.default_rng(7)
    for n in (2, 4, 8, 16):
        a = random_spd(rng, n)
        b = rng.standard_normal(n)
        x = solve_spd(cholesky(a), b)
        np.testing.assert_allclose(x, naive_inverse(a) @ b, atol=1e-8)


def test_fd_gradient_square():
    g = fd_gradient(lambda v: float(v[0] ** 2), np.array([3.0]), h=1e-5)
    assert abs(g[0] - 6.0) < 1e-6


def test_fd_gradient_constant():
    g = fd_gradient(lambda v: 1.5, np.array([0.3, -2.0, 4.0]))
    np.testing.assert_allclose(g, 0.0)


def test_fd_gradient_nonfinite():
    with pytest.raises(NonFiniteEvaluation):
        fd_gradient(lambda v: float(np.log(v[0])), np.array([0.0]))


def test_fd_gradient_quadratic_form_matches_analytic():
    rng = np.random.default_rng(3)
    a = random_spd(rng, 5)
    x0 = rng.standard_normal(5)
    g = fd_gradient(lambda v: 0.5 * float(v @ a @ v), x0)
    np.testing.assert_allclose(g, a @ x0, rtol=1e-6, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=12), st.integers(min_value=0, max_value=2**31))
def test_property_cholesky_roundtrip(n, seed):
    rng = np.random.default_rng(seed)
    a = random_spd(rng, n)
    f = numerics.cholesky(a)
    assert np.all(np.diag(f.lower) > 0)
    np.testing.assert_allclose(f.lower @ f.lower.T, a + f.jitter * np.eye(n), atol=1e-8)
