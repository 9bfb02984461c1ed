import numpy as np
import pytest

from riskmon import gp
from riskmon.numerics import DimensionMismatch, fd_gradient
from .test_numerics import naive_inverse


def hyper(lengthscales, sig=1.0, noise=0.1):
    return gp.GPHyper(
        log_lengthscales=np.log(np.asarray(lengthscales, dtype=float)),
        log_signal_var=float(np.log(sig)),
        log_noise_var=float(np.log(noise)),
    )


def naive_predict(x, y, h, xstar):
    """Direct-inversion GP posterior, the oracle for predict()."""
    k = gp.kernel_matrix(x, x, h)
    a_inv = naive_inverse(k + h.noise_var * np.eye(len(y)))
    kstar = gp.kernel_matrix(xstar[None, :], x, h)[0]
    mu = kstar @ a_inv @ y
    s2 = h.signal_var - kstar @ a_inv @ kstar
    return mu, s2


def test_kernel_zero_distance_gives_signal_var():
    h = hyper([1.0, 2.0], sig=1.7)
    x = np.array([0.3, -0.2])
    assert gp.kernel_eval(x, x, h) == pytest.approx(1.7)


def test_kernel_hand_values():
    assert gp.kernel_eval([0.0], [1.0], hyper([1.0])) == pytest.approx(
        np.exp(-0.5), abs=1e-12
    )
    assert gp.kernel_eval([0.0, 0.0], [1.0, 2.0], hyper([1.0, 2.0])) == pytest.approx(
        np.exp(-1.0), abs=1e-12
    )


def test_kernel_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        gp.kernel_eval([0.0], [0.0, 1.0], hyper([1.0]))


def test_kernel_symmetric_and_bounded():
    rng = np.random.default_rng(0)
    h = hyper(rng.uniform(0.5, 2.0, 4), sig=1.3)
    a, b = rng.standard_normal(4), rng.standard_normal(4)
    kab = gp.kernel_eval(a, b, h)
    assert kab == pytest.approx(gp.kernel_eval(b, a, h))
    assert 0.0 < kab <= 1.3


def test_lml_single_point_hand_value():
    # N=1, y=1, k(x,x)=1, noise 0.1 -> -0.5/1.1 - 0.5 ln 1.1 - 0.5 ln 2pi
    lml, _ = gp.log_marginal_likelihood(
        np.array([[0.0]]), np.array([1.0]), hyper([1.0], sig=1.0, noise=0.1)
    )
    expected = -0.5 / 1.1 - 0.5 * np.log(1.1) - 0.5 * np.log(2 * np.pi)
    assert lml == pytest.approx(expected, abs=1e-10)
    assert expected == pytest.approx(-1.4211, abs=5e-4)


def test_lml_zero_targets_drops_data_fit_term():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 2))
    h = hyper([1.0, 1.0])
    lml, _ = gp.log_marginal_likelihood(x, np.zeros(4), h)
    k = gp.kernel_matrix(x, x, h) + h.noise_var * np.eye(4)
    expected = -0.5 * np.log(np.linalg.det(k)) - 2.0 * np.log(2 * np.pi)
    assert lml == pytest.approx(expected, abs=1e-9)


def _check_lml_gradient(seed, n=5, d=3):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    y = rng.integers(0, 2, n).astype(float)
    theta0 = rng.uniform(-0.5, 0.5, d + 2)

    def lml_of(theta):
        return gp.log_marginal_likelihood(x, y, gp.GPHyper.from_vector(theta))[0]

    _, grad = gp.log_marginal_likelihood(x, y, gp.GPHyper.from_vector(theta0))
    fd = fd_gradient(lml_of, theta0, h=1e-5)
    np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-6)


def test_lml_gradient_matches_finite_differences():
    for seed in range(5):
        _check_lml_gradient(seed)


def test_predict_single_point_hand_value():
    model = gp._build_model(
        np.array([[0.0]]), np.array([1.0]), hyper([1.0], sig=1.0, noise=0.1)
    )
    mu, s2 = gp.predict(model, np.array([0.0]))
    assert mu == pytest.approx(1.0 / 1.1, abs=1e-9)
    assert s2 == pytest.approx(1.0 - 1.0 / 1.1, abs=1e-9)


def test_predict_far_field():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((6, 3))
    y = rng.integers(0, 2, 6).astype(float)
    model = gp._build_model(x, y, hyper([1.0, 1.0, 1.0], sig=1.0, noise=0.05))
    mu, s2 = gp.predict(model, np.full(3, 50.0))
    assert abs(mu) < 1e-4
    assert s2 == pytest.approx(1.0, abs=1e-4)


def test_predict_matches_naive_inversion():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(1, 9))
        d = int(rng.integers(1, 5))
        x = rng.standard_normal((n, d))
        y = rng.integers(0, 2, n).astype(float)
        h = hyper(rng.uniform(0.5, 2.0, d), sig=rng.uniform(0.5, 2.0), noise=0.1)
        model = gp._build_model(x, y, h)
        xstar = rng.standard_normal(d)
        mu, s2 = gp.predict(model, xstar)
        mu0, s20 = naive_predict(x, y, h, xstar)
        assert mu == pytest.approx(mu0, abs=1e-8)
        assert s2 == pytest.approx(max(s20, 0.0), abs=1e-8)


def test_predict_dimension_mismatch():
    model = gp._build_model(np.array([[0.0]]), np.array([1.0]), hyper([1.0]))
    with pytest.raises(DimensionMismatch):
        gp.predict(model, np.array([0.0, 1.0]))


def test_sigma2_nonnegative_and_capped():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((10, 2))
    y = rng.integers(0, 2, 10).astype(float)
    model = gp._build_model(x, y, hyper([1.0, 1.0], sig=0.9, noise=0.05))
    _, s2 = gp.predict_batch(model, rng.standard_normal((50, 2)))
    assert np.all(s2 >= 0.0)
    assert np.all(s2 <= 0.9 + 0.05 + 1e-12)


def test_far_field_monotone_along_ray():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((8, 2))
    y = rng.integers(0, 2, 8).astype(float)
    model = gp._build_model(x, y, hyper([1.0, 1.0], sig=1.0, noise=0.05))
    direction = np.array([1.0, 0.7]) / np.hypot(1.0, 0.7)
    radii = [5.0, 10.0, 20.0, 40.0, 80.0]
    mus, s2s = zip(*(gp.predict(model, r * direction) for r in radii))
    assert all(abs(a) >= abs(b) - 1e-12 for a, b in zip(mus, mus[1:]))
    assert all(a <= b + 1e-12 for a, b in zip(s2s, s2s[1:]))
    assert s2s[-1] == pytest.approx(1.0, abs=1e-6)


def test_fit_single_point_terminates():
    model = gp.fit(np.array([[0.0]]), np.array([1.0]), max_iters=50)
    assert model.hyper.noise_var >= gp.NOISE_FLOOR
    assert np.isfinite(model.fit_metadata["lml"])


def test_fit_is_deterministic():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((20, 2))
    y = (x[:, 0] > 0).astype(float)
    a = gp.fit(x, y, max_iters=30)
    b = gp.fit(x, y, max_iters=30)
    np.testing.assert_array_equal(a.hyper.to_vector(), b.hyper.to_vector())


@pytest.mark.slow
def test_fit_recovers_lengthscale_within_factor_two():
    rng = np.random.default_rng(7)
    x = rng.uniform(-5, 5, (200, 1))
    h_true = hyper([2.0], sig=1.0, noise=0.01)
    k = gp.kernel_matrix(x, x, h_true) + 1e-8 * np.eye(200)
    y = np.linalg.cholesky(k) @ rng.standard_normal(200)
    model = gp.fit(x, y, max_iters=500)
    lam = model.hyper.lengthscales[0]
    assert 1.0 <= lam <= 4.0


def test_fit_ard_suppresses_noise_dimension():
    rng = np.random.default_rng(8)
    n = 80
    x = np.column_stack([np.linspace(-2, 2, n), rng.standard_normal(n)])
    y = np.sin(2.0 * x[:, 0])
    model = gp.fit(x, y, max_iters=300)
    lam_signal, lam_noise = model.hyper.lengthscales
    assert lam_noise > 5.0 * lam_signal


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    x = rng.standard_normal((12, 3))
    y = rng.integers(0, 2, 12).astype(float)
    model = gp.fit(x, y, max_iters=20)
    path = tmp_path / "gp.json"
    gp.save_gp(model, path)
    loaded = gp.load_gp(path)
    np.testing.assert_array_equal(loaded.x, model.x)
    np.testing.assert_array_equal(loaded.hyper.to_vector(), model.hyper.to_vector())
    q = rng.standard_normal(3)
    np.testing.assert_allclose(gp.predict(loaded, q), gp.predict(model, q), atol=1e-12)


def test_training_cap_subsamples():
    rng = np.random.default_rng(10)
    n = gp.TRAINING_CAP + 500
    x = rng.standard_normal((n, 1))
    y = rng.integers(0, 2, n).astype(float)
    model = gp.fit(x, y, max_iters=1)
    assert model.x.shape[0] <= gp.TRAINING_CAP
