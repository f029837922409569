import math

import numpy as np
import pytest

from multitune.errors import NumericalError
from multitune.gp import (
    GPFitConfig,
    GPModel,
    KernelParams,
    TargetTransform,
    _nlml_and_grad,
    _sqdist_per_dim,
    chol_with_jitter,
    fit_gp,
    gp_predict,
    kernel_eval,
    kernel_matrix,
    log_marginal_likelihood,
    posterior,
)

RNG = np.random.default_rng(20240601)


def dense_lml(X, y, params, noise):
    """Brute-force oracle: explicit inverse and determinant."""
    K = kernel_matrix(X, X, params) + noise * np.eye(len(y))
    return float(-0.5 * y @ np.linalg.inv(K) @ y
                 - 0.5 * math.log(np.linalg.det(K))
                 - 0.5 * len(y) * math.log(2 * math.pi))


class TestKernel:
    def test_zero_distance_gives_variance(self):
        params = KernelParams(2.0, (0.7, 1.3))
        assert kernel_eval([0.2, 0.4], [0.2, 0.4], params) == pytest.approx(2.0)

    def test_decay_to_zero(self):
        params = KernelParams(1.0, (1.0,))
        assert kernel_eval([0.0], [50.0], params) < 1e-300

    def test_unit_distance_value(self):
        params = KernelParams(1.0, (1.0,))
        assert kernel_eval([0.0], [1.0], params) == pytest.approx(math.exp(-1), abs=1e-12)

    def test_lengthscale_divides_squared_distance_linearly(self):
        # k = exp(-d^2 / l), not exp(-d^2 / l^2)
        params = KernelParams(1.0, (4.0,))
        assert kernel_eval([0.0], [2.0], params) == pytest.approx(math.exp(-1), abs=1e-12)

    def test_symmetry(self):
        params = KernelParams(1.5, (0.5, 2.0, 1.0))
        a, b = RNG.random(3), RNG.random(3)
        assert kernel_eval(a, b, params) == pytest.approx(kernel_eval(b, a, params))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kernel_eval([0.0], [0.0, 1.0], KernelParams(1.0, (1.0,)))

    def test_positive_params_required(self):
        with pytest.raises(ValueError):
            KernelParams(0.0, (1.0,))
        with pytest.raises(ValueError):
            KernelParams(1.0, (-1.0,))

    def test_gram_symmetric_and_psd_on_random_batches(self):
        for n in (3, 17, 50):
            X = RNG.random((n, 4))
            params = KernelParams(float(RNG.uniform(0.5, 2)),
                                  tuple(RNG.uniform(0.1, 3, size=4)))
            K = kernel_matrix(X, X, params)
            assert np.allclose(K, K.T)
            noise = 1e-8
            assert np.linalg.eigvalsh(K + noise * np.eye(n)).min() >= -1e-10


class TestLogMarginalLikelihood:
    def test_one_point_zero_target(self):
        value = log_marginal_likelihood(np.array([[0.3]]), np.array([0.0]),
                                        KernelParams(1.0, (1.0,)), 0.0)
        assert value == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)

    def test_one_point_unit_target(self):
        value = log_marginal_likelihood(np.array([[0.3]]), np.array([1.0]),
                                        KernelParams(1.0, (1.0,)), 0.0)
        assert value == pytest.approx(-0.5 - 0.5 * math.log(2 * math.pi), abs=1e-12)

    @pytest.mark.parametrize("n", [2, 3, 5])
    def test_matches_dense_oracle(self, n):
        X = RNG.random((n, 2))
        y = RNG.standard_normal(n)
        params = KernelParams(1.3, (0.8, 1.9))
        ours = log_marginal_likelihood(X, y, params, 0.05)
        assert ours == pytest.approx(dense_lml(X, y, params, 0.05), abs=1e-8)

    def test_invariant_under_training_permutation(self):
        X = RNG.random((6, 2))
        y = RNG.standard_normal(6)
        params = KernelParams(1.0, (1.0, 1.0))
        perm = RNG.permutation(6)
        a = log_marginal_likelihood(X, y, params, 0.1)
        b = log_marginal_likelihood(X[perm], y[perm], params, 0.1)
        assert a == pytest.approx(b, abs=1e-10)


class TestPosterior:
    def test_prior_with_no_data(self):
        params = KernelParams(1.7, (1.0,))
        mean, var = posterior(np.empty((0, 1)), np.empty(0), params, 0.0, [[0.5]])
        assert mean[0] == 0.0
        assert var[0] == pytest.approx(1.7)

    def test_noise_free_interpolation(self):
        X = RNG.random((5, 2))
        y = RNG.standard_normal(5)
        params = KernelParams(1.0, (0.5, 0.5))
        mean, var = posterior(X, y, params, 0.0, X)
        assert np.allclose(mean, y, atol=1e-6)
        assert np.all(var < 1e-6)

    def test_two_point_hand_solve(self):
        params = KernelParams(1.0, (1.0,))
        X = np.array([[0.0], [1.0]])
        y = np.array([1.0, -1.0])
        xs = np.array([[0.25]])
        k01 = math.exp(-1.0)
        K = np.array([[1.0, k01], [k01, 1.0]])
        ks = np.array([math.exp(-0.0625), math.exp(-0.5625)])
        expected_mean = ks @ np.linalg.solve(K, y)
        expected_var = 1.0 - ks @ np.linalg.solve(K, ks)
        mean, var = posterior(X, y, params, 0.0, xs)
        assert mean[0] == pytest.approx(expected_mean, abs=1e-10)
        assert var[0] == pytest.approx(expected_var, abs=1e-10)

    def test_posterior_variance_never_exceeds_prior(self):
        X = RNG.random((12, 3))
        y = RNG.standard_normal(12)
        params = KernelParams(2.0, (0.3, 0.6, 1.2))
        _, var = posterior(X, y, params, 0.01, RNG.random((40, 3)))
        assert np.all(var <= 2.0 + 1e-8)

    def test_prediction_invariant_under_permutation(self):
        X = RNG.random((7, 2))
        y = RNG.standard_normal(7)
        params = KernelParams(1.0, (0.7, 0.7))
        xs = RNG.random((5, 2))
        perm = RNG.permutation(7)
        m1, v1 = posterior(X, y, params, 0.01, xs)
        m2, v2 = posterior(X[perm], y[perm], params, 0.01, xs)
        assert np.allclose(m1, m2, atol=1e-10)
        assert np.allclose(v1, v2, atol=1e-10)


class TestCholWithJitter:
    def test_no_jitter_for_well_conditioned(self):
        A = np.eye(3) * 2.0
        L, jitter = chol_with_jitter(A)
        assert jitter == 0.0
        assert np.allclose(L @ L.T, A)

    def test_jitter_escalation_recovers_semidefinite(self):
        v = np.ones(4)
        A = np.outer(v, v)  # rank one, singular
        L, jitter = chol_with_jitter(A)
        assert jitter > 0
        assert np.allclose(L @ L.T, A + jitter * np.eye(4), atol=1e-8)

    def test_indefinite_matrix_fails(self):
        A = np.diag([1.0, -5.0])
        with pytest.raises(NumericalError):
            chol_with_jitter(A)


class TestGradients:
    def test_analytic_gradient_matches_central_differences(self):
        for n in (4, 10):
            X = RNG.random((n, 3))
            z = RNG.standard_normal(n)
            sq = _sqdist_per_dim(X, X)
            theta = RNG.normal(scale=0.5, size=5)
            _, grad = _nlml_and_grad(theta, sq, z)
            eps = 1e-6
            for k in range(len(theta)):
                tp, tm = theta.copy(), theta.copy()
                tp[k] += eps
                tm[k] -= eps
                fd = (_nlml_and_grad(tp, sq, z)[0] - _nlml_and_grad(tm, sq, z)[0]) / (2 * eps)
                assert grad[k] == pytest.approx(fd, rel=1e-4, abs=1e-8)


class TestFitGp:
    def test_constant_targets_predict_constant(self):
        X = RNG.random((8, 2))
        y = np.full(8, 3.25)
        model = fit_gp(X, y, GPFitConfig(seed=0, restarts=3))
        mean, _ = model.predict(RNG.random((6, 2)))
        assert np.allclose(mean, 3.25, atol=1e-6)

    def test_smooth_function_regression(self):
        X = np.linspace(0, 1, 15)[:, None]
        y = np.sin(2 * np.pi * X[:, 0])
        model = fit_gp(X, y, GPFitConfig(seed=1))
        xs = np.linspace(0.05, 0.95, 40)[:, None]
        mean, _ = model.predict(xs)
        rmse = float(np.sqrt(np.mean((mean - np.sin(2 * np.pi * xs[:, 0])) ** 2)))
        assert rmse < 0.05

    def test_conflicting_duplicates_learn_noise(self):
        X = np.array([[0.5], [0.5], [0.2], [0.8]])
        y = np.array([1.0, -1.0, 0.3, -0.2])
        model = fit_gp(X, y, GPFitConfig(seed=2, restarts=5))
        assert model.noise > 1e-6

    def test_fit_requires_two_points(self):
        with pytest.raises(ValueError):
            fit_gp(np.array([[0.0]]), np.array([1.0]), GPFitConfig())

    def test_fit_deterministic_given_seed(self):
        X = RNG.random((10, 2))
        y = RNG.standard_normal(10)
        a = fit_gp(X, y, GPFitConfig(seed=5))
        b = fit_gp(X, y, GPFitConfig(seed=5))
        assert a.kernel.lengthscales == b.kernel.lengthscales
        assert a.kernel.variance == b.kernel.variance
        assert a.noise == b.noise

    def test_log_transform_roundtrips_on_prediction(self):
        X = np.linspace(0, 1, 12)[:, None]
        y = np.exp(np.sin(4 * X[:, 0])) * 1e-3
        model = fit_gp(X, y, GPFitConfig(seed=3, log_transform=True))
        mean, _ = model.predict(X)
        assert np.allclose(mean, y, rtol=1e-4)


class TestSerialization:
    def test_hyperparameters_roundtrip_bit_exact(self):
        X = RNG.random((9, 2))
        y = RNG.standard_normal(9)
        model = fit_gp(X, y, GPFitConfig(seed=4, restarts=3))
        clone = GPModel.from_dict(model.to_dict())
        assert clone.kernel.variance == model.kernel.variance
        assert clone.kernel.lengthscales == model.kernel.lengthscales
        assert clone.noise == model.noise
        xs = RNG.random((5, 2))
        m1, v1 = gp_predict(model, xs)
        m2, v2 = gp_predict(clone, xs)
        assert np.array_equal(m1, m2)
        assert np.array_equal(v1, v2)

    def test_transform_roundtrip(self):
        t = TargetTransform.fit(np.array([1.0, 2.0, 4.0]), log=True)
        z = t.to_latent([1.0, 2.0, 4.0])
        back = t.from_latent(z)
        assert np.allclose(back, [1.0, 2.0, 4.0], rtol=1e-12)
