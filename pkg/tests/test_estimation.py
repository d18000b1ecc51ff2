"""Tests for datasets, configuration, initialization, and fitting."""

import warnings

import numpy as np
import pytest

from nmfsem import (
    Dataset,
    DegenerateInputError,
    DimensionError,
    FitConfig,
    ModelParams,
    Penalties,
    ValidationError,
    equilibrium,
    fit,
    init_basis,
    init_feedforward,
    loss,
    update_step,
)

# Scalar loss oracle: y1 = [[1, 1]], y2 = [[1, 1]], x = [[1]],
# theta1 = [[0]], theta2 = [[0.5]]. B = [[0.5, 0.5]], residuals are
# 0.5 each, so the squared error is 2 * 0.25 = 0.5. A single basis
# column has no off-diagonal Gram entries, so with lambda_1 = 2 and
# lambda_2 = 3 the total is 0.5 + 2 * 0 + 3 * 0.5 = 2.0.
LOSS_ORACLE = 2.0


def scalar_case():
    data = Dataset(np.array([[1.0, 1.0]]), np.array([[1.0, 1.0]]))
    params = ModelParams(np.array([[1.0]]), np.array([[0.0]]),
                         np.array([[0.5]]))
    return data, params


def feedback_dataset(seed=0, p1=6, p2=3, q=2, n=80, rho=0.3):
    """Exact equilibrium data with known feedback strength."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.1, 1.0, (p1, q))
    x = x / x.sum(axis=0)
    theta2 = rng.uniform(0.1, 1.0, (q, p2))
    theta1 = rng.uniform(0.1, 1.0, (q, p1))
    radius = np.max(np.abs(np.linalg.eigvals(x @ theta1)))
    theta1 = theta1 * (rho / radius)
    y2 = rng.uniform(0.1, 1.0, (p2, n))
    y1 = np.linalg.solve(np.eye(p1) - x @ theta1, x @ theta2 @ y2)
    return Dataset(y1, y2), ModelParams(x, theta1, theta2)


class TestDataset:
    def test_rejects_mismatched_observations(self):
        with pytest.raises(DimensionError):
            Dataset(np.ones((2, 3)), np.ones((1, 4)))

    def test_rejects_single_observation(self):
        with pytest.raises(ValidationError):
            Dataset(np.ones((2, 1)), np.ones((1, 1)))

    def test_take_selects_columns(self):
        data = Dataset(np.arange(6.0).reshape(2, 3),
                       np.arange(3.0).reshape(1, 3))
        sub = data.take([2, 0])
        assert np.array_equal(sub.y1, data.y1[:, [2, 0]])
        assert np.array_equal(sub.y2, data.y2[:, [2, 0]])

    def test_grams_match_definitions(self):
        rng = np.random.default_rng(7)
        data = Dataset(rng.uniform(0, 1, (3, 9)), rng.uniform(0, 1, (2, 9)))
        tr11, g11, g12, g21, g22 = data.grams()
        assert abs(tr11 - np.sum(data.y1 * data.y1)) < 1e-12
        assert np.allclose(g11, data.y1 @ data.y1.T, atol=1e-12)
        assert np.allclose(g12, data.y1 @ data.y2.T, atol=1e-12)
        assert np.allclose(g21, g12.T, atol=0)
        assert np.allclose(g22, data.y2 @ data.y2.T, atol=1e-12)


class TestConfig:
    def test_rejects_bad_q(self):
        with pytest.raises(ValidationError):
            FitConfig(q=0)

    def test_rejects_negative_penalty(self):
        with pytest.raises(ValidationError):
            Penalties(lambda_1=-1.0)

    def test_rejects_unknown_init(self):
        with pytest.raises(ValidationError):
            FitConfig(q=2, init="random")

    def test_given_init_requires_x0(self):
        with pytest.raises(ValidationError):
            FitConfig(q=2, init="given")


class TestLoss:
    def test_scalar_oracle(self):
        data, params = scalar_case()
        value = loss(params, data, Penalties(0.0, 2.0, 3.0))
        assert abs(value - LOSS_ORACLE) < 1e-12

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(11)
        data, params = feedback_dataset(seed=3, n=30)
        noisy = ModelParams(params.x,
                            params.theta1 * rng.uniform(0.5, 1.5),
                            params.theta2 * rng.uniform(0.5, 1.5))
        pen = Penalties(2.0, 0.3, 0.7)
        b = noisy.theta1 @ data.y1 + noisy.theta2 @ data.y2
        resid = data.y1 - noisy.x @ b
        gram = noisy.x.T @ noisy.x
        off = gram - np.diag(np.diag(gram))
        direct = (np.sum(resid * resid) + 0.5 * pen.lambda_x
                  * np.sum(off * off) + pen.lambda_1 * noisy.theta1.sum()
                  + pen.lambda_2 * noisy.theta2.sum())
        value = loss(noisy, data, pen)
        assert abs(value - direct) < 1e-9 * max(1.0, direct)

    def test_shape_mismatch_rejected(self):
        data, params = scalar_case()
        other = Dataset(np.ones((2, 2)), np.ones((1, 2)))
        with pytest.raises(DimensionError):
            loss(params, other, Penalties())


class TestUpdateStep:
    def test_true_parameters_are_fixed_point(self):
        # Exact equilibrium data with the truth supplied and no
        # penalties: one sweep must stay put.
        data, params = feedback_dataset(seed=5, rho=0.4)
        stepped = update_step(params, data, Penalties(0.0, 0.0, 0.0))
        assert np.max(np.abs(stepped.x - params.x)) < 1e-10
        assert np.max(np.abs(stepped.theta1 - params.theta1)) < 1e-10
        assert np.max(np.abs(stepped.theta2 - params.theta2)) < 1e-10

    def test_preserves_zeros_and_column_sums(self):
        data, params = feedback_dataset(seed=6)
        theta1 = params.theta1.copy()
        theta1[0, :] = 0.0
        current = ModelParams(params.x, theta1, params.theta2)
        for _ in range(5):
            current = update_step(current, data, Penalties(5.0, 0.1, 0.1))
            assert np.all(current.theta1[0, :] == 0.0)
            assert np.allclose(current.x.sum(axis=0), 1.0, atol=1e-12)

    def test_decreases_unpenalized_loss(self):
        data, params = feedback_dataset(seed=8)
        rng = np.random.default_rng(9)
        current = ModelParams(params.x,
                              params.theta1 * rng.uniform(0.2, 2.0),
                              params.theta2 * rng.uniform(0.2, 2.0))
        pen = Penalties(1.0, 0.01, 0.01)
        before = loss(current, data, pen)
        for _ in range(10):
            current = update_step(current, data, pen)
            after = loss(current, data, pen)
            assert after <= before * (1.0 + 1e-10)
            before = after


class TestInitBasis:
    def test_rank_one_recovers_left_vector(self):
        rng = np.random.default_rng(12)
        u = rng.uniform(0.5, 1.5, 5)
        v = rng.uniform(0.5, 1.5, 40)
        x = init_basis(np.outer(u, v), 1)
        expected = u / u.sum()
        assert np.max(np.abs(x[:, 0] - expected)) < 1e-8

    def test_columns_stochastic_and_floored(self):
        rng = np.random.default_rng(13)
        y1 = rng.uniform(0, 1, (6, 50))
        for method in ("nndsvdar", "kmeans"):
            x = init_basis(y1, 3, method)
            assert np.allclose(x.sum(axis=0), 1.0, atol=1e-8)
            assert np.all(x >= 1e-12)

    def test_rank_deficient_warns_and_still_valid(self):
        u = np.linspace(1.0, 2.0, 5)
        v = np.linspace(1.0, 3.0, 30)
        with pytest.warns(UserWarning):
            x = init_basis(np.outer(u, v), 3)
        assert x.shape == (5, 3)
        assert np.allclose(x.sum(axis=0), 1.0, atol=1e-8)

    def test_rejects_oversized_q(self):
        with pytest.raises(DimensionError):
            init_basis(np.ones((3, 10)), 4)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(14)
        y1 = rng.uniform(0, 1, (5, 30))
        a = init_basis(y1, 2, "kmeans", seed=3)
        b = init_basis(y1, 2, "kmeans", seed=3)
        assert np.array_equal(a, b)


class TestInitFeedforward:
    def test_noise_free_residual_small(self):
        # Data built without feedback: the feed-forward model is exact,
        # so the initializer should drive the relative residual low.
        rng = np.random.default_rng(15)
        p1, p2, q, n = 6, 3, 2, 120
        x = rng.uniform(0.1, 1.0, (p1, q))
        x = x / x.sum(axis=0)
        theta0 = rng.uniform(0.1, 1.0, (q, p2))
        y2 = rng.uniform(0.1, 1.0, (p2, n))
        data = Dataset(x @ theta0 @ y2, y2)
        x0, t0 = init_feedforward(data, q, FitConfig(q=q, max_iter=4000))
        resid = data.y1 - x0 @ t0 @ data.y2
        rel = np.linalg.norm(resid) / np.linalg.norm(data.y1)
        assert rel <= 0.05
        assert np.allclose(x0.sum(axis=0), 1.0, atol=1e-8)

    def test_block_structure_recovered_up_to_permutation(self):
        # Square diagonal-dominant basis: each fitted column should
        # peak on a distinct row.
        rng = np.random.default_rng(16)
        p = 3
        x_true = np.eye(p) + 0.05
        x_true = x_true / x_true.sum(axis=0)
        y2 = rng.uniform(0.5, 1.5, (p, 150))
        data = Dataset(x_true @ y2, y2)
        x0, _ = init_feedforward(data, p, FitConfig(q=p, max_iter=4000))
        peaks = sorted(int(np.argmax(x0[:, k])) for k in range(p))
        assert peaks == list(range(p))

    def test_rejects_all_zero_exogenous_row(self):
        y2 = np.ones((2, 10))
        y2[1, :] = 0.0
        data = Dataset(np.ones((3, 10)) + np.arange(10), y2)
        with pytest.raises(DegenerateInputError):
            init_feedforward(data, 2, FitConfig(q=2))

    def test_given_x0_is_normalized_and_used(self):
        data, params = feedback_dataset(seed=17, rho=0.0)
        x0 = params.x * 7.0
        config = FitConfig(q=params.q, init="given", x0=x0, max_iter=1)
        out, _ = init_feedforward(data, params.q, config)
        assert np.allclose(out.sum(axis=0), 1.0, atol=1e-8)

    def test_given_x0_shape_checked(self):
        data, params = feedback_dataset(seed=18)
        config = FitConfig(q=2, init="given", x0=np.ones((2, 2)))
        with pytest.raises(DimensionError):
            init_feedforward(data, 2, config)


class TestFit:
    def test_deterministic(self):
        data, _ = feedback_dataset(seed=20)
        config = FitConfig(q=2, max_iter=200)
        a = fit(data, config)
        b = fit(data, config)
        assert np.array_equal(a.params.x, b.params.x)
        assert np.array_equal(a.params.theta1, b.params.theta1)
        assert np.array_equal(a.params.theta2, b.params.theta2)
        assert np.array_equal(a.loss_trace, b.loss_trace)
        assert a.iterations == b.iterations

    def test_monotone_trace_and_metrics(self):
        data, _ = feedback_dataset(seed=21)
        result = fit(data, FitConfig(q=2, max_iter=400))
        trace = result.loss_trace
        assert np.all(trace[1:] <= trace[:-1] * (1.0 + 1e-10))
        assert result.equilibrium.stable
        assert result.metrics is not None
        assert -1.0 <= result.metrics.sc_map <= 1.0
        assert result.metrics.mae >= 0.0
        assert not result.loss_trace.flags.writeable
        assert not result.m_simple.flags.writeable

    def test_strong_feedback_penalty_kills_feedback(self):
        data, _ = feedback_dataset(seed=22, rho=0.4)
        config = FitConfig(q=2, penalties=Penalties(100.0, 1e6, 0.0),
                           max_iter=2000)
        result = fit(data, config)
        assert np.max(result.params.theta1) < 1e-8
        assert result.equilibrium.ar < 1.0 + 1e-6

    def test_converged_flag_on_easy_problem(self):
        data, _ = feedback_dataset(seed=23, rho=0.0, n=40)
        result = fit(data, FitConfig(q=2, max_iter=20000, rel_tol=1e-7))
        assert result.converged
        assert result.iterations < 20000


class TestEquilibriumConsistency:
    def test_fitted_equilibrium_self_consistent(self):
        # y1_hat = M y2 must satisfy y1_hat = X(Theta1 y1_hat +
        # Theta2 y2) by construction of M.
        data, _ = feedback_dataset(seed=24, rho=0.3)
        result = fit(data, FitConfig(q=2, max_iter=500))
        assert result.equilibrium.stable
        summary = equilibrium(result.params)
        y1_hat = summary.m_model @ data.y2
        rebuilt = result.params.x @ (result.params.theta1 @ y1_hat
                                     + result.params.theta2 @ data.y2)
        rel = (np.linalg.norm(y1_hat - rebuilt)
               / np.linalg.norm(y1_hat))
        assert rel < 1e-8
