import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from conftest import random_dataset, random_params
from mixreg.core import (
    Dataset,
    DegenerateResponseError,
    InvalidInputError,
    MixtureParams,
    SparsityPattern,
    map_assign,
    penalized_objective,
)
from mixreg.evalsim import ari, generate, model_spec, true_pattern
from mixreg.gem import (
    GemConfig,
    GemState,
    e_step,
    group_shrink,
    initialize,
    iterate,
    p_update,
    phi_coordinate_update,
    phi_group_update,
    pi_update,
    run_gem,
    s_statistic,
    soft_threshold_update,
)


def scalar_params(phis, pis=None, Ps=None):
    K = len(phis)
    pis = np.full(K, 1.0 / K) if pis is None else np.asarray(pis)
    Ps = np.ones(K) if Ps is None else np.asarray(Ps)
    return MixtureParams(pis, np.asarray(phis, dtype=float).reshape(K, 1, 1), Ps.reshape(K, 1))


def ols_oracle(data):
    """Least squares coefficients and residual variances by a direct solve."""
    coef = np.linalg.solve(data.x.T @ data.x, data.x.T @ data.y)  # (p, q)
    resid = data.y - data.x @ coef
    return coef.T, (resid ** 2).mean(axis=0)


class TestEStep:
    def test_single_component(self, rng):
        params = random_params(rng, 1, 2, 3)
        data = Dataset(rng.standard_normal((6, 3)), rng.standard_normal((6, 2)))
        np.testing.assert_array_equal(e_step(params, data), np.ones((6, 1)))

    def test_identical_components(self, rng):
        params = MixtureParams([0.5, 0.5], np.ones((2, 2, 3)), np.ones((2, 2)))
        data = Dataset(rng.standard_normal((6, 3)), rng.standard_normal((6, 2)))
        np.testing.assert_allclose(e_step(params, data), 0.5, rtol=0, atol=1e-15)

    def test_scalar_density_ratio(self):
        tau = e_step(scalar_params([3.0, -2.0]), Dataset([[1.0]], [[3.0]]))
        oracle = norm.pdf(0.0) / (norm.pdf(0.0) + norm.pdf(5.0))
        assert tau[0, 0] == pytest.approx(oracle, rel=1e-14)

    def test_rows_sum_to_one(self, rng):
        for _ in range(10):
            params = random_params(rng, 4, 3, 5, scale=3.0)
            data = Dataset(5 * rng.standard_normal((30, 5)), 5 * rng.standard_normal((30, 3)))
            tau = e_step(params, data)
            assert np.all(tau >= 0)
            np.testing.assert_allclose(tau.sum(axis=1), 1.0, rtol=0, atol=1e-12)


class TestPiUpdate:
    def _state(self, nk, pi, n, Phi=None):
        K = len(pi)
        tau = np.zeros((n, K))
        start = 0
        for k, c in enumerate(nk):
            tau[start:start + c, k] = 1.0
            start += c
        Phi = np.zeros((K, 1, 1)) if Phi is None else Phi
        params = MixtureParams(pi, Phi, np.ones((K, 1)))
        data = Dataset(np.ones((n, 1)), np.ones((n, 1)))
        return GemState.build(params, data, tau)

    def test_unpenalized_takes_full_step(self):
        state = self._state([8, 2], [0.5, 0.5], 10)
        pi, t = pi_update(state, lam=0.0)
        assert t == 1.0
        np.testing.assert_allclose(pi, [0.8, 0.2], rtol=1e-15)

    def test_fixed_point(self):
        state = self._state([3, 7], [0.3, 0.7], 10)
        for lam in (0.0, 0.5):
            pi, _ = pi_update(state, lam=lam)
            np.testing.assert_allclose(pi, [0.3, 0.7], rtol=1e-15)

    def test_penalty_shortens_step(self):
        # a heavy coefficient on the component that gains weight makes the full step worse
        Phi = np.zeros((2, 1, 1))
        Phi[0, 0, 0] = 50.0
        state = self._state([8, 2], [0.5, 0.5], 10, Phi)
        pi, t = pi_update(state, lam=1.0)
        assert t < 1.0
        assert pi[0] < 0.8

    def test_no_increase(self, rng):
        for _ in range(20):
            data = random_dataset(rng, 20, 3, 2)
            params = random_params(rng, 3, 2, 3)
            state = GemState.build(params, data)
            lam = 0.3
            l1 = np.abs(params.Phi).sum(axis=(1, 2))

            def q_pi(pi):
                return -np.dot(state.nk, np.log(pi)) / state.n + lam * np.dot(pi, l1)

            pi, _ = pi_update(state, lam=lam)
            assert q_pi(pi) <= q_pi(params.pi) + 1e-15
            assert pi.sum() == pytest.approx(1.0, abs=1e-14)


class TestPUpdate:
    def _state(self, x, y, phi):
        data = Dataset(np.asarray(x, float)[:, None], np.asarray(y, float)[:, None])
        params = MixtureParams([1.0], [[[phi]]], [[1.0]])
        return GemState.build(params, data, np.ones((data.n, 1)))

    def test_zero_phi_gives_reciprocal_rms(self, rng):
        y = rng.standard_normal(12)
        state = self._state(rng.standard_normal(12), y, 0.0)
        assert p_update(state, 0, 0) == pytest.approx(1.0 / np.sqrt(np.mean(y ** 2)), rel=1e-14)

    def test_unit_rms(self):
        assert p_update(self._state([0, 0, 0, 0], [1, 1, 1, 1], 0.0), 0, 0) == 1.0

    def test_scalar_quadratic_oracle(self):
        # -1 + P^2 * 9/3 - P * 5/3 = 0
        value = p_update(self._state([1, 1, 1], [1, 2, 2], 1.0), 0, 0)
        oracle = max(np.roots([3.0, -5.0 / 3.0, -1.0]).real)
        assert value == pytest.approx(oracle, rel=1e-14)
        assert -1 + 3 * value ** 2 - 5 / 3 * value == pytest.approx(0.0, abs=1e-14)

    def test_negative_cross_term_is_stable(self):
        # large negative <y, Phi x> is where the textbook root cancels
        value = p_update(self._state([1, 1, 1], [1, 1, 1], -1e8), 0, 0)
        oracle = 3.0 / 1e8 / 3.0  # root near nk / |cross|
        assert value == pytest.approx(oracle, rel=1e-7)
        assert value > 0

    def test_zero_response(self):
        with pytest.raises(DegenerateResponseError):
            p_update(self._state([1, 2, 3], [0, 0, 0], 0.0), 0, 0)


class TestPhiCoordinateUpdate:
    def test_soft_threshold_branches(self):
        assert soft_threshold_update(np.array(0.0), 1.0, 0.5) == 0.0
        assert soft_threshold_update(np.array(5.0), 1.0, 2.0) == -3.0
        assert soft_threshold_update(np.array(-5.0), 2.0, 2.0) == 1.5
        assert soft_threshold_update(np.array(1.5), 1.0, 2.0) == 0.0

    def test_matches_single_coordinate_minimizer(self, rng):
        # brute-force minimization of a/2 phi^2 + S phi + t|phi|
        grid = np.linspace(-10, 10, 200001)
        for _ in range(20):
            a, S, t = rng.uniform(0.5, 3), rng.uniform(-6, 6), rng.uniform(0, 3)
            f = 0.5 * a * grid ** 2 + S * grid + t * np.abs(grid)
            assert float(soft_threshold_update(np.array(S), a, t)) == pytest.approx(
                grid[np.argmin(f)], abs=1e-4)

    def test_restriction_and_zero_column(self, rng):
        data = random_dataset(rng, 15, 3, 2)
        x = data.x.copy()
        x[:, 2] = 0.0
        data = Dataset(x, data.y)
        params = random_params(rng, 2, 2, 3)
        state = GemState.build(params, data)
        mask = np.ones((2, 3), dtype=bool)
        mask[1, 0] = False
        assert phi_coordinate_update(state, 0, 1, 0, 0.1, restriction=mask) == 0.0
        assert phi_coordinate_update(state, 0, 0, 2, 0.0) == 0.0

    def test_large_lambda_zeroes(self, rng):
        data = random_dataset(rng, 15, 3, 2)
        state = GemState.build(random_params(rng, 2, 2, 3), data)
        for k in range(2):
            for m in range(2):
                for j in range(3):
                    assert phi_coordinate_update(state, k, m, j, 1e6) == 0.0

    def test_unpenalized_sweeps_reach_normal_equations(self, rng):
        # K=1, lambda=0, P fixed: repeated coordinate sweeps are Gauss-Seidel on x'x
        data = Dataset(rng.standard_normal((40, 4)), rng.standard_normal((40, 2)))
        P = np.array([[1.3, 0.7]])
        Phi = np.zeros((1, 2, 4))
        for _ in range(500):
            state = GemState.build(MixtureParams([1.0], Phi, P), data, np.ones((40, 1)))
            for m in range(2):
                for j in range(4):
                    Phi[0, m, j] = phi_coordinate_update(state, 0, m, j, 0.0)
                    state = GemState.build(MixtureParams([1.0], Phi, P), data, np.ones((40, 1)))
        oracle = np.linalg.solve(data.x.T @ data.x, data.x.T @ (data.y * P[0])).T
        np.testing.assert_allclose(Phi[0], oracle, rtol=0, atol=1e-8)


class TestGroupUpdate:
    def test_zero_statistics(self):
        np.testing.assert_array_equal(group_shrink(np.zeros(3), np.ones(3), 1.0), 0.0)

    def test_unpenalized(self):
        S, a = np.array([3.0, -1.0]), np.array([2.0, 0.5])
        np.testing.assert_allclose(group_shrink(S, a, 0.0), -S / a)

    def test_inside_threshold(self):
        np.testing.assert_array_equal(group_shrink(np.array([3.0, 4.0]), np.ones(2), 10.0), 0.0)

    def test_zero_block_satisfies_subgradient(self):
        # at phi = 0 the block subgradient condition is ||S|| <= c
        S, c = np.array([3.0, 4.0]), 10.0
        assert np.linalg.norm(S) <= c
        np.testing.assert_array_equal(group_shrink(S, np.ones(2), c), 0.0)

    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=4),
           st.lists(st.floats(0.2, 5), min_size=4, max_size=4),
           st.floats(0.01, 10))
    @settings(max_examples=100, deadline=None)
    def test_active_block_stationarity(self, S, a, c):
        S = np.array(S)
        a = np.array(a[:S.size])
        phi = group_shrink(S, a, c)
        if np.linalg.norm(S) <= c:
            np.testing.assert_array_equal(phi, 0.0)
            return
        norm_phi = np.linalg.norm(phi)
        assert norm_phi > 0
        grad = a * phi + S + c * phi / norm_phi
        np.testing.assert_allclose(grad, 0.0, atol=1e-7 * (1 + np.abs(S).max()))

    def test_group_update_from_state(self, rng):
        data = random_dataset(rng, 20, 3, 2)
        state = GemState.build(random_params(rng, 2, 2, 3), data)
        block = phi_group_update(state, 1, 2, 0.0)
        expected = [-s_statistic(state, k, 2)[1] / state.gram[k, 2, 2] for k in range(2)]
        np.testing.assert_allclose(block, expected, rtol=1e-12)
        mask = np.ones((2, 3), dtype=bool)
        mask[1, 2] = False
        np.testing.assert_array_equal(phi_group_update(state, 1, 2, 0.1, restriction=mask), 0.0)


class TestInitialize:
    def test_model2_geometry(self):
        data = generate(model_spec(2, seed=11, n=200))
        params = initialize(data, 2, GemConfig(seed=5))
        assert ari(data.labels, map_assign(e_step(params, data))) >= 0.5

    def test_single_component_is_least_squares(self, rng):
        data = Dataset(rng.standard_normal((30, 3)), rng.standard_normal((30, 2)))
        params = initialize(data, 1, GemConfig(init_iter=1))
        assert params.pi.tolist() == [1.0]
        B, s2 = ols_oracle(data)
        # one GEM iteration from the least-squares start stays at least squares
        np.testing.assert_allclose(params.B[0], B, atol=1e-6)

    def test_deterministic(self, rng):
        data = random_dataset(rng, 40, 3, 2)
        cfg = GemConfig(n_init=1, seed=99)
        a, b = initialize(data, 2, cfg), initialize(data, 2, cfg)
        np.testing.assert_array_equal(a.Phi, b.Phi)
        np.testing.assert_array_equal(a.P, b.P)
        np.testing.assert_array_equal(a.pi, b.pi)

    def test_too_few_points(self):
        with pytest.raises(InvalidInputError):
            initialize(Dataset([[1.0]], [[1.0]]), 2, GemConfig())


class TestRunGem:
    def test_single_component_recovery(self):
        spec = model_spec(1, seed=4, b_values=(3,), pi=(1.0,))
        data = generate(spec)
        result = run_gem(data, 1, GemConfig())
        truth = np.zeros((10, 10))
        truth[np.arange(4), np.arange(4)] = 3.0
        assert np.max(np.abs(result.params.B[0] - truth)) <= 3 / np.sqrt(data.n)

    def test_objective_decreases(self, rng):
        data = random_dataset(rng, 40, 4, 3)
        for lam in (0.0, 0.2):
            result = run_gem(data, 2, GemConfig(lam=lam, n_init=2))
            assert result.objective_trace[-1] <= result.objective_trace[0]
            assert np.all(np.diff(result.objective_trace) <= 1e-8)

    def test_k1_lambda0_matches_least_squares(self, rng):
        data = Dataset(rng.standard_normal((50, 4)), rng.standard_normal((50, 3)))
        result = run_gem(data, 1, GemConfig(eps_loglik=1e-15, eps_param=1e-13))
        B, s2 = ols_oracle(data)
        np.testing.assert_allclose(result.params.B[0], B, atol=1e-8)
        np.testing.assert_allclose(result.params.sigma2[0], s2, atol=1e-8)

    def test_oracle_support_clusters_model2(self):
        scores = []
        for seed in range(20):
            spec = model_spec(2, seed=seed)
            data = generate(spec)
            cfg = GemConfig(restriction=true_pattern(spec), seed=seed)
            result = run_gem(data, 2, cfg)
            scores.append(ari(data.labels, map_assign(result.tau)))
        assert np.median(scores) >= 0.9

    def test_restriction_respected(self, rng):
        data = random_dataset(rng, 40, 3, 2)
        J = SparsityPattern([(0, 0), (1, 2)], 2, 3)
        result = run_gem(data, 2, GemConfig(restriction=J, n_init=2))
        off = ~J.mask()
        assert np.all(result.params.Phi[:, off] == 0)

    def test_reproducible(self, rng):
        data = random_dataset(rng, 40, 3, 2)
        cfg = GemConfig(lam=0.05, seed=3, n_init=3)
        a, b = run_gem(data, 2, cfg), run_gem(data, 2, cfg)
        assert a.objective_trace == b.objective_trace
        np.testing.assert_array_equal(a.params.Phi, b.params.Phi)

    def test_iteration_limit_is_not_an_error(self, rng):
        data = random_dataset(rng, 40, 3, 2)
        result = run_gem(data, 2, GemConfig(max_iter=2, min_iter=1, n_init=1))
        assert result.n_iter <= 2
        assert not result.converged

    def test_group_lasso_zero_pattern_is_groupwise(self):
        data = generate(model_spec(2, seed=1))
        result = run_gem(data, 2, GemConfig(lam=0.05, penalty_kind="group_lasso", n_init=2))
        zero = result.params.Phi == 0
        assert np.all(zero[0] == zero[1])
        assert zero.any()

    @pytest.mark.parametrize("field,value", [("lam", -1.0), ("line_search_base", 1.0),
                                             ("min_iter", 0), ("penalty_kind", "ridge")])
    def test_config_validation(self, field, value):
        with pytest.raises(InvalidInputError):
            GemConfig(**{field: value})


class TestBoundedness:
    def test_shrinking_variance_eventually_costs(self, rng):
        # scaling one precision up (fixed Phi) cannot drive the penalized objective to -inf
        for _ in range(10):
            data = random_dataset(rng, 30, 3, 2)
            params = random_params(rng, 2, 2, 3)
            base = penalized_objective(params, data, 0.1)
            k, m = rng.integers(2), rng.integers(2)
            values = []
            for factor in (1e2, 1e4, 1e6):
                P = np.array(params.P)
                P[k, m] *= factor
                values.append(penalized_objective(MixtureParams(params.pi, params.Phi, P),
                                                  data, 0.1))
            assert max(values) > base


class TestIterate:
    def test_degenerate_variance_stops(self):
        # two points, two predictors: one component can interpolate exactly
        rng = np.random.default_rng(0)
        x = rng.standard_normal((6, 2))
        y = rng.standard_normal((6, 1))
        data = Dataset(x, y)
        params = MixtureParams([0.5, 0.5], rng.standard_normal((2, 1, 2)), np.ones((2, 1)))
        result = iterate(data, params, GemConfig(max_iter=2000))
        assert np.all(np.isfinite(result.objective_trace))
