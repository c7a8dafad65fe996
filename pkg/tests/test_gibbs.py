"""Conjugate-update oracles and chain-level invariants.

The closed-form means and variances asserted here are computed inside the
tests from the stated conditional laws, independently of the sampler's
own linear algebra.
"""

import numpy as np
import pytest

import subsetgibbs.gibbs as gibbs
from subsetgibbs import (
    BasisConfig,
    ChainState,
    DatasetView,
    FixedVariances,
    NumericalError,
    SamplerConfig,
    kernel_matrix,
    make_rng,
    run_chain,
)
from subsetgibbs.gibbs import (
    _sample_mvn_precision,
    draw_inactive_prediction_components,
    update_beta,
    update_eta_active,
    update_variances,
    update_xi_active,
)
from subsetgibbs.model import SubsetMask


def fixed_state(N, p=1, sigma2=1.0, sigma2_eta=1.0, sigma2_xi=1.0, sigma2_beta=1.0,
                beta=None, eta=None, xi=None):
    state = ChainState.initial(N, p)
    state.sigma2, state.sigma2_eta = sigma2, sigma2_eta
    state.sigma2_xi, state.sigma2_beta = sigma2_xi, sigma2_beta
    if beta is not None:
        state.beta = np.asarray(beta, dtype=float)
    if eta is not None:
        state.eta = np.asarray(eta, dtype=float)
    if xi is not None:
        state.xi = np.asarray(xi, dtype=float)
    return state


def moments(draw_one, count, seed=0):
    rng = make_rng(seed)
    draws = np.array([draw_one(rng) for _ in range(count)])
    return draws.mean(axis=0), draws.var(axis=0, ddof=1), draws


class TestUpdateEtaActive:
    def test_scalar_half_shrinkage(self):
        # n=1, Psi=[1], unit variances: mean r/2, variance 1/2
        r = 1.8
        state = fixed_state(1)
        y = np.array([r])
        x = np.zeros((1, 1))
        psi = np.eye(1)
        mean, var, _ = moments(
            lambda rng: update_eta_active(state, y, x, psi, np.zeros(1), rng)[0], 100_000)
        assert mean == pytest.approx(r / 2.0, abs=3.0 * np.sqrt(0.5 / 100_000))
        assert var == pytest.approx(0.5, rel=0.02)

    def test_flat_prior_limit_recovers_residual(self):
        state = fixed_state(3, sigma2_eta=1e12)
        y = np.array([0.5, -1.0, 2.0])
        x = np.zeros((3, 1))
        psi = np.eye(3)
        mean, var, _ = moments(
            lambda rng: update_eta_active(state, y, x, psi, np.zeros(3), rng), 50_000)
        np.testing.assert_allclose(mean, y, atol=3.0 * np.sqrt(1.0 / 50_000) + 1e-9)
        np.testing.assert_allclose(var, 1.0, rtol=0.03)

    def test_matches_closed_form_on_correlated_design(self):
        # moment oracle with a non-trivial kernel: the conditional is
        # N((Psi'Psi + (s/se) I)^-1 Psi' r, (Psi'Psi/s + I/se)^-1)
        coords = np.array([0.0, 1.0, 2.5, 4.0])
        psi = kernel_matrix(coords, coords, BasisConfig(rho=0.4))
        sigma2, sigma2_eta = 0.7, 2.3
        state = fixed_state(4, sigma2=sigma2, sigma2_eta=sigma2_eta,
                            beta=[0.4], xi=np.array([0.1, -0.2, 0.3, 0.0]))
        y = np.array([1.0, -0.5, 0.8, 0.2])
        x = np.ones((4, 1))
        residual = y - x @ state.beta - state.xi
        precision = psi.T @ psi / sigma2 + np.eye(4) / sigma2_eta
        cov = np.linalg.inv(precision)
        expected_mean = cov @ psi.T @ residual / sigma2
        count = 100_000
        mean, var, _ = moments(
            lambda rng: update_eta_active(state, y, x, psi, state.xi, rng), count)
        assert np.all(np.abs(mean - expected_mean) < 3.0 * np.sqrt(np.diag(cov) / count))
        np.testing.assert_allclose(var, np.diag(cov), rtol=0.03)


class TestUpdateXiActive:
    def test_equal_variances_split_residual(self):
        state = fixed_state(2, sigma2=0.8, sigma2_xi=0.8)
        y = np.array([2.0, -1.0])
        x = np.zeros((2, 1))
        psi = np.eye(2)
        count = 100_000
        mean, var, _ = moments(
            lambda rng: update_xi_active(state, y, x, psi, np.zeros(2), rng), count)
        np.testing.assert_allclose(mean, y / 2.0, atol=3.0 * np.sqrt(0.4 / count))
        np.testing.assert_allclose(var, 0.4, rtol=0.03)

    def test_vanishing_variance_shrinks_away(self):
        state = fixed_state(2, sigma2_xi=1e-14)
        y = np.array([2.0, -1.0])
        draws = update_xi_active(state, y, np.zeros((2, 1)), np.eye(2), np.zeros(2),
                                 make_rng(0))
        np.testing.assert_allclose(draws, 0.0, atol=1e-5)

    def test_matches_closed_form_on_fixed_subset(self):
        coords = np.arange(5.0)
        psi = kernel_matrix(coords, coords, BasisConfig(rho=0.3))
        state = fixed_state(5, sigma2=0.5, sigma2_xi=1.5, beta=[0.2],
                            eta=np.array([0.3, -0.1, 0.6, 0.0, -0.4]))
        y = np.array([0.9, -0.3, 1.2, 0.1, -0.6])
        x = np.ones((5, 1))
        shrink = 1.5 / (0.5 + 1.5)
        expected_mean = shrink * (y - x @ state.beta - psi @ state.eta)
        expected_var = 0.5 * 1.5 / 2.0
        count = 100_000
        mean, var, _ = moments(
            lambda rng: update_xi_active(state, y, x, psi, state.eta, rng), count)
        np.testing.assert_allclose(
            mean, expected_mean, atol=3.0 * np.sqrt(expected_var / count))
        np.testing.assert_allclose(var, expected_var, rtol=0.03)


class TestUpdateBeta:
    def test_scalar_plug_in(self):
        # p=1, X=[1], unit variances, residual 2: mean 1, variance 1/2
        state = fixed_state(1)
        y = np.array([2.0])
        x = np.ones((1, 1))
        psi = np.eye(1)
        count = 100_000
        mean, var, _ = moments(
            lambda rng: update_beta(state, y, x, psi, np.zeros(1), np.zeros(1), rng)[0],
            count)
        assert mean == pytest.approx(1.0, abs=3.0 * np.sqrt(0.5 / count))
        assert var == pytest.approx(0.5, rel=0.02)

    def test_zero_design_recovers_prior(self):
        state = fixed_state(3, sigma2_beta=2.5)
        y = np.array([1.0, 2.0, 3.0])
        x = np.zeros((3, 1))
        psi = np.eye(3)
        count = 100_000
        mean, var, _ = moments(
            lambda rng: update_beta(state, y, x, psi, np.zeros(3), np.zeros(3), rng)[0],
            count)
        assert mean == pytest.approx(0.0, abs=3.0 * np.sqrt(2.5 / count))
        assert var == pytest.approx(2.5, rel=0.02)

    def test_matches_two_dimensional_closed_form(self):
        rng0 = np.random.default_rng(8)
        x = rng0.normal(size=(6, 2))
        psi = np.eye(6)
        sigma2, sigma2_beta = 0.9, 3.0
        state = fixed_state(6, p=2, sigma2=sigma2, sigma2_beta=sigma2_beta,
                            eta=rng0.normal(size=6), xi=rng0.normal(size=6))
        y = rng0.normal(size=6)
        residual = y - psi @ state.eta - state.xi
        cov = np.linalg.inv(x.T @ x / sigma2 + np.eye(2) / sigma2_beta)
        expected_mean = cov @ x.T @ residual / sigma2
        count = 100_000
        mean, var, _ = moments(
            lambda rng: update_beta(state, y, x, psi, state.eta, state.xi, rng), count)
        assert np.all(np.abs(mean - expected_mean) < 3.0 * np.sqrt(np.diag(cov) / count))
        np.testing.assert_allclose(var, np.diag(cov), rtol=0.03)


class TestUpdateVariances:
    def test_zero_sums_force_unit_rate_draws(self):
        # SSR=0 with n=2 gives IG(2, 1) for sigma2; the draw stream must
        # match the reciprocal-gamma construction exactly
        state = fixed_state(2)
        rng_a, rng_b = make_rng(5), make_rng(5)
        drawn = update_variances(state, np.zeros(2), np.zeros(2), np.zeros(2),
                                 np.zeros(2), rng_a)
        direct = tuple(1.0 / rng_b.gamma(shape, 1.0) for shape in (2.0, 2.0, 2.0, 2.0))
        assert drawn == direct

    def test_moment_oracle_with_finite_variance(self):
        # n=6 makes the conditional IG(4, 1 + SSR/2): mean and variance finite
        state = fixed_state(6)
        residual = np.array([1.0, -1.0, 0.5, -0.5, 0.3, -0.3])
        ssr = float(residual @ residual)
        shape, rate = 4.0, 1.0 + ssr / 2.0
        expected_mean = rate / (shape - 1.0)
        expected_var = rate**2 / ((shape - 1.0) ** 2 * (shape - 2.0))
        count = 200_000
        draws = np.array([
            update_variances(state, residual, np.zeros(6), np.zeros(6), np.zeros(6),
                             rng)[0]
            for rng in [make_rng(77)] for _ in range(count)
        ])
        assert draws.mean() == pytest.approx(
            expected_mean, abs=3.0 * np.sqrt(expected_var / count))

    def test_prior_shape_rate_offsets(self):
        # a generalized IG(a, b) prior shifts every conditional by (a, b)
        state = fixed_state(2)
        rng_a, rng_b = make_rng(6), make_rng(6)
        drawn = update_variances(state, np.zeros(2), np.zeros(2), np.zeros(2),
                                 np.zeros(2), rng_a, ig_shape=2.5, ig_rate=0.5)
        direct = tuple(1.0 / rng_b.gamma(2.5 + 1.0, 1.0 / 0.5) for _ in range(4))
        assert drawn == direct

    def test_fixed_components_pass_through_without_randomness(self):
        state = fixed_state(2)
        fixed = FixedVariances.all_of(0.3, 0.4, 0.5, 0.6)
        rng = make_rng(9)
        before = rng.bit_generator.state["state"]["state"]
        out = update_variances(state, None, np.zeros(2), np.zeros(2), np.zeros(2),
                               rng, fixed=fixed)
        assert out == (0.3, 0.4, 0.5, 0.6)
        assert rng.bit_generator.state["state"]["state"] == before

    def test_missing_residual_without_fixed_sigma2_raises(self):
        state = fixed_state(2)
        with pytest.raises(Exception):
            update_variances(state, None, np.zeros(2), np.zeros(2), np.zeros(2),
                             make_rng(0))

    def test_beta_prior_recovery(self):
        # beta = 0 with p=2 gives sigma2_beta ~ IG(2, 1)
        state = fixed_state(2, p=2)
        rng_a, rng_b = make_rng(123), make_rng(123)
        drawn = update_variances(state, np.zeros(3), np.zeros(3), np.zeros(3),
                                 np.zeros(2), rng_a)
        for _ in range(3):
            rng_b.gamma(1.0 + 1.5, 1.0)
        assert drawn[3] == 1.0 / rng_b.gamma(2.0, 1.0)


class TestDrawInactivePredictionComponents:
    def test_empty_intersection_leaves_stream_untouched(self):
        state = fixed_state(6)
        mask = SubsetMask(delta=np.array([True, True, True, False, False, False]),
                          active=np.array([0, 1, 2]))
        rng = make_rng(4)
        outside, eta, xi = draw_inactive_prediction_components(
            state, np.array([0, 1]), mask, rng)
        assert outside.size == 0 and eta.size == 0 and xi.size == 0
        assert make_rng(4).standard_normal() == rng.standard_normal()

    def test_prior_moments(self):
        state = fixed_state(300, sigma2_eta=1.0, sigma2_xi=4.0)
        mask = SubsetMask(delta=np.eye(300, dtype=bool)[0], active=np.array([0]))
        pred = np.arange(1, 201)
        rng = make_rng(10)
        eta_all, xi_all = [], []
        for _ in range(5000):
            _, eta, xi = draw_inactive_prediction_components(state, pred, mask, rng)
            eta_all.append(eta)
            xi_all.append(xi)
        eta_all = np.concatenate(eta_all)
        xi_all = np.concatenate(xi_all)
        assert eta_all.size == 10**6
        assert eta_all.var() == pytest.approx(1.0, abs=0.01)
        assert xi_all.var() == pytest.approx(4.0, rel=0.01)
        assert abs(eta_all.mean()) < 0.01

    def test_draws_independent_across_indices(self):
        state = fixed_state(4)
        mask = SubsetMask(delta=np.array([True, False, False, False]),
                          active=np.array([0]))
        pred = np.array([1, 2])
        rng = make_rng(21)
        draws = np.array([
            draw_inactive_prediction_components(state, pred, mask, rng)[1]
            for _ in range(100_000)
        ])
        corr = np.corrcoef(draws[:, 0], draws[:, 1])[0, 1]
        assert abs(corr) < 0.01

    def test_lagged_variance_override(self):
        state = fixed_state(3, sigma2_eta=1.0, sigma2_xi=1.0)
        mask = SubsetMask(delta=np.array([True, False, False]), active=np.array([0]))
        rng_a, rng_b = make_rng(3), make_rng(3)
        _, eta_a, _ = draw_inactive_prediction_components(
            state, np.array([1]), mask, rng_a, sigma2_eta=9.0, sigma2_xi=9.0)
        z = rng_b.standard_normal(1)
        np.testing.assert_allclose(eta_a, 3.0 * z)


class TestSampleMvnPrecision:
    def test_indefinite_matrix_raises_with_context(self):
        indefinite = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(NumericalError) as err:
            _sample_mvn_precision(indefinite, np.zeros(2), make_rng(0), n=7, iteration=3)
        assert "n=7" in str(err.value) and "iteration=3" in str(err.value)

    def test_singular_matrix_recovers_with_jitter(self):
        singular = np.array([[1.0, 1.0], [1.0, 1.0]])
        draw, mean, jitter = _sample_mvn_precision(singular, np.ones(2), make_rng(0),
                                                   n=2, iteration=1)
        assert jitter >= 1
        assert np.all(np.isfinite(draw)) and np.all(np.isfinite(mean))


def small_dataset(N=12, seed=0):
    rng = np.random.default_rng(seed)
    return DatasetView(y=rng.normal(size=N), x=np.ones((N, 1)),
                       index_coords=np.arange(N, dtype=float))


def small_config(N, **overrides):
    defaults = dict(iterations=40, burn_in=10, prediction_set=np.array([0, N // 2]),
                    basis=BasisConfig(rho=0.3), seed=11)
    defaults.update(overrides)
    return SamplerConfig(**defaults)


class TestRunChain:
    def test_single_kept_iteration_average(self):
        data = small_dataset()
        base = dict(prediction_set=np.array([0, 3, 7]), basis=BasisConfig(rho=0.3),
                    seed=5)
        only_5th = run_chain(data, SamplerConfig(iterations=5, burn_in=4, **base), 4)
        only_4th = run_chain(data, SamplerConfig(iterations=4, burn_in=3, **base), 4)
        last_two = run_chain(data, SamplerConfig(iterations=5, burn_in=3, **base), 4)
        np.testing.assert_allclose(
            last_two.mu_hat, 0.5 * (only_4th.mu_hat + only_5th.mu_hat), rtol=1e-12)
        assert only_5th.iterations_kept == 1
        assert np.isnan(only_5th.mu_var).all()

    def test_same_seed_bit_identical(self):
        data = small_dataset()
        config = small_config(12)
        a = run_chain(data, config, 5, collect_trace=True)
        b = run_chain(data, config, 5, collect_trace=True)
        np.testing.assert_array_equal(a.mu_hat, b.mu_hat)
        np.testing.assert_array_equal(a.trace, b.trace)

    def test_variances_stay_positive(self):
        data = small_dataset()
        out = run_chain(data, small_config(12, iterations=200, burn_in=0), 6,
                        collect_trace=True)
        assert (out.trace[:, -4:] > 0.0).all()

    def test_design_cache_does_not_change_results(self, monkeypatch):
        data = small_dataset(N=6)
        config = small_config(6, fixed_variances=FixedVariances.all_of(1, 1, 1, 1))
        cached = run_chain(data, config, 2, collect_trace=True)
        monkeypatch.setattr(gibbs, "_DESIGN_CACHE_LIMIT", 0)
        uncached = run_chain(data, config, 2, collect_trace=True)
        np.testing.assert_array_equal(cached.mu_hat, uncached.mu_hat)
        np.testing.assert_array_equal(cached.trace, uncached.trace)

    def test_rejects_bad_subset_size(self):
        data = small_dataset(N=6)
        config = small_config(6)
        for n in (0, 7):
            with pytest.raises(Exception):
                run_chain(data, config, n)

    def test_subset_draws_consume_no_data_values(self, monkeypatch):
        recorded = []
        original = gibbs.sample_active_indices

        def recording(n, N, rng):
            active = original(n, N, rng)
            recorded.append(active.copy())
            return active

        monkeypatch.setattr(gibbs, "sample_active_indices", recording)
        config = small_config(12, iterations=30, burn_in=0)
        data_a = small_dataset(seed=1)
        data_b = DatasetView(y=data_a.y + 250.0, x=data_a.x,
                             index_coords=data_a.index_coords)
        run_chain(data_a, config, 4)
        first = [a.tolist() for a in recorded]
        recorded.clear()
        run_chain(data_b, config, 4)
        second = [a.tolist() for a in recorded]
        assert first == second

    def test_unselected_data_outside_predictions_is_ignored(self, monkeypatch):
        # with the subset pinned, perturbing a datum that is neither in
        # the subset nor in the prediction set must not move the chain
        fixed_active = np.array([0, 1, 2])
        monkeypatch.setattr(gibbs, "sample_active_indices",
                            lambda n, N, rng: fixed_active)
        config = small_config(6, iterations=50, burn_in=0,
                              prediction_set=np.array([0, 1]))
        data_a = small_dataset(N=6, seed=3)
        y_perturbed = data_a.y.copy()
        y_perturbed[4] += 1000.0
        data_b = DatasetView(y=y_perturbed, x=data_a.x, index_coords=data_a.index_coords)
        a = run_chain(data_a, config, 3, collect_trace=True)
        b = run_chain(data_b, config, 3, collect_trace=True)
        np.testing.assert_array_equal(a.trace, b.trace)
        np.testing.assert_array_equal(a.mu_hat, b.mu_hat)

    def test_carry_policy_keeps_untouched_components_at_zero(self, monkeypatch):
        fixed_active = np.array([0, 1, 2])
        monkeypatch.setattr(gibbs, "sample_active_indices",
                            lambda n, N, rng: fixed_active)
        data = small_dataset(N=6, seed=3)
        config = small_config(6, iterations=60, burn_in=0,
                              prediction_set=np.array([5]),
                              prediction_refresh="carry")
        out = run_chain(data, config, 3, collect_trace=True)
        # index 5 never enters the subset: its prediction is just the
        # running intercept average
        assert out.mu_hat[0] == pytest.approx(out.trace[:, 0].mean(), rel=1e-9)

    def test_prior_policy_adds_prior_noise_to_untouched_components(self, monkeypatch):
        fixed_active = np.array([0, 1, 2])
        monkeypatch.setattr(gibbs, "sample_active_indices",
                            lambda n, N, rng: fixed_active)
        data = small_dataset(N=6, seed=3)
        config = small_config(6, iterations=4000, burn_in=0,
                              prediction_set=np.array([5]),
                              prediction_refresh="prior",
                              fixed_variances=FixedVariances.all_of(1, 1, 1, 1))
        out = run_chain(data, config, 3, collect_trace=True)
        beta_var = out.trace[:, 0].var(ddof=1)
        # per-sweep prediction variance at the untouched index is the
        # intercept variance plus the two unit prior variances
        assert out.mu_var[0] == pytest.approx(beta_var + 2.0, rel=0.15)

    def test_full_mask_matches_direct_full_data_sampler(self):
        # at n = N the chain must reproduce an independently written
        # full-data Gibbs sampler step for step (same seed, same square
        # root convention, formulas written from scratch here)
        N, p = 6, 1
        data = small_dataset(N=N, seed=2)
        basis = BasisConfig(rho=0.3)
        config = SamplerConfig(iterations=30, burn_in=0,
                               prediction_set=np.array([0, 4]), basis=basis, seed=33,
                               prediction_refresh="prior")
        ours = run_chain(data, config, N, collect_trace=True)

        rng = make_rng(33)
        psi = kernel_matrix(data.index_coords, data.index_coords, basis)
        x = data.x
        y = data.y
        beta = np.zeros(p)
        eta = np.zeros(N)
        xi = np.zeros(N)
        s2 = s2_eta = s2_xi = s2_beta = 1.0
        trace = np.empty((30, p + 4))
        for g in range(30):
            rng.integers(0, N - np.arange(N))  # subset draw consumes one block
            prec_eta = psi.T @ psi / s2 + np.eye(N) / s2_eta
            lower = np.linalg.cholesky(prec_eta)
            mean_eta = np.linalg.solve(prec_eta, psi.T @ (y - x @ beta - xi) / s2)
            eta = mean_eta + np.linalg.solve(lower.T, rng.standard_normal(N))
            shrink = s2_xi / (s2 + s2_xi)
            xi = shrink * (y - x @ beta - psi @ eta) + np.sqrt(
                s2 * s2_xi / (s2 + s2_xi)) * rng.standard_normal(N)
            prec_beta = x.T @ x / s2 + np.eye(p) / s2_beta
            lower_b = np.linalg.cholesky(prec_beta)
            mean_beta = np.linalg.solve(prec_beta, x.T @ (y - psi @ eta - xi) / s2)
            beta = mean_beta + np.linalg.solve(lower_b.T, rng.standard_normal(p))
            residual = y - x @ beta - psi @ eta - xi
            s2 = 1.0 / rng.gamma(1.0 + N / 2.0, 1.0 / (1.0 + residual @ residual / 2.0))
            s2_eta = 1.0 / rng.gamma(1.0 + N / 2.0, 1.0 / (1.0 + eta @ eta / 2.0))
            s2_xi = 1.0 / rng.gamma(1.0 + N / 2.0, 1.0 / (1.0 + xi @ xi / 2.0))
            s2_beta = 1.0 / rng.gamma(1.0 + p / 2.0, 1.0 / (1.0 + beta @ beta / 2.0))
            trace[g] = (*beta, s2, s2_eta, s2_xi, s2_beta)
        np.testing.assert_allclose(ours.trace, trace, rtol=1e-9, atol=1e-12)

    def test_tiny_conjugate_posterior_mean(self):
        # known-variance model: the chain's beta mean must match the
        # analytic Gaussian posterior within its autocorrelation-adjusted
        # Monte Carlo error
        N = 3
        data = small_dataset(N=N, seed=6)
        basis = BasisConfig(rho=0.3)
        variances = (0.8, 0.6, 0.7, 2.0)
        config = SamplerConfig(
            iterations=20_000, burn_in=500, prediction_set=np.array([0]),
            basis=basis, seed=17,
            fixed_variances=FixedVariances.all_of(*variances))
        out = run_chain(data, config, N, collect_trace=True)
        beta_draws = out.trace[500:, 0]

        s2, s2_eta, s2_xi, s2_beta = variances
        psi = kernel_matrix(data.index_coords, data.index_coords, basis)
        marginal_cov = s2_eta * psi @ psi.T + (s2 + s2_xi) * np.eye(N)
        solve = np.linalg.solve(marginal_cov, np.column_stack([data.x[:, 0], data.y]))
        precision = data.x[:, 0] @ solve[:, 0] + 1.0 / s2_beta
        expected_mean = (data.x[:, 0] @ solve[:, 1]) / precision

        batches = beta_draws.reshape(50, -1).mean(axis=1)
        se = batches.std(ddof=1) / np.sqrt(batches.size)
        assert abs(beta_draws.mean() - expected_mean) < 3.0 * se
