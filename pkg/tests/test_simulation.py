import math

import numpy as np
import pytest

from eqrisk.errors import ParameterError, ShapeError
from eqrisk.market import (
    BsmParams,
    GarchParams,
    IvParams,
    MarketGrid,
    MjdParams,
    PathBundle,
)
from eqrisk.simulate import (
    aggregate_daily_to_period,
    correlated_innovations,
    garch_recursion,
    simulate_bsm,
    simulate_garch,
    simulate_iv,
    simulate_mjd,
)

GRID_DAILY = MarketGrid(1.0, 252, 1, 0.03)
GRID_MONTHLY = MarketGrid(1.0, 12, 21, 0.03)
SCENARIO1 = MjdParams(nu=0.1112, sigma=0.1323, lam=1.0, mu_j=-0.05, sigma_j=0.05)
GARCH15 = GarchParams(mu=3.968e-04, omega=1.964e-06, upsilon=0.05, gamma=0.6, beta=0.91)
IV_DEFAULT = IvParams(kappa=0.15, theta=math.log(0.15), sigma_iv=0.06, rho=-0.6)


class TestGrid:
    def test_calendar_consistency(self):
        with pytest.raises(ParameterError):
            MarketGrid(1.0, 12, 20, 0.03)  # 240 days != 252

    def test_discount_factors(self):
        g = MarketGrid(1.0, 4, 63, 0.03)
        assert g.discount_factor(0) == 1.0
        assert g.discount_factor(4) == pytest.approx(math.exp(0.03), rel=1e-15)
        np.testing.assert_allclose(
            g.discount_curve(), [math.exp(0.03 * 0.25 * n) for n in range(5)], rtol=1e-15
        )

    def test_sub_year_horizon(self):
        g = MarketGrid(4 / 252, 4, 1, 0.0)
        assert g.n_days == 4


class TestAggregation:
    def test_identity_when_single_day(self):
        daily = np.arange(12.0).reshape(1, 12, 1)
        np.testing.assert_array_equal(
            aggregate_daily_to_period(daily), daily[:, :, 0]
        )

    def test_constant_sum(self):
        daily = np.ones((3, 12, 21))
        assert (aggregate_daily_to_period(daily) == 21.0).all()

    def test_matches_naive_left_to_right_sum(self):
        rng = np.random.default_rng(0)
        daily = rng.standard_normal((5, 4, 63))
        got = aggregate_daily_to_period(daily)
        for p in range(5):
            for n in range(4):
                acc = 0.0
                for j in range(63):
                    acc += daily[p, n, j]
                assert got[p, n] == acc  # bitwise

    def test_exp_sum_reproduces_terminal_spot(self):
        b = simulate_mjd(SCENARIO1, GRID_MONTHLY, 50, seed=3)
        total = b.period_log_returns.sum(axis=1)
        np.testing.assert_allclose(
            b.spot[:, -1] / b.spot[:, 0], np.exp(total), rtol=1e-12
        )


class TestDeterminism:
    @pytest.mark.parametrize(
        "sim,params",
        [
            (simulate_mjd, SCENARIO1),
            (simulate_garch, GARCH15),
            (simulate_bsm, BsmParams(0.1, 0.15)),
        ],
    )
    def test_bitwise_repeatability(self, sim, params):
        a = sim(params, GRID_MONTHLY, 20, seed=11, iv_params=IV_DEFAULT)
        b = sim(params, GRID_MONTHLY, 20, seed=11, iv_params=IV_DEFAULT)
        np.testing.assert_array_equal(a.daily_log_returns, b.daily_log_returns)
        np.testing.assert_array_equal(a.spot, b.spot)
        np.testing.assert_array_equal(a.iv_state, b.iv_state)

    def test_paths_independent_of_batch_size(self):
        small = simulate_mjd(SCENARIO1, GRID_MONTHLY, 5, seed=4)
        large = simulate_mjd(SCENARIO1, GRID_MONTHLY, 40, seed=4)
        np.testing.assert_array_equal(
            small.daily_log_returns, large.daily_log_returns[:5]
        )

    def test_seed_changes_paths(self):
        a = simulate_bsm(BsmParams(0.1, 0.15), GRID_MONTHLY, 5, seed=1)
        b = simulate_bsm(BsmParams(0.1, 0.15), GRID_MONTHLY, 5, seed=2)
        assert not np.array_equal(a.daily_log_returns, b.daily_log_returns)


class TestMjd:
    def test_degenerate_limit_is_deterministic(self):
        params = MjdParams(nu=0.08, sigma=0.0, lam=0.0, mu_j=0.0, sigma_j=0.0)
        b = simulate_mjd(params, GRID_DAILY, 3, seed=9)
        assert (b.daily_log_returns == 0.08 / 252).all()

    def test_parameter_validation(self):
        with pytest.raises(ParameterError):
            MjdParams(nu=0.1, sigma=-0.1, lam=1.0, mu_j=0.0, sigma_j=0.1)
        with pytest.raises(ParameterError):
            MjdParams(nu=0.1, sigma=0.1, lam=-1.0, mu_j=0.0, sigma_j=0.1)

    def test_compensated_growth_moment(self):
        # E[S_T/S_0] = exp(nu*T) once the jump compensator is in the drift.
        n = 30_000
        b = simulate_mjd(SCENARIO1, GRID_MONTHLY, n, seed=17)
        ratio = b.spot[:, -1] / b.spot[:, 0]
        se = ratio.std() / math.sqrt(n)
        assert abs(ratio.mean() - math.exp(SCENARIO1.nu)) < 3 * se

    def test_jumps_present_at_positive_intensity(self):
        # Diffusion turned off: nonzero daily moves are exactly the jumps.
        params = MjdParams(nu=0.0, sigma=0.0, lam=5.0, mu_j=-0.05, sigma_j=0.02)
        b = simulate_mjd(params, GRID_DAILY, 200, seed=23)
        drift = (params.nu - params.jump_compensator) / 252
        jumps = b.daily_log_returns - drift
        frac_jump_days = (np.abs(jumps) > 1e-12).mean()
        expected = 1.0 - math.exp(-5.0 / 252)  # P(N >= 1) per day
        assert frac_jump_days == pytest.approx(expected, rel=0.05)


class TestGarch:
    def test_noise_free_recursion(self):
        eps = np.zeros((1, 6))
        daily, aux = garch_recursion(GARCH15, eps, days_per_period=1)
        assert (daily == GARCH15.mu).all()
        var = GARCH15.stationary_variance
        for p in range(6):
            assert aux[0, p] == pytest.approx(math.sqrt(var), rel=1e-14)
            var = GARCH15.omega + GARCH15.beta * var

    def test_table_level_stationary_volatility(self):
        # omega rows pin annualized stationary vols at 10/15/20%.
        for omega, vol in [(8.730e-07, 0.10), (1.964e-06, 0.15), (3.492e-06, 0.20)]:
            p = GarchParams(mu=3.968e-04, omega=omega, upsilon=0.05, gamma=0.6, beta=0.91)
            assert abs(p.annual_volatility() - vol) < 1e-4

    def test_sampled_variance_matches_stationary(self):
        b = simulate_garch(GARCH15, GRID_DAILY, 1200, seed=5)
        sample_var = b.daily_log_returns.var()
        assert sample_var == pytest.approx(GARCH15.stationary_variance, rel=0.02)

    def test_non_stationary_rejected(self):
        with pytest.raises(ParameterError):
            GarchParams(mu=0.0, omega=1e-6, upsilon=0.2, gamma=1.0, beta=0.7)

    def test_aux_state_is_next_day_volatility(self):
        b = simulate_garch(GARCH15, GRID_MONTHLY, 4, seed=8)
        assert b.aux_state.shape == (4, 12)
        assert (b.aux_state[:, 0] == math.sqrt(GARCH15.stationary_variance)).all()


class TestIv:
    def test_noiseless_fixed_point(self):
        params = IvParams(kappa=0.2, theta=math.log(0.15), sigma_iv=0.0, rho=0.0)
        eps = np.random.default_rng(0).standard_normal((4, 252))
        iv = simulate_iv(params, GRID_DAILY, eps, seed=1)
        assert np.allclose(iv, 0.15, rtol=1e-14)

    def test_noiseless_geometric_convergence(self):
        # Forced start away from the long-run level via a custom recursion run.
        params = IvParams(kappa=0.3, theta=math.log(0.2), sigma_iv=0.0, rho=0.0)
        x = math.log(0.1)
        for _ in range(200):
            x = x + params.kappa * (params.theta - x)
        assert x == pytest.approx(params.theta, abs=1e-12)

    def test_stationary_moments(self):
        params = IV_DEFAULT
        n_paths = 600
        eps = np.empty((n_paths, 252))
        for p in range(n_paths):
            eps[p] = np.random.default_rng((99, p)).standard_normal(252)
        grid = GRID_DAILY
        iv = simulate_iv(params, grid, eps, seed=77)
        log_iv = np.log(iv[:, 50:])  # discard mean-reversion burn-in
        assert log_iv.mean() == pytest.approx(params.theta, abs=0.01)
        assert log_iv.var() == pytest.approx(params.stationary_variance, rel=0.05)

    def test_innovation_correlation(self):
        rng = np.random.default_rng(12)
        eps = rng.standard_normal((400, 252))
        z = correlated_innovations(eps, -0.6, seed=3)
        got = np.corrcoef(eps.ravel(), z.ravel())[0, 1]
        assert got == pytest.approx(-0.6, abs=0.01)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            simulate_iv(IV_DEFAULT, GRID_DAILY, np.zeros((3, 100)), seed=0)

    def test_kappa_domain(self):
        with pytest.raises(ParameterError):
            IvParams(kappa=2.5, theta=0.0, sigma_iv=0.1, rho=0.0)
        with pytest.raises(ParameterError):
            IvParams(kappa=0.15, theta=0.0, sigma_iv=0.1, rho=-1.5)


class TestBsm:
    def test_zero_volatility_drift(self):
        b = simulate_bsm(BsmParams(mu=0.1, sigma=0.0), GRID_DAILY, 2, seed=0)
        assert (b.daily_log_returns == 0.1 / 252).all()

    def test_terminal_mean_log_return(self):
        params = BsmParams(mu=0.1, sigma=0.15)
        n = 20_000
        b = simulate_bsm(params, GRID_MONTHLY, n, seed=6)
        total = np.log(b.spot[:, -1] / b.spot[:, 0])
        se = total.std() / math.sqrt(n)
        expected = params.mu - 0.5 * params.sigma**2
        assert abs(total.mean() - expected) < 3 * se

    def test_monthly_return_variance(self):
        params = BsmParams(mu=0.1, sigma=0.15)
        b = simulate_bsm(params, GRID_MONTHLY, 8000, seed=10)
        target = params.sigma**2 * 21 / 252
        assert b.period_log_returns.var() == pytest.approx(target, rel=0.02)


class TestBundleInvariants:
    def test_spot_recursion_is_bitwise(self):
        b = simulate_garch(GARCH15, GRID_MONTHLY, 10, seed=2)
        for n in range(12):
            np.testing.assert_array_equal(
                b.spot[:, n + 1], b.spot[:, n] * np.exp(b.period_log_returns[:, n])
            )

    def test_period_returns_match_aggregation(self):
        b = simulate_mjd(SCENARIO1, GRID_MONTHLY, 10, seed=2)
        np.testing.assert_array_equal(
            b.period_log_returns, aggregate_daily_to_period(b.daily_log_returns)
        )

    def test_shape_validation(self):
        with pytest.raises(ShapeError):
            PathBundle(
                daily_log_returns=np.zeros((2, 3, 1)),
                period_log_returns=np.zeros((2, 4)),
                spot=np.zeros((2, 4)),
            )
