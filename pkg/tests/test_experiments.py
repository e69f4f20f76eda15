import math

import numpy as np
import pytest

from eqrisk.errors import ConfigError
from eqrisk.experiments import (
    BSM_SCENARIOS,
    GARCH_SCENARIOS,
    HEDGE_MENU,
    MJD_SCENARIOS,
    PRICE_COLUMNS,
    TABLES,
    ExperimentConfig,
    IV_KAPPA,
    IV_RHO,
    IV_SIGMA,
    IV_THETA_DEFAULT,
    price_row,
    run_experiment,
    run_table,
)

TINY = tuple(
    sorted(
        {
            "n_train_paths": "300",
            "n_epochs": "1",
            "batch_size": "100",
            "n_test_paths": "400",
        }.items()
    )
)


class TestCatalog:
    def test_mjd_scenario_constants(self):
        s1, s2, s3 = (MJD_SCENARIOS[k] for k in ("1", "2", "3"))
        assert (s1.nu, s1.sigma, s1.lam, s1.mu_j, s1.sigma_j) == (
            0.1112, 0.1323, 1.0, -0.05, 0.05,
        )
        assert (s2.nu, s2.lam, s2.mu_j, s2.sigma_j) == (0.1111, 0.25, -0.10, 0.10)
        assert (s3.nu, s3.lam, s3.mu_j, s3.sigma_j) == (0.1110, 0.08, -0.20, 0.15)
        assert s2.sigma == s3.sigma == 0.1323

    def test_garch_row_constants(self):
        for key, omega in (("10", 8.730e-07), ("15", 1.964e-06), ("20", 3.492e-06)):
            p = GARCH_SCENARIOS[key]
            assert (p.mu, p.omega, p.upsilon, p.gamma, p.beta) == (
                3.968e-04, omega, 0.05, 0.6, 0.91,
            )

    def test_iv_default_constants(self):
        assert (IV_KAPPA, IV_SIGMA, IV_RHO) == (0.15, 0.06, -0.6)
        assert IV_THETA_DEFAULT == math.log(0.15)

    def test_bsm_sigmas(self):
        assert [BSM_SCENARIOS[k].sigma for k in ("10", "15", "20")] == [0.10, 0.15, 0.20]
        assert all(BSM_SCENARIOS[k].mu == 0.1 for k in BSM_SCENARIOS)

    def test_hedge_menu_grid_mapping(self):
        assert HEDGE_MENU["daily-stock"][:2] == (252, 1)
        assert HEDGE_MENU["monthly-stock"][:2] == (12, 21)
        assert HEDGE_MENU["1m-options"][:2] == (12, 21)
        assert HEDGE_MENU["3m-options"][:2] == (4, 63)
        for n_per, days, _ in HEDGE_MENU.values():
            assert n_per * days == 252


class TestConfig:
    def test_validation_errors(self):
        good = dict(model="bsm", scenario="15", hedge="daily-stock", strike=100.0, alpha=0.95)
        ExperimentConfig(**good).validate()
        for bad in (
            {**good, "model": "heston"},
            {**good, "hedge": "weekly-stock"},
            {**good, "scenario": "99"},
            {**good, "alpha": 1.5},
            {**good, "strike": -5.0},
            {**good, "scale": "galactic"},
        ):
            scale = bad.pop("scale", "desk")
            with pytest.raises(ConfigError):
                ExperimentConfig(**bad, scale=scale).validate()

    def test_iv_theta_tracks_model(self):
        garch = ExperimentConfig("garch", "20", "1m-options", 100.0, 0.95)
        assert garch.iv_params().theta == pytest.approx(math.log(0.20), abs=2e-4)
        mjd = ExperimentConfig("mjd", "1", "1m-options", 100.0, 0.95)
        assert mjd.iv_params().theta == math.log(0.15)
        override = ExperimentConfig(
            "garch", "15", "1m-options", 100.0, 0.95, iv_theta=math.log(0.14)
        )
        assert override.iv_params().theta == math.log(0.14)

    def test_hash_stability_and_sensitivity(self):
        a = ExperimentConfig("bsm", "15", "3m-options", 100.0, 0.95, seed=1)
        b = ExperimentConfig("bsm", "15", "3m-options", 100.0, 0.95, seed=1)
        c = ExperimentConfig("bsm", "15", "3m-options", 100.0, 0.95, seed=2)
        assert a.config_hash() == b.config_hash() != c.config_hash()

    def test_unknown_override_rejected(self):
        cfg = ExperimentConfig(
            "bsm", "15", "3m-options", 100.0, 0.95, overrides=(("momentum", "1"),)
        )
        with pytest.raises(ConfigError):
            cfg.train_config(seed=0)


class TestRunExperiment:
    def test_tiny_cell_end_to_end(self, tmp_path):
        cfg = ExperimentConfig(
            "bsm", "15", "3m-options", 90.0, 0.9, seed=3, with_vo=True, overrides=TINY
        )
        result = run_experiment(cfg, out_dir=str(tmp_path))
        assert result.eps_star == pytest.approx(
            0.5 * (result.eps_long + result.eps_short), rel=1e-12
        )
        b_n = math.exp(0.03)
        assert result.price == pytest.approx(
            (result.eps_short - result.eps_long) / (2 * b_n), rel=1e-12
        )
        assert result.vo_price is not None
        files = {p.name.split("_")[0] for p in tmp_path.iterdir()}
        assert {"price", "train", "policy", "report"} <= files
        row = price_row(cfg, result)
        assert len(row) == len(PRICE_COLUMNS)

    def test_determinism_of_metrics(self):
        cfg = ExperimentConfig("mjd", "2", "3m-options", 100.0, 0.95, seed=5, overrides=TINY)
        r1 = run_experiment(cfg)
        r2 = run_experiment(cfg)
        assert r1.eps_long == r2.eps_long
        assert r1.eps_short == r2.eps_short
        assert r1.price == r2.price

    def test_seed_sensitivity(self):
        base = dict(
            model="bsm", scenario="15", hedge="3m-options", strike=100.0,
            alpha=0.9, overrides=TINY,
        )
        r1 = run_experiment(ExperimentConfig(**base, seed=1))
        r2 = run_experiment(ExperimentConfig(**base, seed=2))
        assert r1.price != r2.price


class TestRunTable:
    def test_unknown_table(self):
        with pytest.raises(ConfigError):
            run_table("T99")

    def test_t6_shape_and_determinism(self):
        text1 = run_table("T6", scale="desk", seed=1, overrides=TINY)
        text2 = run_table("T6", scale="desk", seed=1, overrides=TINY)
        assert text1 == text2
        lines = text1.strip().splitlines()
        header = lines[0].split(",")
        assert header[:3] == ["metric", "hedge", "alpha"]
        assert len(header) == 3 + 3  # one scenario x three strikes
        assert len(lines) == 1 + 3 * 3  # three metrics x three alphas

    def test_relative_mode_rebases_alpha_rows(self):
        absolute = run_table("T6", scale="desk", seed=1, overrides=TINY)
        relative = run_table("T6", scale="desk", seed=1, relative=True, overrides=TINY)
        abs_rows = [ln.split(",") for ln in absolute.strip().splitlines()[1:]]
        rel_rows = [ln.split(",") for ln in relative.strip().splitlines()[1:]]
        # base-alpha rows identical, higher-alpha rows become ratios - 1
        assert rel_rows[0] == abs_rows[0]
        base = float(abs_rows[0][3])
        high = float(abs_rows[1][3])
        assert float(rel_rows[1][3]) == pytest.approx(high / base - 1.0, rel=1e-12)

    def test_table_definitions_cover_ids(self):
        for tid in ("T3", "T5", "T6", "T7", "T8", "SM1", "SM2", "SM5", "SM8"):
            assert tid in TABLES
        assert TABLES["T7"].with_vo and TABLES["SM5"].with_vo
        assert TABLES["T3"].hedges == ("daily-stock", "monthly-stock", "1m-options", "3m-options")


def synthetic_results(tdef):
    """Fabricate one PricingResult per cell without any training."""
    from eqrisk.engine import make_pricing_result
    from eqrisk.market import MarketGrid

    grid = MarketGrid(1.0, 4, 63, 0.03)
    out = {}
    i = 0
    for scen in tdef.scenarios:
        for theta in tdef.iv_thetas:
            for hedge in tdef.hedges:
                for alpha in tdef.alphas:
                    for k in tdef.strikes:
                        i += 1
                        out[(scen, theta, hedge, alpha, k)] = make_pricing_result(
                            eps_long=-1.0 - 0.01 * i,
                            eps_short=5.0 + 0.02 * i + alpha,
                            grid=grid,
                            vo_price=(4.0 + 0.01 * i) if tdef.with_vo else None,
                            alpha=alpha,
                        )
    return out


class TestTableLayout:
    def test_t3_grid_shape(self):
        from eqrisk.experiments import _format_table_csv

        tdef = TABLES["T3"]
        cells = tdef.cells("desk", seed=0)
        # 4 instruments x 3 scenarios x 3 moneyness levels
        assert len(cells) == 4 * 3 * 3
        text = _format_table_csv(tdef, synthetic_results(tdef), relative=False)
        lines = text.strip().splitlines()
        assert len(lines[0].split(",")) == 3 + 9  # scenario x moneyness columns
        assert len(lines) == 1 + 3 * 4  # 3 metrics x 4 instrument rows

    def test_t7_relative_rebases_on_vo(self):
        from eqrisk.experiments import _format_table_csv

        tdef = TABLES["T7"]
        results = synthetic_results(tdef)
        absolute = _format_table_csv(tdef, results, relative=False)
        relative = _format_table_csv(tdef, results, relative=True)
        abs_rows = {tuple(r.split(",")[:3]): r.split(",") for r in absolute.strip().splitlines()[1:]}
        rel_rows = {tuple(r.split(",")[:3]): r.split(",") for r in relative.strip().splitlines()[1:]}
        key_vo = ("c0_vo", "daily-stock", "0.95")
        key_star = ("c0_star", "daily-stock", "0.95")
        assert rel_rows[key_vo] == abs_rows[key_vo]  # benchmark row stays absolute
        c0 = float(abs_rows[key_star][3])
        vo = float(abs_rows[key_vo][3])
        assert float(rel_rows[key_star][3]) == pytest.approx(c0 / vo - 1.0, rel=1e-12)
