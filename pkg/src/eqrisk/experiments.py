"""Scenario catalog and experiment driver.

An experiment cell fixes (model, scenario, hedge menu, strike, risk level,
scale, seed), trains the long and short policies (plus optionally the
quadratic-hedging benchmark), evaluates exposures on an independent test set
and emits a pricing row.  Tables assemble grids of cells in a fixed layout
(rows: metric by hedge by risk level; columns: scenario by moneyness).
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

from .engine import (
    PricingResult,
    RiskSpec,
    TrainConfig,
    make_pricing_result,
    measured_exposures,
    train_policy,
    train_variance_optimal,
)
from .errors import ConfigError
from .instruments import ATM_OPTIONS, STOCK_ONLY, InstrumentSpec, TargetOption, bs_put
from .lstm import save_checkpoint
from .market import BsmParams, GarchParams, IvParams, MarketGrid, MjdParams
from .simulate import DEFAULT_S0, derive_seed, simulate_bsm, simulate_garch, simulate_mjd

RISK_FREE_RATE = 0.03
HORIZON_YEARS = 1.0

# (n_periods, days_per_period, instrument kind)
HEDGE_MENU = {
    "daily-stock": (252, 1, STOCK_ONLY),
    "monthly-stock": (12, 21, STOCK_ONLY),
    "1m-options": (12, 21, ATM_OPTIONS),
    "3m-options": (4, 63, ATM_OPTIONS),
}

MJD_SCENARIOS = {
    "1": MjdParams(nu=0.1112, sigma=0.1323, lam=1.0, mu_j=-0.05, sigma_j=0.05),
    "2": MjdParams(nu=0.1111, sigma=0.1323, lam=0.25, mu_j=-0.10, sigma_j=0.10),
    "3": MjdParams(nu=0.1110, sigma=0.1323, lam=0.08, mu_j=-0.20, sigma_j=0.15),
}

GARCH_SCENARIOS = {
    "10": GarchParams(mu=3.968e-04, omega=8.730e-07, upsilon=0.05, gamma=0.6, beta=0.91),
    "15": GarchParams(mu=3.968e-04, omega=1.964e-06, upsilon=0.05, gamma=0.6, beta=0.91),
    "20": GarchParams(mu=3.968e-04, omega=3.492e-06, upsilon=0.05, gamma=0.6, beta=0.91),
}

BSM_SCENARIOS = {
    "10": BsmParams(mu=0.1, sigma=0.10),
    "15": BsmParams(mu=0.1, sigma=0.15),
    "20": BsmParams(mu=0.1, sigma=0.20),
}

IV_KAPPA = 0.15
IV_SIGMA = 0.06
IV_RHO = -0.6
IV_THETA_DEFAULT = math.log(0.15)

STRIKES = (90.0, 100.0, 110.0)
MONEYNESS = {90.0: "OTM", 100.0: "ATM", 110.0: "ITM"}


@dataclass(frozen=True)
class ScaleSpec:
    """Optimization budget preset."""

    name: str
    n_train_paths: int
    n_epochs: int
    batch_size: int
    learning_rate: float
    n_test_paths: int
    lr_decay: float = 1.0


SCALES = {
    # Sized so a single cell finishes in minutes on one core.  The short
    # update budget (360 steps) wants a hotter, decaying learning rate.
    "desk": ScaleSpec("desk", 40_000, 10, 1_000, 0.02, 20_000, lr_decay=0.774),
    # The full study budget; hours per cell on one core.
    "paper": ScaleSpec("paper", 400_000, 50, 1_000, 0.01 / 6.0, 100_000),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """One pricing run; everything needed to reproduce it bitwise."""

    model: str
    scenario: str
    hedge: str
    strike: float
    alpha: float
    scale: str = "desk"
    seed: int = 0
    with_vo: bool = False
    iv_theta: float | None = None
    s0: float = DEFAULT_S0
    hidden: tuple = (24, 24)
    overrides: tuple = ()  # sorted (key, value) pairs overriding the scale

    def validate(self) -> None:
        if self.model not in ("mjd", "garch", "bsm"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.hedge not in HEDGE_MENU:
            raise ConfigError(f"unknown hedge menu {self.hedge!r}")
        if self.scenario not in self._scenario_table():
            raise ConfigError(
                f"unknown scenario {self.scenario!r} for model {self.model!r}"
            )
        if self.scale not in SCALES:
            raise ConfigError(f"unknown scale {self.scale!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.strike <= 0:
            raise ConfigError("strike must be positive")
        n_per, days, _ = HEDGE_MENU[self.hedge]
        if n_per * days != 252:
            raise ConfigError("hedge menu inconsistent with the 252-day year")

    def _scenario_table(self) -> dict:
        return {"mjd": MJD_SCENARIOS, "garch": GARCH_SCENARIOS, "bsm": BSM_SCENARIOS}[
            self.model
        ]

    def equity_params(self):
        return self._scenario_table()[self.scenario]

    def iv_params(self) -> IvParams:
        if self.iv_theta is not None:
            theta = self.iv_theta
        elif self.model == "mjd":
            theta = IV_THETA_DEFAULT
        else:
            theta = math.log(self.equity_params().annual_volatility())
        return IvParams(kappa=IV_KAPPA, theta=theta, sigma_iv=IV_SIGMA, rho=IV_RHO)

    def grid(self) -> MarketGrid:
        n_per, days, _ = HEDGE_MENU[self.hedge]
        return MarketGrid(HORIZON_YEARS, n_per, days, RISK_FREE_RATE)

    def instrument_spec(self) -> InstrumentSpec:
        return InstrumentSpec(HEDGE_MENU[self.hedge][2])

    def train_config(self, seed: int) -> TrainConfig:
        scale = SCALES[self.scale]
        kw = {
            "n_train_paths": scale.n_train_paths,
            "n_epochs": scale.n_epochs,
            "batch_size": scale.batch_size,
            "learning_rate": scale.learning_rate,
            "n_test_paths": scale.n_test_paths,
            "lr_decay": scale.lr_decay,
        }
        for key, value in self.overrides:
            if key not in kw:
                raise ConfigError(f"unknown scale override {key!r}")
            kw[key] = type(kw[key])(value)
        return TrainConfig(seed=seed, **kw)

    def config_hash(self) -> str:
        blob = repr(
            (
                self.model,
                self.scenario,
                self.hedge,
                self.strike,
                self.alpha,
                self.scale,
                self.seed,
                self.with_vo,
                self.iv_theta,
                self.s0,
                self.hidden,
                self.overrides,
            )
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def cell_seed(self) -> int:
        """Seed root for simulations and initializations.

        Deliberately excludes strike and alpha: cells that differ only in
        those share their simulated paths and initial networks, so
        sensitivity comparisons across moneyness or risk level are made on a
        fixed test set.
        """
        key = (self.model, self.scenario, self.hedge, self.iv_theta, self.seed)
        digest = hashlib.sha256(repr(key).encode()).digest()
        return int.from_bytes(digest[:8], "big") >> 1


_SIMULATORS = {"mjd": simulate_mjd, "garch": simulate_garch, "bsm": simulate_bsm}


def _simulate(cfg: ExperimentConfig, n_paths: int, seed: int):
    sim = _SIMULATORS[cfg.model]
    spec = cfg.instrument_spec()
    iv = cfg.iv_params() if spec.uses_options else None
    return sim(cfg.equity_params(), cfg.grid(), n_paths, seed, iv_params=iv, s0=cfg.s0)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> PricingResult:
    """Train, evaluate and price one experiment cell."""
    cfg.validate()
    t_start = time.perf_counter()
    grid = cfg.grid()
    spec = cfg.instrument_spec()
    target = TargetOption(cfg.strike, HORIZON_YEARS)
    risk = RiskSpec(alpha=cfg.alpha)
    cell = cfg.cell_seed()

    tc = cfg.train_config(seed=0)
    train_bundle = _simulate(cfg, tc.n_train_paths, derive_seed(cell, 1))
    test_bundle = _simulate(cfg, tc.n_test_paths, derive_seed(cell, 2))

    theta_short, log_short = train_policy(
        "short", train_bundle, spec, grid, target, risk,
        replace(tc, seed=derive_seed(cell, 3)), hidden=cfg.hidden,
    )
    theta_long, log_long = train_policy(
        "long", train_bundle, spec, grid, target, risk,
        replace(tc, seed=derive_seed(cell, 4)), hidden=cfg.hidden,
    )
    eps_long, eps_short = measured_exposures(
        theta_long, theta_short, test_bundle, spec, grid, target, risk
    )

    vo_price = None
    logs = {"short": log_short, "long": log_long}
    checkpoints = {"short": theta_short, "long": theta_long}
    if cfg.with_vo:
        if spec.uses_options:
            v0_init = None  # engine uses the time-0 implied volatility
        else:
            vol0 = cfg.equity_params().annual_volatility()
            v0_init = bs_put(cfg.s0, vol0, HORIZON_YEARS, cfg.strike, grid.rate)
        theta_vo, vo_price, log_vo = train_variance_optimal(
            train_bundle, spec, grid, target,
            replace(tc, seed=derive_seed(cell, 5)),
            hidden=cfg.hidden, initial_capital=v0_init,
        )
        logs["vo"] = log_vo
        checkpoints["vo"] = theta_vo

    result = make_pricing_result(
        eps_long, eps_short, grid,
        vo_price=vo_price, seed=cfg.seed, scenario=cfg.scenario, hedge=cfg.hedge,
        model=cfg.model, strike=cfg.strike, alpha=cfg.alpha,
        n_train=tc.n_train_paths, n_epochs=tc.n_epochs,
        wall_seconds=time.perf_counter() - t_start,
    )
    if out_dir is not None:
        _write_cell_outputs(cfg, result, logs, checkpoints, out_dir)
    return result


PRICE_COLUMNS = [
    "config_hash", "model", "scenario", "hedge", "K", "alpha",
    "eps_long", "eps_short", "c0_star", "eps_star", "eps_ratio", "c0_vo",
    "seed", "n_train", "n_epochs", "wall_seconds",
]


def price_row(cfg: ExperimentConfig, result: PricingResult) -> list[str]:
    def fmt(x):
        return "" if x is None else repr(float(x))

    return [
        cfg.config_hash(), cfg.model, cfg.scenario, cfg.hedge,
        repr(float(cfg.strike)), repr(float(cfg.alpha)),
        fmt(result.eps_long), fmt(result.eps_short), fmt(result.price),
        fmt(result.eps_star), fmt(result.eps_ratio), fmt(result.vo_price),
        str(cfg.seed), str(result.n_train), str(result.n_epochs),
        repr(float(result.wall_seconds)),
    ]


def _write_cell_outputs(cfg, result, logs, checkpoints, out_dir) -> None:
    import os

    os.makedirs(out_dir, exist_ok=True)
    tag = cfg.config_hash()
    with open(os.path.join(out_dir, f"price_{tag}.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PRICE_COLUMNS)
        writer.writerow(price_row(cfg, result))
    for side, log in logs.items():
        with open(os.path.join(out_dir, f"train_{tag}_{side}.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_risk", "val_risk", "grad_norm", "wall_seconds"])
            for row in log.rows():
                writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    for side, params in checkpoints.items():
        save_checkpoint(params, os.path.join(out_dir, f"policy_{tag}_{side}.txt"), seed=cfg.seed)
    with open(os.path.join(out_dir, f"report_{tag}.txt"), "w") as fh:
        fh.write(format_report(cfg, result))


def format_report(cfg: ExperimentConfig, r: PricingResult) -> str:
    lines = [
        f"model={cfg.model} scenario={cfg.scenario} hedge={cfg.hedge} "
        f"K={cfg.strike:g} alpha={cfg.alpha:g} scale={cfg.scale} seed={cfg.seed}",
        f"long exposure   eps_L(0) = {r.eps_long:.6f}",
        f"short exposure  eps_S(0) = {r.eps_short:.6f}",
        f"equal risk price C0*     = {r.price:.6f}",
        f"residual risk   eps*     = {r.eps_star:.6f}",
        f"per-dollar risk eps*/C0* = "
        + ("n/a" if r.eps_ratio is None else f"{r.eps_ratio:.6f}"),
    ]
    if r.vo_price is not None:
        lines.append(f"quadratic benchmark C0_VO = {r.vo_price:.6f}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class TableDef:
    """Grid of cells sharing one model, in the reference layout."""

    table_id: str
    model: str
    scenarios: tuple
    hedges: tuple
    strikes: tuple = STRIKES
    alphas: tuple = (0.95,)
    with_vo: bool = False
    iv_thetas: tuple = (None,)  # long-run IV overrides (SM2 style)

    def cells(self, scale: str, seed: int) -> list[ExperimentConfig]:
        out = []
        for scen in self.scenarios:
            for theta in self.iv_thetas:
                for hedge in self.hedges:
                    for alpha in self.alphas:
                        for k in self.strikes:
                            out.append(
                                ExperimentConfig(
                                    model=self.model, scenario=scen, hedge=hedge,
                                    strike=k, alpha=alpha, scale=scale, seed=seed,
                                    with_vo=self.with_vo, iv_theta=theta,
                                )
                            )
        return out


ALL_HEDGES = ("daily-stock", "monthly-stock", "1m-options", "3m-options")
ALL_ALPHAS = (0.90, 0.95, 0.99)

TABLES = {
    "T3": TableDef("T3", "mjd", ("1", "2", "3"), ALL_HEDGES),
    "T5": TableDef("T5", "garch", ("10", "15", "20"), ALL_HEDGES),
    "T6": TableDef("T6", "mjd", ("2",), ("3m-options",), alphas=ALL_ALPHAS),
    "T7": TableDef("T7", "mjd", ("1", "2", "3"), ALL_HEDGES, with_vo=True),
    "T8": TableDef("T8", "mjd", ("1", "2", "3"), ("3m-options",), alphas=ALL_ALPHAS, with_vo=True),
    "SM1": TableDef("SM1", "bsm", ("10", "15", "20"), ALL_HEDGES),
    "SM2": TableDef(
        "SM2", "garch", ("15",), ("1m-options", "3m-options"),
        iv_thetas=(math.log(0.14), math.log(0.15), math.log(0.16)),
    ),
    "SM3": TableDef("SM3", "mjd", ("1", "3"), ("3m-options",), alphas=ALL_ALPHAS),
    "SM4": TableDef("SM4", "garch", ("10", "15", "20"), ("3m-options",), alphas=ALL_ALPHAS),
    "SM5": TableDef("SM5", "bsm", ("10", "15", "20"), ALL_HEDGES, with_vo=True),
    "SM6": TableDef("SM6", "garch", ("10", "15", "20"), ALL_HEDGES, with_vo=True),
    "SM7": TableDef(
        "SM7", "bsm", ("10", "15", "20"), ("3m-options",), alphas=ALL_ALPHAS, with_vo=True
    ),
    "SM8": TableDef(
        "SM8", "garch", ("10", "15", "20"), ("3m-options",), alphas=ALL_ALPHAS, with_vo=True
    ),
}


def _run_cell(args):
    cfg, out_dir = args
    return run_experiment(cfg, out_dir=out_dir)


def run_table(
    table_id: str,
    scale: str = "desk",
    seed: int = 0,
    out_dir=None,
    relative: bool = False,
    jobs: int = 1,
    overrides: tuple = (),
) -> str:
    """Run every cell of a table and return its CSV as a string.

    With ``relative=True`` alpha-sensitivity rows are printed as percentage
    increases over the lowest confidence level, and equal risk prices in
    benchmark tables as percentage increases over the quadratic-hedging
    price.
    """
    if table_id not in TABLES:
        raise ConfigError(f"unknown table id {table_id!r}")
    tdef = TABLES[table_id]
    cells = tdef.cells(scale, seed)
    if overrides:
        cells = [replace(c, overrides=tuple(overrides)) for c in cells]

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, [(c, None) for c in cells]))
    else:
        results = [run_experiment(c) for c in cells]
    by_key = {
        (c.scenario, c.iv_theta, c.hedge, c.alpha, c.strike): r
        for c, r in zip(cells, results)
    }

    text = _format_table_csv(tdef, by_key, relative)
    if out_dir is not None:
        import os

        os.makedirs(out_dir, exist_ok=True)
        mode = "rel" if relative else "abs"
        name = f"table_{table_id}_{scale}_seed{seed}_{mode}.csv"
        path = os.path.join(out_dir, name)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        rows_path = os.path.join(out_dir, f"table_{table_id}_{scale}_seed{seed}_rows.csv")
        with open(rows_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(PRICE_COLUMNS)
            for c, r in zip(cells, results):
                writer.writerow(price_row(c, r))
        return path
    return text


def _metric_value(result: PricingResult, metric: str):
    return {
        "c0_star": result.price,
        "eps_star": result.eps_star,
        "eps_ratio": result.eps_ratio,
        "c0_vo": result.vo_price,
    }[metric]


def _format_table_csv(tdef: TableDef, by_key: dict, relative: bool) -> str:
    col_keys = [
        (scen, theta, k)
        for scen in tdef.scenarios
        for theta in tdef.iv_thetas
        for k in tdef.strikes
    ]

    def col_label(scen, theta, k):
        label = f"{tdef.model}-{scen}"
        if theta is not None:
            label += f"-iv{math.exp(theta):.2f}"
        return f"{label}/{MONEYNESS.get(k, f'K{k:g}')}"

    metrics = ["c0_vo", "c0_star"] if tdef.with_vo else ["c0_star", "eps_star", "eps_ratio"]
    base_alpha = min(tdef.alphas)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "hedge", "alpha"] + [col_label(*ck) for ck in col_keys])
    for metric in metrics:
        for hedge in tdef.hedges:
            for alpha in tdef.alphas:
                if metric == "c0_vo" and alpha != base_alpha:
                    continue  # one benchmark row per hedge
                row = [metric, hedge, repr(float(alpha))]
                for scen, theta, k in col_keys:
                    r = by_key[(scen, theta, hedge, alpha, k)]
                    val = _metric_value(r, metric)
                    if relative and metric == "c0_star" and tdef.with_vo:
                        ref = _metric_value(r, "c0_vo")
                        val = None if not ref else val / ref - 1.0
                    elif relative and alpha != base_alpha and metric != "c0_vo":
                        ref = _metric_value(
                            by_key[(scen, theta, hedge, base_alpha, k)], metric
                        )
                        val = None if not ref else val / ref - 1.0
                    row.append("" if val is None else repr(float(val)))
                writer.writerow(row)
    return buf.getvalue()
