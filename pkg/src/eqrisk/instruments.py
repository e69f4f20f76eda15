"""Hedge instrument pricing and the target payoff.

The tradable menu is either the stock alone or one at-the-money call plus
one at-the-money put per period, both struck at the period-start spot,
priced by Black-Scholes at the simulated implied volatility and held to
their single-period expiry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError, DomainError, ParameterError
from .market import MarketGrid, PathBundle

STOCK_ONLY = "stock_only"
ATM_OPTIONS = "atm_options"


@dataclass(frozen=True)
class InstrumentSpec:
    """Which risky instruments the policy trades each period."""

    kind: str
    option_tenor_periods: int = 1

    def __post_init__(self):
        if self.kind not in (STOCK_ONLY, ATM_OPTIONS):
            raise ParameterError(f"unknown instrument kind {self.kind!r}")
        if self.option_tenor_periods != 1:
            raise ParameterError("only single-period option tenors are supported")

    @property
    def n_options(self) -> int:
        """Number of non-stock risky instruments."""
        return 2 if self.kind == ATM_OPTIONS else 0

    @property
    def n_traded(self) -> int:
        """Instruments the policy actually holds (stock, or call+put)."""
        return 2 if self.kind == ATM_OPTIONS else 1

    @property
    def uses_options(self) -> bool:
        return self.kind == ATM_OPTIONS


@dataclass(frozen=True)
class TargetOption:
    """European put being priced and hedged."""

    strike: float
    maturity_years: float

    def __post_init__(self):
        if self.strike <= 0 or self.maturity_years <= 0:
            raise ParameterError("strike and maturity must be positive")


def normal_cdf(x):
    """Standard normal CDF, accurate to machine precision via erfc."""
    return ndtr(x)


def _bs_d1_d2(s, iv, dt, k, r):
    s = np.asarray(s, dtype=np.float64)
    iv = np.asarray(iv, dtype=np.float64)
    dt = np.asarray(dt, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if np.any(s <= 0) or np.any(k <= 0):
        raise DomainError("spot and strike must be positive")
    if np.any(iv <= 0) or np.any(dt <= 0):
        raise DomainError("volatility and time to maturity must be positive")
    vol = iv * np.sqrt(dt)
    d1 = (np.log(s / k) + (r + 0.5 * iv**2) * dt) / vol
    return d1, d1 - vol


def bs_call(s, iv, dt, k, r):
    """Black-Scholes call price; accepts scalars or broadcastable arrays."""
    d1, d2 = _bs_d1_d2(s, iv, dt, k, r)
    out = np.asarray(s) * ndtr(d1) - np.exp(-r * np.asarray(dt)) * np.asarray(k) * ndtr(d2)
    return float(out) if np.ndim(out) == 0 else out


def bs_put(s, iv, dt, k, r):
    """Black-Scholes put price; accepts scalars or broadcastable arrays."""
    d1, d2 = _bs_d1_d2(s, iv, dt, k, r)
    out = np.exp(-r * np.asarray(dt)) * np.asarray(k) * ndtr(-d2) - np.asarray(s) * ndtr(-d1)
    return float(out) if np.ndim(out) == 0 else out


def payoff_put(s_t, k):
    """max(K - S_T, 0), elementwise."""
    return np.maximum(np.asarray(k, dtype=np.float64) - s_t, 0.0)


def build_period_instruments(
    bundle: PathBundle, spec: InstrumentSpec, grid: MarketGrid
) -> tuple[np.ndarray, np.ndarray]:
    """Per-period begin and end prices of every tradable risky instrument.

    Returns ``(begin, end)``, each shaped ``(n_paths, N, 1 + D)`` with the
    stock in column 0.  Option columns (call then put) are struck exactly at
    the period-start spot, priced at the period-start implied volatility for
    a one-period tenor, and end at their intrinsic expiry value.
    """
    n, n_per = bundle.n_paths, bundle.n_periods
    width = 1 + spec.n_options
    begin = np.empty((n, n_per, width))
    end = np.empty((n, n_per, width))
    begin[:, :, 0] = bundle.spot[:, :-1]
    end[:, :, 0] = bundle.spot[:, 1:]
    if spec.uses_options:
        if bundle.iv_state is None:
            raise ConfigError("option hedging requires an implied-volatility state")
        s_now = bundle.spot[:, :-1]
        s_next = bundle.spot[:, 1:]
        begin[:, :, 1] = bs_call(s_now, bundle.iv_state, grid.dt, s_now, grid.rate)
        begin[:, :, 2] = bs_put(s_now, bundle.iv_state, grid.dt, s_now, grid.rate)
        end[:, :, 1] = np.maximum(s_next - s_now, 0.0)
        end[:, :, 2] = np.maximum(s_now - s_next, 0.0)
    return begin, end
