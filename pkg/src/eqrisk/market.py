"""Trading calendar, model parameter sets and simulated path containers.

Conventions used throughout the package:

* a year has exactly 252 trading days;
* the hedging horizon is split into ``n_periods`` rebalancing periods of
  ``days_per_period`` days each, so ``n_periods * days_per_period`` equals
  ``252 * t_years``;
* 0-based period index ``p`` covers the interval ``[t_p, t_{p+1}]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError

DAYS_PER_YEAR = 252


@dataclass(frozen=True)
class MarketGrid:
    """Rebalancing calendar plus the risk-free discounting curve."""

    t_years: float
    n_periods: int
    days_per_period: int
    rate: float

    def __post_init__(self):
        if self.n_periods < 1 or self.days_per_period < 1:
            raise ParameterError("n_periods and days_per_period must be >= 1")
        if self.t_years <= 0:
            raise ParameterError("t_years must be positive")
        expected = DAYS_PER_YEAR * self.t_years
        if abs(self.n_periods * self.days_per_period - expected) > 1e-9:
            raise ParameterError(
                f"calendar mismatch: {self.n_periods} periods x "
                f"{self.days_per_period} days != 252 * {self.t_years} years"
            )

    @property
    def dt(self) -> float:
        """Length of one rebalancing period in years."""
        return self.t_years / self.n_periods

    @property
    def n_days(self) -> int:
        return self.n_periods * self.days_per_period

    def t(self, n: int) -> float:
        return n * self.dt

    def discount_factor(self, n: int) -> float:
        """Accumulation factor B_n = exp(r * t_n); B_0 = 1."""
        return math.exp(self.rate * self.t(n))

    def discount_curve(self) -> np.ndarray:
        """B_0 .. B_N as an array."""
        return np.exp(self.rate * self.dt * np.arange(self.n_periods + 1))

    @property
    def growth(self) -> float:
        """Per-period risk-free growth factor exp(r * dt)."""
        return math.exp(self.rate * self.dt)


@dataclass(frozen=True)
class MjdParams:
    """Jump-diffusion log-return parameters, annual scale.

    ``nu`` is the expected continuously compounded yearly growth rate of the
    stock, ``sigma`` the diffusion volatility, ``lam`` the yearly jump
    intensity and (``mu_j``, ``sigma_j``) the Gaussian jump-size moments.
    """

    nu: float
    sigma: float
    lam: float
    mu_j: float
    sigma_j: float

    def __post_init__(self):
        # sigma == 0 is admitted so the deterministic limit is exact.
        if self.sigma < 0:
            raise ParameterError("diffusion volatility must be >= 0")
        if self.lam < 0:
            raise ParameterError("jump intensity must be >= 0")
        if self.sigma_j < 0:
            raise ParameterError("jump volatility must be >= 0")

    @property
    def jump_compensator(self) -> float:
        """lambda * (E[e^jump] - 1), the drift correction for jumps."""
        return self.lam * (math.exp(self.mu_j + 0.5 * self.sigma_j**2) - 1.0)

    def annual_volatility(self) -> float:
        """Stationary yearly standard deviation of log-returns."""
        return math.sqrt(self.sigma**2 + self.lam * (self.mu_j**2 + self.sigma_j**2))


@dataclass(frozen=True)
class GarchParams:
    """GJR-GARCH(1,1) daily log-return parameters."""

    mu: float
    omega: float
    upsilon: float
    gamma: float
    beta: float

    def __post_init__(self):
        if self.omega <= 0 or self.upsilon <= 0 or self.beta <= 0:
            raise ParameterError("omega, upsilon and beta must be positive")
        if self.upsilon * (1.0 + self.gamma**2) + self.beta >= 1.0:
            raise ParameterError(
                "non-stationary GJR-GARCH parameters: "
                "upsilon*(1+gamma^2)+beta must be < 1"
            )

    @property
    def stationary_variance(self) -> float:
        """Unconditional daily variance of the volatility recursion."""
        return self.omega / (1.0 - self.upsilon * (1.0 + self.gamma**2) - self.beta)

    def annual_volatility(self) -> float:
        return math.sqrt(DAYS_PER_YEAR * self.stationary_variance)


@dataclass(frozen=True)
class BsmParams:
    """Lognormal i.i.d. daily return parameters, annual scale."""

    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ParameterError("volatility must be >= 0")

    def annual_volatility(self) -> float:
        return self.sigma


@dataclass(frozen=True)
class IvParams:
    """Mean-reverting log implied-volatility (daily AR(1)) parameters.

    ``rho`` is the correlation between the daily equity innovation and the
    daily IV innovation.  ``0 < kappa < 2`` is required so the process has a
    finite stationary variance ``sigma_iv^2 / (kappa * (2 - kappa))``.
    """

    kappa: float
    theta: float
    sigma_iv: float
    rho: float

    def __post_init__(self):
        if not 0.0 < self.kappa < 2.0:
            raise ParameterError("kappa must lie in (0, 2)")
        if self.sigma_iv < 0:
            raise ParameterError("sigma_iv must be >= 0")
        if abs(self.rho) > 1.0:
            raise ParameterError("|rho| must be <= 1")

    @property
    def stationary_mean(self) -> float:
        return self.theta

    @property
    def stationary_variance(self) -> float:
        return self.sigma_iv**2 / (self.kappa * (2.0 - self.kappa))


@dataclass
class PathBundle:
    """Simulated market paths aggregated to the trading grid.

    Attributes
    ----------
    daily_log_returns : (n_paths, N, M) daily stock log-returns.
    period_log_returns : (n_paths, N) per-period sums of the daily returns.
    spot : (n_paths, N+1) stock price at each rebalancing date, built
        multiplicatively so that ``spot[:, p+1] == spot[:, p] *
        exp(period_log_returns[:, p])`` holds bitwise.
    aux_state : (n_paths, N) extra per-period state variable (the daily GARCH
        volatility applying to the first day after each trading date), or
        ``None`` for models without one.
    iv_state : (n_paths, N) implied volatility observed at each trading date,
        or ``None`` when no IV process was simulated.
    """

    daily_log_returns: np.ndarray
    period_log_returns: np.ndarray
    spot: np.ndarray
    aux_state: np.ndarray | None = None
    iv_state: np.ndarray | None = None

    def __post_init__(self):
        n, n_per, _ = self.daily_log_returns.shape
        if self.period_log_returns.shape != (n, n_per):
            raise ShapeError("period_log_returns shape mismatch")
        if self.spot.shape != (n, n_per + 1):
            raise ShapeError("spot shape mismatch")
        for name in ("aux_state", "iv_state"):
            arr = getattr(self, name)
            if arr is not None and arr.shape != (n, n_per):
                raise ShapeError(f"{name} shape mismatch")

    @property
    def n_paths(self) -> int:
        return self.daily_log_returns.shape[0]

    @property
    def n_periods(self) -> int:
        return self.daily_log_returns.shape[1]

    def terminal_spot(self) -> np.ndarray:
        return self.spot[:, -1]
