"""Monte Carlo simulation of daily market dynamics on the trading grid.

Reproducibility contract: every path owns an independent RNG substream keyed
by ``(seed, stream_tag, path_index)``, so path ``i`` of a simulation is
bitwise identical no matter how many paths are requested and regardless of
any parallel scheduling.  Within a path the draw order is fixed and
documented on each simulator.  Normal variates come from numpy's inverse-CDF
free ziggurat on the per-path stream; Poisson jump counts use explicit
inverse-CDF sampling from one uniform per day.
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import ParameterError, ShapeError
from .market import (
    DAYS_PER_YEAR,
    BsmParams,
    GarchParams,
    IvParams,
    MarketGrid,
    MjdParams,
    PathBundle,
)

# Stream tags keep the equity and IV substreams of one seed disjoint.
_EQUITY_STREAM = 1
_IV_STREAM = 2

DEFAULT_S0 = 100.0


def path_rng(seed: int, stream: int, path: int) -> np.random.Generator:
    """Independent generator for one path of one stream."""
    return np.random.default_rng((seed, stream, path))


def derive_seed(*parts) -> int:
    """Collapse a tuple of integers into a fresh 63-bit seed."""
    ss = np.random.SeedSequence(tuple(int(p) for p in parts))
    return int(ss.generate_state(1, np.uint64)[0] >> 1)


def aggregate_daily_to_period(daily: np.ndarray) -> np.ndarray:
    """Sum daily quantities over each period, left to right.

    Accepts ``(..., N, M)`` and returns ``(..., N)``.  Summation order is the
    plain running sum over the day axis so results are reproducible digit by
    digit against a naive loop.
    """
    daily = np.asarray(daily)
    if daily.ndim < 2:
        raise ShapeError("expected at least (N, M) shaped input")
    m = daily.shape[-1]
    total = daily[..., 0].astype(np.float64, copy=True)
    for j in range(1, m):
        total += daily[..., j]
    return total


def _normals(seed: int, stream: int, n_paths: int, n_days: int) -> np.ndarray:
    out = np.empty((n_paths, n_days))
    for p in range(n_paths):
        out[p] = path_rng(seed, stream, p).standard_normal(n_days)
    return out


def _poisson_inverse(u: np.ndarray, rate: float) -> np.ndarray:
    """Inverse-CDF Poisson counts from uniforms (smallest k with F(k) >= u)."""
    counts = np.zeros(u.shape, dtype=np.int64)
    pmf = np.exp(-rate)
    cdf = np.full(u.shape, pmf)
    k = 0
    active = u > cdf
    while active.any():
        k += 1
        counts[active] += 1
        pmf = pmf * rate / k
        cdf = cdf + pmf
        active = u > cdf
    return counts


def _spot_from_periods(period_returns: np.ndarray, s0: float) -> np.ndarray:
    n_paths, n_per = period_returns.shape
    spot = np.empty((n_paths, n_per + 1))
    spot[:, 0] = s0
    for p in range(n_per):
        spot[:, p + 1] = spot[:, p] * np.exp(period_returns[:, p])
    return spot


def _bundle(daily_flat, grid, s0, aux=None, iv=None) -> PathBundle:
    n_paths = daily_flat.shape[0]
    daily = daily_flat.reshape(n_paths, grid.n_periods, grid.days_per_period)
    period = aggregate_daily_to_period(daily)
    return PathBundle(
        daily_log_returns=daily,
        period_log_returns=period,
        spot=_spot_from_periods(period, s0),
        aux_state=aux,
        iv_state=iv,
    )


def simulate_bsm(
    params: BsmParams,
    grid: MarketGrid,
    n_paths: int,
    seed: int,
    iv_params: IvParams | None = None,
    s0: float = DEFAULT_S0,
) -> PathBundle:
    """I.i.d. Gaussian daily log-returns with per-day mean (mu - sigma^2/2)/252.

    Per-path draw order: the 252*t daily normals.
    """
    if n_paths < 1:
        raise ParameterError("n_paths must be >= 1")
    eps = _normals(seed, _EQUITY_STREAM, n_paths, grid.n_days)
    drift = (params.mu - 0.5 * params.sigma**2) / DAYS_PER_YEAR
    scale = params.sigma / np.sqrt(DAYS_PER_YEAR)
    daily = drift + scale * eps
    iv = simulate_iv(iv_params, grid, eps, seed) if iv_params is not None else None
    return _bundle(daily, grid, s0, iv=iv)


def simulate_mjd(
    params: MjdParams,
    grid: MarketGrid,
    n_paths: int,
    seed: int,
    iv_params: IvParams | None = None,
    s0: float = DEFAULT_S0,
) -> PathBundle:
    """Gaussian diffusion plus compound-Poisson Gaussian jumps, daily grid.

    The drift carries the jump compensator so that E[S_T / S_0] = e^{nu T}.
    Days with no jump contribute an exact zero jump term.  Per-path draw
    order: daily normals, then one uniform per day for the jump count, then
    one normal per realized jump.
    """
    if n_paths < 1:
        raise ParameterError("n_paths must be >= 1")
    n_days = grid.n_days
    daily_rate = params.lam / DAYS_PER_YEAR
    drift = (params.nu - params.jump_compensator - 0.5 * params.sigma**2) / DAYS_PER_YEAR
    scale = params.sigma / np.sqrt(DAYS_PER_YEAR)

    eps = np.empty((n_paths, n_days))
    jumps = np.zeros((n_paths, n_days))
    for p in range(n_paths):
        rng = path_rng(seed, _EQUITY_STREAM, p)
        eps[p] = rng.standard_normal(n_days)
        if params.lam > 0:
            counts = _poisson_inverse(rng.random(n_days), daily_rate)
            total = int(counts.sum())
            if total:
                sizes = params.mu_j + params.sigma_j * rng.standard_normal(total)
                day_of_jump = np.repeat(np.arange(n_days), counts)
                jumps[p] = np.bincount(day_of_jump, weights=sizes, minlength=n_days)

    daily = drift + scale * eps + jumps
    iv = simulate_iv(iv_params, grid, eps, seed) if iv_params is not None else None
    return _bundle(daily, grid, s0, iv=iv)


def garch_recursion(
    params: GarchParams, eps: np.ndarray, days_per_period: int
) -> tuple[np.ndarray, np.ndarray]:
    """Run the GJR-GARCH volatility recursion on given innovations.

    ``eps`` is ``(n_paths, n_days)``.  Returns ``(daily_returns, aux)`` where
    ``aux[:, p]`` is the daily volatility applying to the first day of period
    ``p`` (the value a hedger observes at trading date ``t_p``).  The day-1
    variance is the stationary variance.
    """
    eps = np.asarray(eps, dtype=np.float64)
    if eps.ndim != 2:
        raise ShapeError("eps must be (n_paths, n_days)")
    n_paths, n_days = eps.shape
    if n_days % days_per_period:
        raise ShapeError("n_days must be a multiple of days_per_period")
    n_periods = n_days // days_per_period

    daily = np.empty((n_paths, n_days))
    aux = np.empty((n_paths, n_periods))
    var = np.full(n_paths, params.stationary_variance)
    for t in range(n_days):
        if t % days_per_period == 0:
            aux[:, t // days_per_period] = np.sqrt(var)
        sig = np.sqrt(var)
        e = eps[:, t]
        daily[:, t] = params.mu + sig * e
        var = params.omega + var * (
            params.upsilon * (np.abs(e) - params.gamma * e) ** 2 + params.beta
        )
    return daily, aux


def simulate_garch(
    params: GarchParams,
    grid: MarketGrid,
    n_paths: int,
    seed: int,
    iv_params: IvParams | None = None,
    s0: float = DEFAULT_S0,
) -> PathBundle:
    """GJR-GARCH(1,1) daily log-returns started from the stationary variance.

    Per-path draw order: the daily normals only.
    """
    if n_paths < 1:
        raise ParameterError("n_paths must be >= 1")
    eps = _normals(seed, _EQUITY_STREAM, n_paths, grid.n_days)
    daily, aux = garch_recursion(params, eps, grid.days_per_period)
    iv = simulate_iv(iv_params, grid, eps, seed) if iv_params is not None else None
    return _bundle(daily, grid, s0, aux=aux, iv=iv)


def correlated_innovations(
    stock_eps: np.ndarray, rho: float, seed: int
) -> np.ndarray:
    """IV innovations with corr(eps, Z) = rho, one substream per path.

    Z = rho * eps + sqrt(1 - rho^2) * Z_perp with Z_perp independent standard
    normals drawn from the ``(seed, IV stream, path)`` substream.
    """
    stock_eps = np.asarray(stock_eps, dtype=np.float64)
    flat = stock_eps.reshape(stock_eps.shape[0], -1)
    z_perp = _normals(seed, _IV_STREAM, flat.shape[0], flat.shape[1])
    z = rho * flat + np.sqrt(1.0 - rho**2) * z_perp
    return z.reshape(stock_eps.shape)


def simulate_iv(
    params: IvParams,
    grid: MarketGrid,
    stock_innovations: np.ndarray,
    seed: int,
) -> np.ndarray:
    """Daily mean-reverting log-IV path; returns the trading-date values.

    ``stock_innovations`` are the standardized daily equity innovations,
    shaped ``(n_paths, n_days)`` or ``(n_paths, N, M)``; the IV shocks are
    correlated with them day by day.  The process starts at its long-run
    level ``exp(theta)``.  The returned array is ``(n_paths, N)`` holding the
    implied volatility observed at each trading date t_0 .. t_{N-1}.
    """
    eps = np.asarray(stock_innovations, dtype=np.float64)
    flat = eps.reshape(eps.shape[0], -1)
    if flat.shape[1] != grid.n_days:
        raise ShapeError(
            f"stock_innovations cover {flat.shape[1]} days, grid has {grid.n_days}"
        )
    n_paths = flat.shape[0]
    m = grid.days_per_period
    z = correlated_innovations(flat, params.rho, seed).reshape(n_paths, grid.n_days)

    iv_state = np.empty((n_paths, grid.n_periods))
    log_iv = np.full(n_paths, params.theta)
    for t in range(grid.n_days):
        if t % m == 0:
            iv_state[:, t // m] = np.exp(log_iv)
        log_iv = log_iv + params.kappa * (params.theta - log_iv) + params.sigma_iv * z[:, t]
    return iv_state


def dump_paths_csv(bundle: PathBundle, grid: MarketGrid, path) -> None:
    """Write one row per path and trading date: spot, period return, states."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path_id", "n", "S_n", "y_n", "phi_n", "IV_n"])
        for p in range(bundle.n_paths):
            for n in range(grid.n_periods + 1):
                row = [p, n, repr(float(bundle.spot[p, n]))]
                row.append(repr(float(bundle.period_log_returns[p, n - 1])) if n else "")
                feat = n < grid.n_periods
                row.append(
                    repr(float(bundle.aux_state[p, n]))
                    if feat and bundle.aux_state is not None
                    else ""
                )
                row.append(
                    repr(float(bundle.iv_state[p, n]))
                    if feat and bundle.iv_state is not None
                    else ""
                )
                writer.writerow(row)
