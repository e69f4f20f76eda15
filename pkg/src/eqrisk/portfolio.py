"""Self-financing portfolio accounting.

Positions are indexed so that ``positions[:, n, :]`` is the risky holding
chosen at trading date t_n and carried over the period (t_n, t_{n+1}].  The
risk-free leg is implicit: given the self-financing constraint it is fully
determined by the portfolio value, so only values and discounted gains are
stored.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .instruments import TargetOption, payoff_put
from .market import MarketGrid


def step_portfolio(v_prev, positions, s_begin, s_end, grid: MarketGrid):
    """One period of the value recursion.

    V_n = e^{r dt} V_{n-1} + positions . (S_end - e^{r dt} S_begin), where
    the dot runs over the risky instruments (last axis).
    """
    positions = np.asarray(positions, dtype=np.float64)
    s_begin = np.asarray(s_begin, dtype=np.float64)
    s_end = np.asarray(s_end, dtype=np.float64)
    if positions.shape != s_begin.shape or s_begin.shape != s_end.shape:
        raise ShapeError("positions and price vectors must share a shape")
    growth = grid.growth
    gain = (positions * (s_end - growth * s_begin)).sum(axis=-1)
    return growth * np.asarray(v_prev, dtype=np.float64) + gain


def discounted_gains(positions, begin, end, grid: MarketGrid) -> np.ndarray:
    """Discounted gain process G_0 .. G_N.

    G_n = sum_{k<=n} positions_k . (B_k^{-1} S^e_{k-1} - B_{k-1}^{-1} S^b_{k-1})
    with arrays shaped (n_paths, N, n_instruments).  Returns (n_paths, N+1).
    """
    positions = np.asarray(positions, dtype=np.float64)
    begin = np.asarray(begin, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    if positions.shape != begin.shape or begin.shape != end.shape:
        raise ShapeError("positions and price arrays must share a shape")
    n_paths, n_per, _ = positions.shape
    curve = grid.discount_curve()
    gains = np.empty((n_paths, n_per + 1))
    gains[:, 0] = 0.0
    acc = np.zeros(n_paths)
    for n in range(n_per):
        inc = positions[:, n, :] * (end[:, n, :] / curve[n + 1] - begin[:, n, :] / curve[n])
        acc = acc + inc.sum(axis=-1)
        gains[:, n + 1] = acc
    return gains


def portfolio_values(v0, positions, begin, end, grid: MarketGrid) -> np.ndarray:
    """Full value path V_0 .. V_N from the recursion in ``step_portfolio``."""
    positions = np.asarray(positions, dtype=np.float64)
    n_paths, n_per, _ = positions.shape
    values = np.empty((n_paths, n_per + 1))
    values[:, 0] = v0
    for n in range(n_per):
        values[:, n + 1] = step_portfolio(
            values[:, n], positions[:, n, :], begin[:, n, :], end[:, n, :], grid
        )
    return values


def hedging_error_short(v_n, s_t, target: TargetOption):
    """Terminal loss of a short position hedged with value path ending at V_N."""
    return payoff_put(s_t, target.strike) - np.asarray(v_n, dtype=np.float64)


def hedging_error_long(v_n, s_t, target: TargetOption):
    """Terminal loss of a long position: -payoff - V_N."""
    return -payoff_put(s_t, target.strike) - np.asarray(v_n, dtype=np.float64)


@dataclass
class PortfolioTrace:
    """Positions, values, gains and terminal errors for a batch of paths."""

    positions: np.ndarray  # (n_paths, N, n_instruments)
    values: np.ndarray  # (n_paths, N+1)
    gains: np.ndarray  # (n_paths, N+1)
    hedging_error: np.ndarray  # (n_paths,)

    @classmethod
    def build(cls, v0, positions, begin, end, grid, s_t, target, side="short"):
        values = portfolio_values(v0, positions, begin, end, grid)
        gains = discounted_gains(positions, begin, end, grid)
        err_fn = hedging_error_short if side == "short" else hedging_error_long
        return cls(positions, values, gains, err_fn(values[:, -1], s_t, target))


def write_trace_csv(trace: PortfolioTrace, path, max_paths: int | None = None) -> None:
    """Debug dump: one row per path and trading date."""
    n_paths = trace.values.shape[0] if max_paths is None else min(max_paths, trace.values.shape[0])
    n_per = trace.positions.shape[1]
    width = trace.positions.shape[2]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["path_id", "n", "V_n", "G_n"] + [f"delta_{j}" for j in range(width)]
        )
        for p in range(n_paths):
            for n in range(n_per + 1):
                pos = trace.positions[p, n - 1] if n else np.zeros(width)
                writer.writerow(
                    [p, n, repr(float(trace.values[p, n])), repr(float(trace.gains[p, n]))]
                    + [repr(float(x)) for x in pos]
                )
