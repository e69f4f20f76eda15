"""Finite-difference verification of the tape gradients.

Random small hedging problems (few periods, few paths, one small cell) are
built through the real simulation and training pipeline; every partial
derivative produced by the reverse sweep is compared against central finite
differences.  Instances whose minibatch sits too close to a VaR tie or a
tail-activation kink are redrawn, since finite differences are meaningless
across a kink.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .engine import (
    build_cvar_program,
    build_vo_program,
    empirical_var_cvar,
    evaluate_terminal_values,
    hedging_errors,
    prepare_problem,
)
from .instruments import ATM_OPTIONS, STOCK_ONLY, InstrumentSpec, TargetOption
from .lstm import glorot_init
from .market import BsmParams, IvParams, MarketGrid
from .simulate import simulate_bsm

RTOL = 1e-5
FD_STEP = 1e-6
KINK_MARGIN = 1e-3


@dataclass
class GradCheckResult:
    instance: int
    kind: str  # short / long / vo
    instrument: str
    n_params: int
    max_rel_err: float
    passed: bool


def _random_instance(rng, kind):
    n_per = int(rng.integers(1, 5))
    batch = int(rng.integers(2, 9))
    width = int(rng.integers(1, 5))
    grid = MarketGrid(n_per / 252.0, n_per, 1, float(rng.uniform(0.0, 0.05)))
    params = BsmParams(mu=float(rng.uniform(-0.1, 0.2)), sigma=float(rng.uniform(0.1, 0.4)))
    iv = (
        IvParams(kappa=0.15, theta=math.log(0.2), sigma_iv=0.1, rho=-0.6)
        if kind == ATM_OPTIONS
        else None
    )
    bundle = simulate_bsm(
        params, grid, batch, seed=int(rng.integers(0, 2**31)), iv_params=iv
    )
    spec = InstrumentSpec(kind)
    target = TargetOption(float(rng.uniform(90, 110)), grid.t_years)
    problem = prepare_problem(bundle, spec, grid, target)
    net = glorot_init((problem.d0, width, problem.n_traded), int(rng.integers(0, 2**31)))
    # Random nonzero biases exercise every gate path.
    for cell in net.cells:
        for g in cell.b.values():
            g[:] = rng.uniform(-0.3, 0.3, size=g.shape)
    net.b_y[:] = rng.uniform(-0.5, 0.5, size=net.b_y.shape)
    return problem, net, grid, kind


def _kink_distance(problem, net, side, alpha) -> float:
    """Smallest gap between any batch error and the VaR order statistic."""
    v_n = evaluate_terminal_values(problem, net)
    pi = hedging_errors(problem, v_n, side)
    var, _ = empirical_var_cvar(pi, alpha)
    gaps = np.abs(pi - var)
    gaps = gaps[gaps > 0]
    return float(gaps.min()) if gaps.size else 0.0


def _loss_fn(problem, net, kind, alpha):
    if kind == "vo":
        def f(vec):
            net.set_from_vector(vec[:-1])
            v_n = evaluate_terminal_values(problem, net, v0=float(vec[-1]))
            return float(np.mean((problem.payoff - v_n) ** 2))
    else:
        def f(vec):
            net.set_from_vector(vec)
            v_n = evaluate_terminal_values(problem, net)
            return empirical_var_cvar(hedging_errors(problem, v_n, kind), alpha)[1]
    return f


def check_instance(idx: int, seed: int) -> GradCheckResult:
    """Compare every tape partial of one random instance against central FD.

    Loss kind and instrument menu cycle deterministically with the instance
    index so all six combinations are covered every six instances.
    """
    rng = np.random.default_rng((seed, idx))
    kind = ["short", "long", "vo"][idx % 3]
    instrument = [STOCK_ONLY, ATM_OPTIONS][(idx // 3) % 2]
    while True:
        problem, net, grid, instrument = _random_instance(rng, instrument)
        alpha = float(rng.uniform(0.3, 0.9))
        if kind == "vo" or _kink_distance(problem, net, kind, alpha) > KINK_MARGIN:
            break

    v0 = float(rng.uniform(-2.0, 2.0))
    if kind == "vo":
        program = build_vo_program(problem, net, v0)
    else:
        program = build_cvar_program(problem, net, kind, alpha)
    loss, tape = ad.record_forward(program)
    grads = ad.backward(tape, program.leaves)
    grad_flat = np.concatenate([np.atleast_1d(g).ravel() for g in grads])

    theta0 = net.to_vector()
    vec0 = np.concatenate([theta0, [v0]]) if kind == "vo" else theta0
    f = _loss_fn(problem, net, kind, alpha)
    # Central differences carry a roundoff floor of roughly eps*|loss|/h;
    # partials below floor/RTOL cannot be certified relatively and fall back
    # to an absolute gate at the floor.
    atol = 1e-8 * (1.0 + abs(float(loss)))
    max_rel = 0.0
    passed = True
    for i in range(vec0.size):
        h = FD_STEP * max(1.0, abs(vec0[i]))
        up = vec0.copy()
        up[i] += h
        dn = vec0.copy()
        dn[i] -= h
        fd = (f(up) - f(dn)) / (2.0 * h)
        diff = abs(grad_flat[i] - fd)
        denom = max(abs(grad_flat[i]), abs(fd))
        if denom > atol / RTOL:
            rel = diff / denom
            max_rel = max(max_rel, rel)
            passed = passed and rel < RTOL
        else:
            passed = passed and diff < atol
    net.set_from_vector(theta0)
    return GradCheckResult(
        instance=idx,
        kind=kind,
        instrument=instrument,
        n_params=vec0.size,
        max_rel_err=max_rel,
        passed=passed,
    )


def run_gradcheck(n_instances: int = 50, seed: int = 2024) -> list[GradCheckResult]:
    return [check_instance(i, seed) for i in range(n_instances)]
