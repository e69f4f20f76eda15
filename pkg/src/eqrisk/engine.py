"""Risk measures, policy training and equal risk pricing.

Training follows plain minibatch descent: simulate the hedge forward under
the current parameters, estimate the CVaR of the terminal hedging errors on
the minibatch, differentiate exactly through the whole recursion with the
tape, and take an Adam step.  The long and short policies are trained
independently; the variance-optimal benchmark trains a single network
jointly with its initial capital.
"""

from __future__ import annotations

import gc
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DomainError, ParameterError, TrainingDiverged
from .instruments import InstrumentSpec, TargetOption, build_period_instruments, bs_put
from .lstm import LstmParams, cell_forward, glorot_init, stacked_arrays, zero_state
from .market import MarketGrid, PathBundle
from .simulate import derive_seed

# Stream roles for seeds derived from one experiment seed.
_ROLE_INIT_SHORT = 21
_ROLE_INIT_LONG = 22
_ROLE_INIT_VO = 23
_ROLE_SHUFFLE = 31
_ROLE_SPLIT = 32

VALIDATION_FRACTION = 0.10


@contextmanager
def _gc_paused():
    """Tapes free by reference counting; pausing the collector avoids
    quadratic-ish generation scans over the many short-lived nodes."""
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()


@dataclass(frozen=True)
class RiskSpec:
    """Convex risk measure used for both hedging problems."""

    alpha: float
    measure: str = "cvar"

    def __post_init__(self):
        if self.measure != "cvar":
            raise ParameterError(f"unsupported risk measure {self.measure!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization budget and Adam settings."""

    n_train_paths: int
    n_epochs: int
    batch_size: int
    learning_rate: float
    seed: int
    n_test_paths: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_decay: float = 1.0  # per-epoch multiplicative decay

    def __post_init__(self):
        if min(self.n_train_paths, self.n_epochs, self.batch_size) < 1:
            raise ParameterError("paths, epochs and batch size must be >= 1")
        if self.learning_rate <= 0 or not 0.0 < self.lr_decay <= 1.0:
            raise ParameterError("learning rate and decay must be positive")


def empirical_var_cvar(batch, alpha: float) -> tuple[float, float]:
    """Order-statistic VaR and tail-average CVaR of a batch of errors.

    VaR is the ceil(alpha*n)-th ascending order statistic; CVaR adds the
    mean excess over VaR scaled by 1/((1-alpha) n).
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.size == 0:
        raise DomainError("empty batch")
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    n = batch.size
    n_tilde = math.ceil(alpha * n)
    var = np.sort(batch, kind="stable")[n_tilde - 1]
    cvar = var + np.maximum(batch - var, 0.0).sum() / ((1.0 - alpha) * n)
    return float(var), float(cvar)


class Adam:
    """Bias-corrected adaptive moment optimizer over a list of arrays.

    The update is theta -= lr * m_hat / (sqrt(v_hat) + eps*sqrt(1-beta2^t)),
    so one step from a cold start moves by lr * g / (|g| + eps*sqrt(1-beta2)).
    """

    def __init__(self, params: list, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        eps_t = self.eps * math.sqrt(c2)
        for p, m, v, g in zip(self.params, self.m, self.v, grads):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + eps_t)


def adam_step(params, grads, state: Adam | None, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Functional wrapper around :class:`Adam` for single-step use."""
    if state is None:
        state = Adam(params, lr, beta1, beta2, eps)
    state.lr = lr
    state.step(grads)
    return state


@dataclass
class HedgeProblem:
    """Precomputed constants of one hedging problem over a path bundle."""

    features: np.ndarray  # (n_paths, N, d0); column 1 is the V placeholder
    increments: np.ndarray  # (n_paths, N, n_traded): S_end - growth * S_begin
    payoff: np.ndarray  # (n_paths,)
    growth: float
    d0: int
    n_traded: int

    @property
    def n_paths(self) -> int:
        return self.features.shape[0]

    @property
    def n_periods(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "HedgeProblem":
        return HedgeProblem(
            features=self.features[idx],
            increments=self.increments[idx],
            payoff=self.payoff[idx],
            growth=self.growth,
            d0=self.d0,
            n_traded=self.n_traded,
        )


def prepare_problem(
    bundle: PathBundle,
    spec: InstrumentSpec,
    grid: MarketGrid,
    target: TargetOption,
) -> HedgeProblem:
    """Assemble features, traded price increments and payoffs once per bundle.

    Feature layout: [log(S/K), V, vol state if present, IV if options are
    traded].  Prices and IVs are constants with respect to the policy, so
    only the V column is filled in during the forward recursion.
    """
    begin, end = build_period_instruments(bundle, spec, grid)
    if spec.uses_options:
        traded_begin, traded_end = begin[:, :, 1:], end[:, :, 1:]
    else:
        traded_begin, traded_end = begin[:, :, :1], end[:, :, :1]
    growth = grid.growth
    incr = traded_end - growth * traded_begin

    cols = [np.log(bundle.spot[:, :-1] / target.strike)]
    cols.append(np.zeros_like(cols[0]))  # V placeholder
    if bundle.aux_state is not None:
        cols.append(bundle.aux_state)
    if spec.uses_options:
        if bundle.iv_state is None:
            raise ConfigError("option hedging requires an implied-volatility state")
        cols.append(bundle.iv_state)
    features = np.stack(cols, axis=-1)
    payoff = np.maximum(target.strike - bundle.spot[:, -1], 0.0)
    return HedgeProblem(
        features=np.ascontiguousarray(features),
        increments=np.ascontiguousarray(incr),
        payoff=payoff,
        growth=growth,
        d0=features.shape[-1],
        n_traded=incr.shape[-1],
    )


def _taped_terminal_value(tape, problem: HedgeProblem, params: LstmParams, v0=None):
    """Record the portfolio recursion on the tape; returns the V_N variable.

    Gradients flow through positions and the portfolio-value feature, not
    through the simulated prices (constants by construction).
    """
    n_paths, n_per = problem.n_paths, problem.n_periods
    leaves = [tape.leaf(a) for a in params.flat_list()]
    by_cell, it = [], iter(leaves[:-2])
    for _ in params.cells:
        u = [next(it) for _ in range(4)]
        w = [next(it) for _ in range(4)]
        b = [next(it) for _ in range(4)]
        by_cell.append(
            (ad.stack_gate_matrices(u), ad.stack_gate_matrices(w), ad.concat_vectors(b))
        )
    w_y_t = ad.transpose(leaves[-2])
    b_y = leaves[-1]

    widths = params.dims[1:-1]
    h = [tape.leaf(np.zeros((n_paths, d))) for d in widths]
    c = [tape.leaf(np.zeros((n_paths, d))) for d in widths]
    if v0 is None:
        value = tape.leaf(np.zeros(n_paths))
        v0_leaf = None
    else:
        v0_leaf = tape.leaf(np.float64(v0))
        value = ad.broadcast_scalar(v0_leaf, n_paths)

    growth = problem.growth
    for n in range(n_per):
        x = ad.insert_col(problem.features[:, n, :], value, 1)
        inp = x
        for j, (u_s, w_s, b_s) in enumerate(by_cell):
            d = widths[j]
            z = ad.affine([(inp, u_s), (h[j], w_s)], b_s)
            s = ad.sigmoid(ad.col_slice(z, 0, 3 * d))
            g = ad.tanh(ad.col_slice(z, 3 * d, 4 * d))
            i_g = ad.col_slice(s, 0, d)
            f_g = ad.col_slice(s, d, 2 * d)
            o_g = ad.col_slice(s, 2 * d, 3 * d)
            c[j] = ad.add(ad.mul(f_g, c[j]), ad.mul(i_g, g))
            h[j] = ad.mul(o_g, ad.tanh(c[j]))
            inp = h[j]
        y = ad.affine([(inp, w_y_t)], b_y)
        gain = None
        for k in range(problem.n_traded):
            term = ad.mul(ad.col(y, k), problem.increments[:, n, k])
            gain = term if gain is None else ad.add(gain, term)
        value = ad.add(ad.mul(value, growth), gain)
    return value, leaves, v0_leaf


def cvar_loss(pi, alpha: float):
    """Taped CVaR of a batch of errors; mirrors :func:`empirical_var_cvar`.

    The VaR order statistic is located on primal values (stable sort) and
    held fixed in the reverse sweep.
    """
    values = pi.value
    n = values.shape[0]
    n_tilde = math.ceil(alpha * n)
    order = np.argsort(values, kind="stable")
    var_idx = int(order[n_tilde - 1])
    var = ad.take(pi, var_idx)
    excess = ad.relu(ad.sub(pi, var))
    return ad.add(var, ad.div(ad.sum_all(excess), (1.0 - alpha) * n))


def build_cvar_program(problem: HedgeProblem, params: LstmParams, side: str, alpha: float):
    """Program for record_forward: CVaR_alpha of the side's hedging errors.

    The returned function exposes the parameter leaf Vars of the most recent
    recording through its ``leaves`` attribute (a list mutated in place, so
    no reference cycle pins the tape).
    """
    sign = {"short": 1.0, "long": -1.0}[side]
    leaves_out: list = []

    def program(tape):
        v_n, leaves, _ = _taped_terminal_value(tape, problem, params)
        pi = ad.sub(sign * problem.payoff, v_n)
        loss = cvar_loss(pi, alpha)
        leaves_out[:] = leaves
        return loss

    program.leaves = leaves_out
    return program


def build_vo_program(problem: HedgeProblem, params: LstmParams, v0: float):
    """Program for record_forward: mean squared terminal hedging error."""
    leaves_out: list = []

    def program(tape):
        v_n, leaves, v0_leaf = _taped_terminal_value(tape, problem, params, v0=v0)
        err = ad.sub(problem.payoff, v_n)
        loss = ad.mul(ad.sum_all(ad.mul(err, err)), 1.0 / problem.n_paths)
        leaves_out[:] = leaves + [v0_leaf]
        return loss

    program.leaves = leaves_out
    return program


def evaluate_terminal_values(problem: HedgeProblem, params: LstmParams, v0: float = 0.0):
    """Fast untaped forward pass; numerically identical to the taped one."""
    stacks, w_y_t, b_y = stacked_arrays(params)
    n_paths, n_per = problem.n_paths, problem.n_periods
    h, c = zero_state(params, n_paths)
    value = np.full(n_paths, float(v0)) if v0 else np.zeros(n_paths)
    growth = problem.growth
    widths = params.dims[1:-1]
    for n in range(n_per):
        x = problem.features[:, n, :].copy()
        x[:, 1] = value
        inp = x
        for j, (u, w, b) in enumerate(stacks):
            z = inp @ u + h[j] @ w + b
            h[j], c[j] = cell_forward(z, c[j], widths[j])
            inp = h[j]
        y = inp @ w_y_t + b_y
        gain = y[:, 0] * problem.increments[:, n, 0]
        for k in range(1, problem.n_traded):
            gain = gain + y[:, k] * problem.increments[:, n, k]
        value = value * growth + gain
    return value


def evaluate_policy_trace(problem: HedgeProblem, params: LstmParams, v0: float = 0.0):
    """Untaped forward pass that also returns outputs and the value path.

    Returns ``(outputs, values)`` with outputs shaped (n_paths, N, n_traded)
    and values shaped (n_paths, N+1); ``values[:, -1]`` equals
    :func:`evaluate_terminal_values` bitwise.
    """
    stacks, w_y_t, b_y = stacked_arrays(params)
    n_paths, n_per = problem.n_paths, problem.n_periods
    h, c = zero_state(params, n_paths)
    outputs = np.empty((n_paths, n_per, problem.n_traded))
    values = np.empty((n_paths, n_per + 1))
    value = np.full(n_paths, float(v0)) if v0 else np.zeros(n_paths)
    values[:, 0] = value
    growth = problem.growth
    widths = params.dims[1:-1]
    for n in range(n_per):
        x = problem.features[:, n, :].copy()
        x[:, 1] = value
        inp = x
        for j, (u, w, b) in enumerate(stacks):
            z = inp @ u + h[j] @ w + b
            h[j], c[j] = cell_forward(z, c[j], widths[j])
            inp = h[j]
        y = inp @ w_y_t + b_y
        outputs[:, n, :] = y
        gain = y[:, 0] * problem.increments[:, n, 0]
        for k in range(1, problem.n_traded):
            gain = gain + y[:, k] * problem.increments[:, n, k]
        value = value * growth + gain
        values[:, n + 1] = value
    return outputs, values


def hedging_errors(problem: HedgeProblem, v_n: np.ndarray, side: str) -> np.ndarray:
    sign = {"short": 1.0, "long": -1.0}[side]
    return sign * problem.payoff - v_n


@dataclass
class EpochLog:
    epoch: int
    train_cvar: float
    val_cvar: float
    grad_norm: float
    wall_seconds: float


@dataclass
class TrainingLog:
    side: str
    epochs: list = field(default_factory=list)

    def rows(self):
        return [
            (e.epoch, e.train_cvar, e.val_cvar, e.grad_norm, e.wall_seconds)
            for e in self.epochs
        ]


def _split_validation(n_paths: int, seed: int):
    rng = np.random.default_rng((seed, _ROLE_SPLIT))
    perm = rng.permutation(n_paths)
    n_val = int(round(VALIDATION_FRACTION * n_paths))
    n_val = min(max(n_val, 0), n_paths - 1)
    return perm[n_val:], perm[:n_val]


def _check_finite(loss, epoch, batch, params: LstmParams):
    if not np.isfinite(loss):
        norm = float(np.linalg.norm(params.to_vector()))
        raise TrainingDiverged(
            f"non-finite loss at epoch {epoch} batch {batch} (param norm {norm:.3e})",
            epoch=epoch,
            batch=batch,
            param_norm=norm,
        )


def train_policy(
    side: str,
    bundle: PathBundle,
    spec: InstrumentSpec,
    grid: MarketGrid,
    target: TargetOption,
    risk: RiskSpec,
    cfg: TrainConfig,
    hidden: tuple = (24, 24),
) -> tuple[LstmParams, TrainingLog]:
    """Train one side's policy network by minibatch CVaR descent.

    10% of the bundle is held out to log validation risk; the remaining
    paths are reshuffled every epoch with a derived seed and any partial
    final batch is dropped so the estimator's tail size stays constant.
    """
    if side not in ("short", "long"):
        raise ParameterError("side must be 'short' or 'long'")
    if bundle.n_paths < cfg.n_train_paths:
        raise ConfigError(
            f"bundle holds {bundle.n_paths} paths, config needs {cfg.n_train_paths}"
        )
    problem = prepare_problem(bundle, spec, grid, target)
    if bundle.n_paths > cfg.n_train_paths:
        problem = problem.subset(np.arange(cfg.n_train_paths))

    train_idx, val_idx = _split_validation(cfg.n_train_paths, cfg.seed)
    val_problem = problem.subset(val_idx) if val_idx.size else None

    dims = (problem.d0, *hidden, problem.n_traded)
    role = _ROLE_INIT_SHORT if side == "short" else _ROLE_INIT_LONG
    params = glorot_init(dims, derive_seed(cfg.seed, role))
    opt = Adam(params.flat_list(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)

    log = TrainingLog(side=side)
    n_batches = train_idx.size // cfg.batch_size
    if n_batches == 0:
        raise ConfigError("batch size exceeds the post-validation training set")
    with _gc_paused():
        for epoch in range(cfg.n_epochs):
            t0 = time.perf_counter()
            opt.lr = cfg.learning_rate * cfg.lr_decay**epoch
            rng = np.random.default_rng((cfg.seed, _ROLE_SHUFFLE, epoch))
            order = train_idx[rng.permutation(train_idx.size)]
            epoch_losses = []
            grad_norm = 0.0
            for b in range(n_batches):
                batch = problem.subset(order[b * cfg.batch_size : (b + 1) * cfg.batch_size])
                program = build_cvar_program(batch, params, side, risk.alpha)
                loss, tape = ad.record_forward(program)
                _check_finite(loss, epoch, b, params)
                grads = ad.backward(tape, program.leaves)
                tape = None
                program.leaves.clear()
                grad_norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
                opt.step(grads)
                epoch_losses.append(float(loss))
            if val_problem is not None:
                v_n = evaluate_terminal_values(val_problem, params)
                _, val_cvar = empirical_var_cvar(
                    hedging_errors(val_problem, v_n, side), risk.alpha
                )
            else:
                val_cvar = float("nan")
            log.epochs.append(
                EpochLog(
                    epoch=epoch,
                    train_cvar=float(np.mean(epoch_losses)),
                    val_cvar=val_cvar,
                    grad_norm=grad_norm,
                    wall_seconds=time.perf_counter() - t0,
                )
            )
    return params, log


def train_variance_optimal(
    bundle: PathBundle,
    spec: InstrumentSpec,
    grid: MarketGrid,
    target: TargetOption,
    cfg: TrainConfig,
    hidden: tuple = (24, 24),
    initial_capital: float | None = None,
) -> tuple[LstmParams, float, TrainingLog]:
    """Joint quadratic-hedging optimization of the policy and V_0.

    V_0 starts at the put's Black-Scholes value: under the time-0 implied
    volatility when options are traded, otherwise under the volatility passed
    by the caller (falling back to the annualized sample volatility of the
    bundle's returns).
    """
    problem = prepare_problem(bundle, spec, grid, target)
    if bundle.n_paths > cfg.n_train_paths:
        problem = problem.subset(np.arange(cfg.n_train_paths))

    if initial_capital is None:
        if spec.uses_options and bundle.iv_state is not None:
            vol0 = float(bundle.iv_state[0, 0])
        else:
            vol0 = float(
                bundle.period_log_returns.std()
                * math.sqrt(grid.n_periods / grid.t_years)
            )
        initial_capital = bs_put(
            float(bundle.spot[0, 0]), vol0, target.maturity_years, target.strike, grid.rate
        )

    train_idx, val_idx = _split_validation(cfg.n_train_paths, cfg.seed)
    val_problem = problem.subset(val_idx) if val_idx.size else None

    dims = (problem.d0, *hidden, problem.n_traded)
    params = glorot_init(dims, derive_seed(cfg.seed, _ROLE_INIT_VO))
    v0 = np.array(float(initial_capital))
    opt = Adam(
        params.flat_list() + [v0], cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps
    )

    log = TrainingLog(side="vo")
    n_batches = train_idx.size // cfg.batch_size
    if n_batches == 0:
        raise ConfigError("batch size exceeds the post-validation training set")
    with _gc_paused():
        for epoch in range(cfg.n_epochs):
            t0 = time.perf_counter()
            opt.lr = cfg.learning_rate * cfg.lr_decay**epoch
            rng = np.random.default_rng((cfg.seed, _ROLE_SHUFFLE, epoch))
            order = train_idx[rng.permutation(train_idx.size)]
            epoch_losses = []
            grad_norm = 0.0
            for b in range(n_batches):
                batch = problem.subset(order[b * cfg.batch_size : (b + 1) * cfg.batch_size])
                program = build_vo_program(batch, params, float(v0))
                loss, tape = ad.record_forward(program)
                _check_finite(loss, epoch, b, params)
                grads = ad.backward(tape, program.leaves)
                tape = None
                program.leaves.clear()
                grad_norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
                opt.step(grads)
                epoch_losses.append(float(loss))
            if val_problem is not None:
                v_n = evaluate_terminal_values(val_problem, params, v0=float(v0))
                val_loss = float(np.mean((val_problem.payoff - v_n) ** 2))
            else:
                val_loss = float("nan")
            log.epochs.append(
                EpochLog(
                    epoch=epoch,
                    train_cvar=float(np.mean(epoch_losses)),
                    val_cvar=val_loss,
                    grad_norm=grad_norm,
                    wall_seconds=time.perf_counter() - t0,
                )
            )
    return params, float(v0), log


def measured_exposures(
    theta_long: LstmParams,
    theta_short: LstmParams,
    bundle: PathBundle,
    spec: InstrumentSpec,
    grid: MarketGrid,
    target: TargetOption,
    risk: RiskSpec,
) -> tuple[float, float]:
    """Test-set CVaR of the long and short hedged positions with V_0 = 0."""
    problem = prepare_problem(bundle, spec, grid, target)
    v_long = evaluate_terminal_values(problem, theta_long)
    v_short = evaluate_terminal_values(problem, theta_short)
    _, eps_long = empirical_var_cvar(hedging_errors(problem, v_long, "long"), risk.alpha)
    _, eps_short = empirical_var_cvar(hedging_errors(problem, v_short, "short"), risk.alpha)
    return eps_long, eps_short


def equal_risk_price(eps_long: float, eps_short: float, grid: MarketGrid) -> float:
    """C0* = (eps_short - eps_long) / (2 B_N)."""
    return (eps_short - eps_long) / (2.0 * grid.discount_factor(grid.n_periods))


def epsilon_star(eps_long: float, eps_short: float, price: float | None = None):
    """Residual risk at the equal risk price and its per-dollar ratio.

    Returns (eps_star, ratio); the ratio is None when the price is absent or
    numerically zero.
    """
    star = 0.5 * (eps_long + eps_short)
    ratio = None if price is None or abs(price) < 1e-12 else star / price
    return star, ratio


@dataclass
class PricingResult:
    """Equal risk pricing output for one experiment cell."""

    eps_long: float
    eps_short: float
    price: float
    eps_star: float
    eps_ratio: float | None
    vo_price: float | None
    seed: int
    scenario: str
    hedge: str
    model: str
    strike: float
    alpha: float
    n_train: int
    n_epochs: int
    wall_seconds: float = 0.0

    def __post_init__(self):
        if abs(self.eps_star - 0.5 * (self.eps_long + self.eps_short)) > 1e-12 * (
            1.0 + abs(self.eps_star)
        ):
            raise ParameterError("eps_star violates its defining identity")


def make_pricing_result(
    eps_long, eps_short, grid, *, vo_price=None, seed=0, scenario="", hedge="",
    model="", strike=0.0, alpha=0.95, n_train=0, n_epochs=0, wall_seconds=0.0
) -> PricingResult:
    """Assemble a result, re-deriving and asserting the pricing identities."""
    price = equal_risk_price(eps_long, eps_short, grid)
    star, ratio = epsilon_star(eps_long, eps_short, price)
    b_n = grid.discount_factor(grid.n_periods)
    scale = 1.0 + abs(eps_short) + abs(eps_long)
    if abs(eps_short - (star + b_n * price)) > 1e-12 * scale or abs(
        eps_long - (star - b_n * price)
    ) > 1e-12 * scale:
        raise ParameterError("pricing identities violated at emission")
    return PricingResult(
        eps_long=eps_long,
        eps_short=eps_short,
        price=price,
        eps_star=star,
        eps_ratio=ratio,
        vo_price=vo_price,
        seed=seed,
        scenario=scenario,
        hedge=hedge,
        model=model,
        strike=strike,
        alpha=alpha,
        n_train=n_train,
        n_epochs=n_epochs,
        wall_seconds=wall_seconds,
    )
