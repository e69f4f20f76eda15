"""Monte Carlo deep-hedging engine for equal risk pricing of European puts."""

from .engine import (
    Adam,
    PricingResult,
    RiskSpec,
    TrainConfig,
    empirical_var_cvar,
    equal_risk_price,
    epsilon_star,
    measured_exposures,
    train_policy,
    train_variance_optimal,
)
from .instruments import (
    InstrumentSpec,
    TargetOption,
    bs_call,
    bs_put,
    build_period_instruments,
    normal_cdf,
    payoff_put,
)
from .lstm import LstmParams, glorot_init, lstm_step, policy_positions
from .market import (
    BsmParams,
    GarchParams,
    IvParams,
    MarketGrid,
    MjdParams,
    PathBundle,
)
from .portfolio import (
    PortfolioTrace,
    discounted_gains,
    hedging_error_long,
    hedging_error_short,
    portfolio_values,
    step_portfolio,
)
from .simulate import (
    aggregate_daily_to_period,
    simulate_bsm,
    simulate_garch,
    simulate_iv,
    simulate_mjd,
)

__version__ = "0.1.0"
