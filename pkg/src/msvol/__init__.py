"""Second-order multiscale stochastic-volatility asymptotics.

Submodules
----------
blackscholes
    Closed-form prices, log-space derivatives and implied volatility.
asymptotics
    Price and implied-volatility expansions in terms of group parameters.
calibration
    Two-stage fit of the implied-volatility surface to an option chain.
model_oracle
    A concrete fast/slow model: Poisson solves, group parameters, Monte Carlo.
data_io
    Chain CSV files and golden-record checks.
cli
    The ``msvol`` command.
"""

from .asymptotics import (
    PUBLISHED_2006,
    PUBLISHED_2010,
    GroupParams,
    SurfaceCoeffs,
    UnreducedFirstOrder,
    iv_terms,
    price_terms,
    reduce_params,
    surface_eval,
    theta_from_phi,
)
from .blackscholes import BsInput, bs_price, implied_vol, log_greeks
from .calibration import OptionQuote, calibrate, fit_theta, prepare_quotes, recover_phi
from .model_oracle import ModelSpec, group_params_from_model, mc_price, order_scaling_experiment

__version__ = "0.1.0"

__all__ = [
    "BsInput", "bs_price", "implied_vol", "log_greeks",
    "GroupParams", "SurfaceCoeffs", "UnreducedFirstOrder", "PUBLISHED_2006", "PUBLISHED_2010",
    "price_terms", "iv_terms", "reduce_params", "theta_from_phi", "surface_eval",
    "OptionQuote", "prepare_quotes", "fit_theta", "recover_phi", "calibrate",
    "ModelSpec", "group_params_from_model", "mc_price", "order_scaling_experiment",
]
