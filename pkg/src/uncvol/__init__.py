"""Pricing and hedging of European claims under uncertain volatility.

The price interval ``(h_low, h_up)`` comes from the Black-Scholes-Barenblatt
equation; a multiple-prior Monte Carlo estimator and a pathwise hedge
simulator cross-check it.
"""

from .bsb import (GridSpec, PolicyIterationError, PriceInterval, SolverConfig, Surface,
                  consumption_increment, extract_hedge, price_interval, solve_bsb)
from .closed_form import BsQuote, bs_call, bs_piecewise_linear, bs_put, forward_value
from .hedge import (ArbitrageTrace, HedgeReport, NoArbitrageError, calibrate_tolerance,
                    demo_arbitrage_outside_interval, simulate_hedge)
from .market import GFunction, MarketParams, discount, g_eval, worst_case_vol
from .montecarlo import (ConstantControl, DeterministicControl, FeedbackControl, McEstimate,
                         PathBatch, QvReport, estimate_claim, estimate_sup, qv_bounds_check,
                         random_step_controls, simulate_paths)
from .payoff import ConvexityClass, Payoff, PiecewiseLinear, classify_convexity, evaluate

__version__ = "0.1.0"

__all__ = [
    "ArbitrageTrace", "BsQuote", "ConstantControl", "ConvexityClass", "DeterministicControl",
    "FeedbackControl", "GFunction", "GridSpec", "HedgeReport", "MarketParams", "McEstimate",
    "NoArbitrageError", "PathBatch", "Payoff", "PiecewiseLinear", "PolicyIterationError",
    "PriceInterval", "QvReport", "SolverConfig", "Surface", "bs_call", "bs_piecewise_linear",
    "bs_put", "calibrate_tolerance", "classify_convexity", "consumption_increment",
    "demo_arbitrage_outside_interval", "discount", "estimate_claim", "estimate_sup", "evaluate",
    "extract_hedge", "forward_value", "g_eval", "price_interval", "qv_bounds_check",
    "random_step_controls", "simulate_hedge", "simulate_paths", "solve_bsb", "worst_case_vol",
]
