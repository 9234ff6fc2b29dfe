"""Classical Black-Scholes prices used as independent oracles.

The standard normal CDF is ``0.5 * erfc(-x / sqrt(2))`` using the C library
``erfc``; glibc documents it as correctly rounded to within 1 ulp, i.e. an
absolute CDF error well below 1e-16, and using ``erfc`` rather than
``1 + erf`` avoids cancellation in the lower tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .payoff import Payoff, PiecewiseLinear

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def norm_pdf(x: float) -> float:
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x)


@dataclass(frozen=True, slots=True)
class BsQuote:
    price: float
    delta: float
    gamma: float
    spot: float
    strike: float
    rate: float
    sigma: float
    tau: float


def _check(spot, strike, rate, sigma, tau):
    if spot <= 0 or strike <= 0 or sigma <= 0 or tau < 0 or rate < 0:
        raise ValueError("bs inputs: spot, strike, sigma > 0; tau, rate >= 0")


def bs_call(spot: float, strike: float, rate: float, sigma: float, tau: float) -> BsQuote:
    _check(spot, strike, rate, sigma, tau)
    if tau == 0.0:
        delta = 1.0 if spot > strike else (0.5 if spot == strike else 0.0)
        return BsQuote(max(spot - strike, 0.0), delta, 0.0, spot, strike, rate, sigma, tau)
    vol = sigma * math.sqrt(tau)
    d1 = (math.log(spot / strike) + (rate + 0.5 * sigma * sigma) * tau) / vol
    d2 = d1 - vol
    df = math.exp(-rate * tau)
    price = spot * norm_cdf(d1) - strike * df * norm_cdf(d2)
    return BsQuote(price, norm_cdf(d1), norm_pdf(d1) / (spot * vol), spot, strike, rate, sigma, tau)


def bs_put(spot: float, strike: float, rate: float, sigma: float, tau: float) -> BsQuote:
    """Put via put-call parity."""
    c = bs_call(spot, strike, rate, sigma, tau)
    fwd = strike * math.exp(-rate * tau)
    if tau == 0.0:
        delta = -1.0 if spot < strike else (-0.5 if spot == strike else 0.0)
        return BsQuote(max(strike - spot, 0.0), delta, 0.0, spot, strike, rate, sigma, tau)
    return BsQuote(c.price - spot + fwd, c.delta - 1.0, c.gamma, spot, strike, rate, sigma, tau)


def forward_value(spot: float, strike: float, rate: float, tau: float) -> float:
    return spot - strike * math.exp(-rate * tau)


def bs_piecewise_linear(spot: float, payoff: Payoff | PiecewiseLinear, rate: float, sigma: float, tau: float) -> float:
    """Black-Scholes value of any piecewise-linear payoff.

    Decomposes ``Phi(x) = Phi(x1) + s_L (x - x1) + sum_i (s_i - s_{i-1}) (x - x_i)^+``
    and prices each leg in closed form.
    """
    pl = payoff.canonical if isinstance(payoff, Payoff) else payoff
    df = math.exp(-rate * tau)
    x1, v1 = pl.knots[0]
    value = v1 * df + pl.left_slope * (spot - x1 * df)
    slopes = pl.slopes
    for (xk, _), s_prev, s_next in zip(pl.knots, slopes, slopes[1:]):
        kink = s_next - s_prev
        if kink == 0.0:
            continue
        leg = spot if xk == 0.0 else bs_call(spot, xk, rate, sigma, tau).price
        value += kink * leg
    return value
