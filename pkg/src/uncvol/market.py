"""Market parameters, the G function of the volatility band, and discounting."""

from __future__ import annotations

import math
from dataclasses import dataclass

DEFAULT_TIE_TOL = 1e-12


@dataclass(frozen=True, slots=True)
class GFunction:
    """Support function of the variance interval, ``y -> sup_v v*y/2``."""

    half_var_low: float
    half_var_high: float
    sigma_low: float
    sigma_high: float

    @classmethod
    def from_band(cls, sigma_low: float, sigma_high: float) -> "GFunction":
        if not (0.0 < sigma_low <= sigma_high):
            raise ValueError("volatility band must satisfy 0 < sigma_low <= sigma_high")
        return cls(0.5 * sigma_low * sigma_low, 0.5 * sigma_high * sigma_high, sigma_low, sigma_high)

    def __call__(self, y: float) -> float:
        return g_eval(self, y)


def g_eval(g: GFunction, y: float) -> float:
    if not math.isfinite(y):
        raise ValueError("G is only defined on finite reals")
    if y >= 0.0:
        return g.half_var_high * y
    return g.half_var_low * y


def worst_case_vol(g: GFunction, gamma: float, tie_tol: float = DEFAULT_TIE_TOL) -> float:
    """Volatility attaining the sup in G for curvature ``gamma``.

    Ties (``|gamma| <= tie_tol``) resolve to the upper bound so the control is
    right-continuous in ``gamma``.
    """
    if tie_tol < 0:
        raise ValueError("tie_tol must be >= 0")
    if gamma < -tie_tol:
        return g.sigma_low
    return g.sigma_high


@dataclass(frozen=True, slots=True)
class MarketParams:
    rate: float
    sigma_low: float
    sigma_high: float
    spot: float
    horizon: float

    def __post_init__(self) -> None:
        for name in ("rate", "sigma_low", "sigma_high", "spot", "horizon"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValueError(f"{name} must be a finite real, got {value!r}")
            object.__setattr__(self, name, float(value))
        if self.rate < 0:
            raise ValueError("rate must be >= 0")
        if not (0.0 < self.sigma_low <= self.sigma_high):
            raise ValueError("volatility band must satisfy 0 < sigma_low <= sigma_high")
        if self.spot <= 0:
            raise ValueError("spot must be > 0")
        if self.horizon <= 0:
            raise ValueError("horizon must be > 0")

    @property
    def g(self) -> GFunction:
        return GFunction.from_band(self.sigma_low, self.sigma_high)

    @property
    def var_low(self) -> float:
        return self.sigma_low * self.sigma_low

    @property
    def var_high(self) -> float:
        return self.sigma_high * self.sigma_high

    @property
    def degenerate(self) -> bool:
        return self.sigma_low == self.sigma_high

    def with_band(self, sigma_low: float, sigma_high: float) -> "MarketParams":
        return MarketParams(self.rate, sigma_low, sigma_high, self.spot, self.horizon)


def discount(params: MarketParams, t: float) -> float:
    """Return ``exp(-r t)``, the reciprocal of the bank account at time ``t``."""
    if not (0.0 <= t <= params.horizon):
        raise ValueError(f"t={t} outside [0, {params.horizon}]")
    return math.exp(-params.rate * t)
