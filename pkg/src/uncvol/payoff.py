"""Terminal payoffs: builtins plus user piecewise-linear claims.

Every payoff has a canonical piecewise-linear form (knots, left slope, right
slope). Convexity classification and the PDE terminal condition read that
form; builtins keep their textbook formula for :func:`evaluate`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

_SLOPE_RTOL = 1e-12


class ConvexityClass(enum.Enum):
    CONVEX = "convex"
    CONCAVE = "concave"
    LINEAR = "linear"
    MIXED = "mixed"


@dataclass(frozen=True)
class PiecewiseLinear:
    knots: tuple[tuple[float, float], ...]
    left_slope: float
    right_slope: float

    def __post_init__(self) -> None:
        knots = tuple((float(x), float(v)) for x, v in self.knots)
        if not knots:
            raise ValueError("piecewise-linear payoff needs at least one knot")
        xs = [x for x, _ in knots]
        if any(x < 0 for x in xs):
            raise ValueError("knot abscissae must be >= 0")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("knot abscissae must be strictly increasing")
        values = [v for _, v in knots] + [self.left_slope, self.right_slope]
        if not all(math.isfinite(v) for v in xs + values):
            raise ValueError("knots and slopes must be finite")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "left_slope", float(self.left_slope))
        object.__setattr__(self, "right_slope", float(self.right_slope))

    @property
    def slopes(self) -> tuple[float, ...]:
        """Slope on every linear piece, left to right."""
        inner = tuple(
            (v1 - v0) / (x1 - x0) for (x0, v0), (x1, v1) in zip(self.knots, self.knots[1:])
        )
        return (self.left_slope, *inner, self.right_slope)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        xs = np.array([k[0] for k in self.knots])
        vs = np.array([k[1] for k in self.knots])
        slopes = np.array(self.slopes)
        # piece index: 0 = left extrapolation, len(knots) = right extrapolation
        idx = np.searchsorted(xs, x, side="right")
        anchor = np.clip(idx - 1, 0, len(xs) - 1)
        out = vs[anchor] + slopes[idx] * (x - xs[anchor])
        return out if out.ndim else float(out)

    def negated(self) -> "PiecewiseLinear":
        return PiecewiseLinear(
            tuple((x, -v) for x, v in self.knots), -self.left_slope, -self.right_slope
        )


@dataclass(frozen=True)
class Payoff:
    """A European claim ``Phi(S_T)``.

    ``kind`` is one of ``call``, ``put``, ``forward``, ``bull_spread`` or
    ``piecewise_linear``.
    """

    kind: str
    params: dict[str, Any] = field(default_factory=dict)
    canonical: PiecewiseLinear = field(init=False, repr=False, compare=False)
    # set only on internally negated claims used by the lower-price solve
    allow_negative: bool = field(default=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "canonical", _canonicalize(self.kind, self.params))
        if self.kind in ("call", "put", "bull_spread", "piecewise_linear") and not self.allow_negative:
            if not _nonnegative(self.canonical):
                raise ValueError(f"claim {self.kind} must be nonnegative on [0, inf)")

    # -- constructors -----------------------------------------------------
    @classmethod
    def call(cls, strike: float) -> "Payoff":
        return cls("call", {"strike": strike})

    @classmethod
    def put(cls, strike: float) -> "Payoff":
        return cls("put", {"strike": strike})

    @classmethod
    def forward(cls, strike: float) -> "Payoff":
        return cls("forward", {"strike": strike})

    @classmethod
    def bull_spread(cls, k_low: float, k_high: float) -> "Payoff":
        return cls("bull_spread", {"k_low": k_low, "k_high": k_high})

    @classmethod
    def piecewise_linear(cls, knots, left_slope: float, right_slope: float) -> "Payoff":
        knots = tuple((float(x), float(v)) for x, v in knots)
        return cls("piecewise_linear", {"knots": knots, "left_slope": left_slope, "right_slope": right_slope})

    @classmethod
    def from_spec(cls, spec: dict[str, Any]) -> "Payoff":
        """Build from the config grammar, e.g. ``{"kind": "call", "strike": 100}``."""
        spec = dict(spec)
        kind = spec.pop("kind", None)
        allowed = {
            "call": {"strike"},
            "put": {"strike"},
            "forward": {"strike"},
            "bull_spread": {"k_low", "k_high"},
            "piecewise_linear": {"knots", "left_slope", "right_slope"},
        }
        if kind not in allowed:
            raise ValueError(f"unknown payoff kind {kind!r}")
        if set(spec) != allowed[kind]:
            raise ValueError(f"payoff {kind} expects keys {sorted(allowed[kind])}, got {sorted(spec)}")
        if kind == "piecewise_linear":
            return cls.piecewise_linear(spec["knots"], spec["left_slope"], spec["right_slope"])
        return cls(kind, spec)

    def to_spec(self) -> dict[str, Any]:
        if self.kind == "piecewise_linear":
            return {
                "kind": self.kind,
                "knots": [list(k) for k in self.params["knots"]],
                "left_slope": self.params["left_slope"],
                "right_slope": self.params["right_slope"],
            }
        return {"kind": self.kind, **self.params}

    # -- derived ----------------------------------------------------------
    @property
    def lipschitz_bound(self) -> float:
        return max(abs(s) for s in self.canonical.slopes)

    def negated(self) -> "Payoff":
        c = self.canonical.negated()
        return Payoff(
            "piecewise_linear",
            {"knots": c.knots, "left_slope": c.left_slope, "right_slope": c.right_slope},
            allow_negative=True,
        )

    def __call__(self, x):
        return evaluate(self, x)


def _canonicalize(kind: str, p: dict[str, Any]) -> PiecewiseLinear:
    if kind in ("call", "put", "forward"):
        k = float(p["strike"])
        if not math.isfinite(k) or k < 0 or (kind != "forward" and k == 0):
            raise ValueError(f"invalid strike {p['strike']!r}")
        slopes = {"call": (0.0, 1.0), "put": (-1.0, 0.0), "forward": (1.0, 1.0)}[kind]
        return PiecewiseLinear(((k, 0.0),), *slopes)
    if kind == "bull_spread":
        lo, hi = float(p["k_low"]), float(p["k_high"])
        if not (0 < lo < hi):
            raise ValueError("bull spread requires 0 < k_low < k_high")
        return PiecewiseLinear(((lo, 0.0), (hi, hi - lo)), 0.0, 0.0)
    if kind == "piecewise_linear":
        return PiecewiseLinear(tuple(p["knots"]), p["left_slope"], p["right_slope"])
    raise ValueError(f"unknown payoff kind {kind!r}")


def _nonnegative(c: PiecewiseLinear) -> bool:
    # minimum of a piecewise-linear function on [0, inf) is at 0, a knot, or -inf
    return c.right_slope >= 0 and min(c(0.0), *(v for _, v in c.knots)) >= 0


def evaluate(p: Payoff, x):
    """Payoff value at ``x >= 0`` (scalar or array)."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("payoff argument must be >= 0")
    q = p.params
    if p.kind == "call":
        out = np.maximum(arr - q["strike"], 0.0)
    elif p.kind == "put":
        out = np.maximum(q["strike"] - arr, 0.0)
    elif p.kind == "forward":
        out = arr - q["strike"]
    elif p.kind == "bull_spread":
        out = np.minimum(np.maximum(arr - q["k_low"], 0.0), q["k_high"] - q["k_low"])
    else:
        return p.canonical(arr if arr.ndim else float(arr))
    return out if out.ndim else float(out)


def classify_convexity(p: Payoff) -> ConvexityClass:
    slopes = p.canonical.slopes
    scale = max(1.0, max(abs(s) for s in slopes))
    tol = _SLOPE_RTOL * scale
    steps = [b - a for a, b in zip(slopes, slopes[1:])]
    up = all(d >= -tol for d in steps)
    down = all(d <= tol for d in steps)
    if up and down:
        return ConvexityClass.LINEAR
    if up:
        return ConvexityClass.CONVEX
    if down:
        return ConvexityClass.CONCAVE
    return ConvexityClass.MIXED
