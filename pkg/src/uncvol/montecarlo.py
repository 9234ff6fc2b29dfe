"""Multiple-prior Monte Carlo for the G-expectation.

Each prior is the law of the stock under a volatility control with values in
the band. Paths use exact log-Euler steps and quadratic variation is
accumulated analytically as ``sum sigma_k^2 dt``.

Random numbers come from Philox (counter-based) keyed by ``(seed, block)``
with fixed blocks of :data:`BLOCK` paths, so path ``i`` is identical whatever
the batch size.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .bsb import Surface
from .market import MarketParams
from .payoff import Payoff, evaluate

BLOCK = 256
_CHUNK_BLOCKS = 32
_MASK64 = (1 << 64) - 1


# -- controls ---------------------------------------------------------------

@dataclass(frozen=True)
class ConstantControl:
    sigma: float

    def describe(self) -> str:
        return f"constant(sigma={self.sigma:g})"

    def validate(self, params: MarketParams) -> None:
        _in_band(params, [self.sigma])

    def schedule(self, params: MarketParams, n_steps: int) -> np.ndarray:
        return np.full(n_steps, float(self.sigma))


@dataclass(frozen=True)
class DeterministicControl:
    """Step function: ``sigmas[i]`` on ``[breaks[i-1], breaks[i])``."""

    breaks: tuple[float, ...]
    sigmas: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "breaks", tuple(float(b) for b in self.breaks))
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        if len(self.sigmas) != len(self.breaks) + 1:
            raise ValueError("need len(sigmas) == len(breaks) + 1")
        if any(b <= a for a, b in zip(self.breaks, self.breaks[1:])):
            raise ValueError("breaks must be strictly increasing")

    def describe(self) -> str:
        pieces = ",".join(f"{s:.4g}" for s in self.sigmas)
        return f"deterministic(breaks={list(self.breaks)}, sigmas=[{pieces}])"

    def validate(self, params: MarketParams) -> None:
        _in_band(params, self.sigmas)

    def schedule(self, params: MarketParams, n_steps: int) -> np.ndarray:
        t = np.arange(n_steps) * (params.horizon / n_steps)
        idx = np.searchsorted(np.asarray(self.breaks), t, side="right")
        return np.asarray(self.sigmas)[idx]


@dataclass(frozen=True)
class FeedbackControl:
    """Reads ``sigma*(t, S)`` from a solved surface by nearest-node lookup."""

    surface: Surface = field(repr=False)

    def describe(self) -> str:
        g = self.surface.grid
        return f"feedback(surface {g.n_space}x{g.n_time})"

    def validate(self, params: MarketParams) -> None:
        sp = self.surface.params
        if (sp.sigma_low, sp.sigma_high, sp.horizon, sp.rate) != (
            params.sigma_low, params.sigma_high, params.horizon, params.rate):
            raise ValueError("feedback surface was solved for different market parameters")


VolControl = ConstantControl | DeterministicControl | FeedbackControl


def _in_band(params: MarketParams, sigmas) -> None:
    for s in sigmas:
        if not (params.sigma_low <= s <= params.sigma_high):
            raise ValueError(f"control volatility {s} outside [{params.sigma_low}, {params.sigma_high}]")


def random_step_controls(params: MarketParams, n: int, n_pieces: int = 4, seed: int = 0) -> list[DeterministicControl]:
    """Random deterministic step controls with values drawn uniformly in the band."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        breaks = np.sort(rng.uniform(0.0, params.horizon, n_pieces - 1))
        sig = rng.uniform(params.sigma_low, params.sigma_high, n_pieces)
        out.append(DeterministicControl(tuple(breaks), tuple(sig)))
    return out


def control_from_spec(spec: dict, surface: Surface | None = None) -> VolControl:
    kind = spec.get("kind")
    if kind == "constant":
        return ConstantControl(float(spec["sigma"]))
    if kind == "deterministic":
        return DeterministicControl(tuple(spec["breaks"]), tuple(spec["sigmas"]))
    if kind == "feedback":
        if surface is None:
            raise ValueError("feedback control needs a solved surface")
        return FeedbackControl(surface)
    raise ValueError(f"unknown control kind {kind!r}")


# -- simulation ---------------------------------------------------------------

def _normals(seed: int, first_block: int, n_blocks: int, n_steps: int) -> np.ndarray:
    out = np.empty((n_blocks * BLOCK, n_steps))
    for b in range(n_blocks):
        key = np.array([seed & _MASK64, first_block + b], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=key))
        out[b * BLOCK:(b + 1) * BLOCK] = gen.standard_normal((BLOCK, n_steps))
    return out


def _simulate_range(params, control, start, stop, n_steps, seed, kernels):
    """Log-price and per-step sigma for paths ``[start, stop)``."""
    b0, b1 = start // BLOCK, -(-stop // BLOCK)
    z = _normals(seed, b0, b1 - b0, n_steps)[start - b0 * BLOCK: stop - b0 * BLOCK]
    dt = params.horizon / n_steps
    y0 = math.log(params.spot)
    if isinstance(control, FeedbackControl):
        s = control.surface
        return kernels.feedback_paths(
            y0, np.ascontiguousarray(z), dt, params.rate, params.sigma_low, params.sigma_high,
            np.ascontiguousarray(s.high_mask.astype(np.uint8)), s.dt, float(s.log_x[0]), s.dy)
    sig = np.broadcast_to(control.schedule(params, n_steps), z.shape)
    inc = (params.rate - 0.5 * sig * sig) * dt + sig * math.sqrt(dt) * z
    log_s = np.empty((z.shape[0], n_steps + 1))
    log_s[:, 0] = y0
    np.cumsum(inc, axis=1, out=log_s[:, 1:])
    log_s[:, 1:] += y0
    return log_s, np.ascontiguousarray(sig)


def _check_shape(n_paths: int, n_steps: int, seed: int) -> None:
    if n_paths < 1 or n_steps < 1:
        raise ValueError("n_paths and n_steps must be >= 1")
    if not (0 <= seed <= _MASK64):
        raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class PathBatch:
    n_paths: int
    n_steps: int
    seed: int
    horizon: float
    stock: np.ndarray
    qv: np.ndarray
    control_used: np.ndarray
    control: str = ""
    first_path: int = 0

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def realized_qv(self) -> np.ndarray:
        """Noisy realized QV from squared log increments (diagnostic only)."""
        return np.concatenate(
            [np.zeros((self.n_paths, 1)), np.cumsum(np.diff(np.log(self.stock), axis=1) ** 2, axis=1)], axis=1)

    def to_csv(self, fh) -> None:
        fh.write("path_id,step,t,S,qv,sigma\n")
        t = self.times
        for p in range(self.n_paths):
            for k in range(self.n_steps + 1):
                sig = self.control_used[p, k] if k < self.n_steps else self.control_used[p, -1]
                fh.write(f"{self.first_path + p},{k},{t[k]:.17g},{self.stock[p, k]:.17g},{self.qv[p, k]:.17g},{sig:.17g}\n")


def simulate_paths(params: MarketParams, control: VolControl, n_paths: int, n_steps: int,
                   seed: int, *, first_path: int = 0, kernels=None) -> PathBatch:
    """Simulate paths ``first_path .. first_path + n_paths - 1`` under one prior."""
    _check_shape(n_paths, n_steps, seed)
    if first_path < 0:
        raise ValueError("first_path must be >= 0")
    control.validate(params)
    kernels = kernels or _backend.kernels
    log_s, sig = _simulate_range(params, control, first_path, first_path + n_paths, n_steps, seed, kernels)
    dt = params.horizon / n_steps
    qv = np.zeros((n_paths, n_steps + 1))
    np.cumsum(sig * sig * dt, axis=1, out=qv[:, 1:])
    stock = np.exp(log_s)
    stock[:, 0] = params.spot  # exp(log(x0)) can be off by an ulp
    return PathBatch(n_paths, n_steps, seed, params.horizon, stock, qv,
                     np.array(sig), control.describe(), first_path)


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    n_paths: int
    n_steps: int
    seed: int
    control: str
    candidates: tuple[tuple[str, float, float], ...] = ()

    def to_dict(self) -> dict:
        d = {"value": self.value, "std_error": self.std_error, "n_paths": self.n_paths,
             "n_steps": self.n_steps, "seed": self.seed, "control": self.control}
        if self.candidates:
            d["candidates"] = [{"control": c, "value": v, "std_error": e} for c, v, e in self.candidates]
        return d


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("UNCVOL_THREADS", "1")))
    except ValueError:
        return 1


def terminal_prices(params: MarketParams, control: VolControl, n_paths: int, n_steps: int,
                    seed: int, *, kernels=None) -> np.ndarray:
    """``S_T`` for every path, simulated chunk by chunk without storing paths."""
    _check_shape(n_paths, n_steps, seed)
    control.validate(params)
    kernels = kernels or _backend.kernels
    step = BLOCK * _CHUNK_BLOCKS
    ranges = [(a, min(a + step, n_paths)) for a in range(0, n_paths, step)]

    def run(r):
        log_s, _ = _simulate_range(params, control, r[0], r[1], n_steps, seed, kernels)
        return np.exp(log_s[:, -1])

    if _threads() > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(_threads()) as ex:
            parts = list(ex.map(run, ranges))
    else:
        parts = [run(r) for r in ranges]
    return np.concatenate(parts)


def estimate_claim(params: MarketParams, payoff: Payoff, control: VolControl, n_paths: int,
                   n_steps: int, seed: int, *, kernels=None) -> McEstimate:
    """``e^{-rT} E^P[Phi(S_T)]`` under the single prior induced by ``control``."""
    s_t = terminal_prices(params, control, n_paths, n_steps, seed, kernels=kernels)
    disc = np.exp(-params.rate * params.horizon) * evaluate(payoff, s_t)
    # numpy's sum is pairwise, which bounds the rounding drift of the mean
    mean = float(np.sum(disc) / n_paths)
    se = float(np.std(disc, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return McEstimate(mean, se, n_paths, n_steps, seed, control.describe())


def estimate_sup(params: MarketParams, payoff: Payoff, control_family, n_paths: int, n_steps: int,
                 seed: int, *, kernels=None) -> McEstimate:
    """Max of single-prior estimates over a finite family (common random numbers).

    A finite family only explores part of the prior set, so this is a lower
    bound on the G-expectation up to Monte Carlo error.
    """
    family = list(control_family)
    if not family:
        raise ValueError("control family must be non-empty")
    ests = [estimate_claim(params, payoff, c, n_paths, n_steps, seed, kernels=kernels) for c in family]
    best = max(range(len(ests)), key=lambda i: ests[i].value)
    b = ests[best]
    return McEstimate(b.value, b.std_error, n_paths, n_steps, seed, b.control,
                      tuple((e.control, e.value, e.std_error) for e in ests))


@dataclass(frozen=True)
class QvReport:
    ok: bool
    n_step_violations: int
    qv_terminal_min: float
    qv_terminal_max: float
    lower: float
    upper: float
    attains_lower: bool
    attains_upper: bool
    strictly_interior: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def qv_bounds_check(batch: PathBatch, params: MarketParams) -> QvReport:
    """Check ``<B>`` stays in the band: per step exactly, terminally to rounding."""
    dt = batch.dt
    inc = batch.control_used * batch.control_used * dt
    lo_step = params.sigma_low * params.sigma_low * dt
    hi_step = params.sigma_high * params.sigma_high * dt
    bad = int(np.count_nonzero((inc < lo_step) | (inc > hi_step)))
    lower = params.var_low * batch.horizon
    upper = params.var_high * batch.horizon
    q = batch.qv[:, -1]
    # cumulative sums of n terms carry at most ~n ulps of rounding
    slack = 4.0 * batch.n_steps * float(np.finfo(float).eps)
    qmin, qmax = float(q.min()), float(q.max())
    in_range = qmin >= lower * (1 - slack) and qmax <= upper * (1 + slack)
    return QvReport(
        ok=bool(bad == 0 and in_range),
        n_step_violations=bad,
        qv_terminal_min=qmin,
        qv_terminal_max=qmax,
        lower=lower,
        upper=upper,
        attains_lower=bool(abs(qmin - lower) <= slack * lower),
        attains_upper=bool(abs(qmax - upper) <= slack * upper),
        strictly_interior=bool(np.all((q > lower * (1 + slack)) & (q < upper * (1 - slack)))),
    )
