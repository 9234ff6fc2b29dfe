"""Finite-difference solver for the Black-Scholes-Barenblatt equation

    u_t + r x u_x + G(x^2 u_xx) = r u,    u(T, x) = Phi(x).

The grid is uniform in ``y = ln x`` and centred on the spot. The operator is
written in ``x`` with three-point non-uniform stencils, so functions linear in
``x`` (the far field of every Lipschitz payoff) are exact discrete solutions
and carry exactly zero discrete curvature. Time stepping is fully implicit
(BDF2 after one implicit Euler start, or implicit Euler throughout); every step
is solved by policy iteration over the bang-bang variance set.

At the truncated boundaries the curvature term vanishes and the equation
reduces to ``u_t + r x u_x = r u``; it is integrated using the local slope of
the previous time level, which is exact for a linear far field.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .closed_form import bs_piecewise_linear
from .market import DEFAULT_TIE_TOL, MarketParams, g_eval
from .payoff import Payoff, classify_convexity

_EPS = np.finfo(float).eps
# rounding floor for the discrete second difference, in units of eps*max|u|/dy^2
_NOISE_MULT = 64.0


class PolicyIterationError(RuntimeError):
    """A time step's policy iteration did not settle within the iteration cap."""

    def __init__(self, step: int, t: float, residual: float, max_iters: int):
        self.step = step
        self.t = t
        self.residual = residual
        self.max_iters = max_iters
        super().__init__(
            f"policy iteration did not converge at step {step} (t={t:.6g}) after "
            f"{max_iters} iterations; last value update {residual:.3e}"
        )


@dataclass(frozen=True, slots=True)
class GridSpec:
    n_space: int = 401
    n_time: int = 200
    log_width: float = 5.0

    def __post_init__(self) -> None:
        if int(self.n_space) != self.n_space or self.n_space < 16:
            raise ValueError("n_space must be an integer >= 16")
        if int(self.n_time) != self.n_time or self.n_time < 8:
            raise ValueError("n_time must be an integer >= 8")
        if not (math.isfinite(self.log_width) and self.log_width > 0):
            raise ValueError("log_width must be > 0")

    def refined(self, k: int = 1) -> "GridSpec":
        """Halve both step sizes ``k`` times."""
        f = 2 ** k
        return GridSpec((self.n_space - 1) * f + 1, self.n_time * f, self.log_width)


@dataclass(frozen=True, slots=True)
class SolverConfig:
    policy_tol: float = 1e-10
    max_policy_iters: int = 50
    tie_tol: float = DEFAULT_TIE_TOL
    scheme: str = "bdf2"
    consumption_tol: float = 1e-12

    def __post_init__(self) -> None:
        if not (self.policy_tol > 0 and self.consumption_tol >= 0 and self.tie_tol >= 0):
            raise ValueError("solver tolerances must be positive")
        if int(self.max_policy_iters) != self.max_policy_iters or self.max_policy_iters < 1:
            raise ValueError("max_policy_iters must be a positive integer")
        if self.scheme not in ("bdf2", "implicit_euler"):
            raise ValueError("scheme must be 'bdf2' or 'implicit_euler'")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Surface:
    """Solved value surface on the ``(t, ln x)`` grid; rows are time levels."""

    params: MarketParams
    grid: GridSpec
    times: np.ndarray
    log_x: np.ndarray
    values: np.ndarray
    control: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    policy_iters: np.ndarray
    scheme: str
    tie_tol: float
    consumption_tol: float = DEFAULT_TIE_TOL

    @property
    def x(self) -> np.ndarray:
        return np.exp(self.log_x)

    @property
    def dt(self) -> float:
        return self.params.horizon / self.grid.n_time

    @property
    def dy(self) -> float:
        return float(self.log_x[1] - self.log_x[0])

    @property
    def high_mask(self) -> np.ndarray:
        return self.control == self.params.sigma_high

    def _check_domain(self, t: float, s: float) -> None:
        if not (0.0 <= t <= self.params.horizon):
            raise ValueError(f"t={t} outside [0, {self.params.horizon}]")
        if not (s > 0 and self.log_x[0] <= math.log(s) <= self.log_x[-1]):
            raise ValueError(f"s={s} outside grid [{self.x[0]:.6g}, {self.x[-1]:.6g}]")

    def interpolate(self, name: str, t: float, s: float) -> float:
        """Bilinear interpolation of a surface field in ``(t, ln s)``."""
        self._check_domain(t, s)
        f = getattr(self, name)
        ti = t / self.dt
        i0 = min(int(math.floor(ti)), self.grid.n_time - 1)
        wt = ti - i0
        yj = (math.log(s) - self.log_x[0]) / self.dy
        j0 = min(int(math.floor(yj)), self.grid.n_space - 2)
        wy = yj - j0
        a = f[i0, j0] * (1 - wy) + f[i0, j0 + 1] * wy
        b = f[i0 + 1, j0] * (1 - wy) + f[i0 + 1, j0 + 1] * wy
        return float(a * (1 - wt) + b * wt)

    def value_at(self, t: float, s: float) -> float:
        return self.interpolate("values", t, s)

    def spot_value(self) -> float:
        """``u(0, x0)``; exact node value when the spot sits on the centre node."""
        n = self.grid.n_space
        if n % 2 == 1:
            return float(self.values[0, n // 2])
        return self.value_at(0.0, self.params.spot)

    def to_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "u", "delta", "gamma", "control"])
        x = self.x
        for i, t in enumerate(self.times):
            for j in range(x.shape[0]):
                w.writerow([_fmt(t), _fmt(x[j]), _fmt(self.values[i, j]), _fmt(self.delta[i, j]),
                            _fmt(self.gamma[i, j]), _fmt(self.control[i, j])])


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _grid_nodes(params: MarketParams, grid: GridSpec) -> np.ndarray:
    half = grid.log_width * params.sigma_high * math.sqrt(params.horizon)
    y0 = math.log(params.spot)
    return np.linspace(y0 - half, y0 + half, grid.n_space)


def _stencils(x: np.ndarray, rate: float, var_low: float):
    """Interior coefficients of ``x^2 u_xx`` and ``r x u_x`` on non-uniform ``x``."""
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    xi = x[1:-1]
    gl = xi * xi * 2.0 / (hm * (hm + hp))
    gc = xi * xi * -2.0 / (hm * hp)
    gu = xi * xi * 2.0 / (hp * (hm + hp))
    dl = rate * xi * (-hp / (hm * (hm + hp)))
    dc = rate * xi * ((hp - hm) / (hm * hp))
    du = rate * xi * (hm / (hp * (hm + hp)))
    # forward differencing where central drift would break monotonicity at var_low
    bad = 0.5 * var_low * gl + dl < 0.0
    if np.any(bad):
        dl = np.where(bad, 0.0, dl)
        dc = np.where(bad, -rate * xi / hp, dc)
        du = np.where(bad, rate * xi / hp, du)
    return gl, gc, gu, dl, dc, du


def _derivatives(x: np.ndarray, values: np.ndarray):
    """``u_x`` and ``u_xx`` on every node; one-sided stencils at the edges."""
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    um, uc, up = values[:, :-2], values[:, 1:-1], values[:, 2:]
    delta = np.empty_like(values)
    gamma = np.empty_like(values)
    delta[:, 1:-1] = (-hp / (hm * (hm + hp))) * um + ((hp - hm) / (hm * hp)) * uc + (hm / (hp * (hm + hp))) * up
    gamma[:, 1:-1] = (2.0 / (hm * (hm + hp))) * um - (2.0 / (hm * hp)) * uc + (2.0 / (hp * (hm + hp))) * up
    delta[:, 0] = (values[:, 1] - values[:, 0]) / (x[1] - x[0])
    delta[:, -1] = (values[:, -1] - values[:, -2]) / (x[-1] - x[-2])
    gamma[:, 0] = gamma[:, 1]
    gamma[:, -1] = gamma[:, -2]
    return delta, gamma


def solve_bsb(params: MarketParams, payoff: Payoff, grid: GridSpec | None = None,
              cfg: SolverConfig | None = None, *, kernels=None) -> Surface:
    grid = grid or GridSpec()
    cfg = cfg or SolverConfig()
    kernels = kernels or _backend.kernels
    log_x = _grid_nodes(params, grid)
    x = np.exp(log_x)
    dy = float(log_x[1] - log_x[0])
    if not (dy > 0 and np.all(np.diff(x) > 0)):
        raise ValueError("degenerate grid")
    dt = params.horizon / grid.n_time
    terminal = np.ascontiguousarray(payoff.canonical(x), dtype=float)
    stencils = _stencils(x, params.rate, params.var_low)
    values, high, iters, status, fail_step, resid = kernels.bsb_sweep(
        x, terminal, *stencils, dt, grid.n_time, params.rate, params.var_low, params.var_high,
        _NOISE_MULT * _EPS / (dy * dy), cfg.tie_tol, cfg.policy_tol, cfg.max_policy_iters,
        cfg.scheme == "bdf2",
    )
    if status != 0:
        raise PolicyIterationError(int(fail_step), fail_step * dt, float(resid), cfg.max_policy_iters)

    delta, gamma = _derivatives(x, values)
    # edge controls from the one-sided curvature, same tie rule as the kernel
    dollar_edge = gamma[:, [0, -1]] * x[[0, -1]] ** 2
    floor = cfg.tie_tol + _NOISE_MULT * _EPS / (dy * dy) * np.max(np.abs(values), axis=1, keepdims=True)
    is_high = np.empty(values.shape, dtype=bool)
    is_high[:, 1:-1] = high.astype(bool)
    is_high[:, [0, -1]] = dollar_edge >= -floor
    control = np.where(is_high, params.sigma_high, params.sigma_low)
    times = np.linspace(0.0, params.horizon, grid.n_time + 1)
    return Surface(
        params=params, grid=grid, times=_frozen(times), log_x=_frozen(log_x),
        values=_frozen(values), control=_frozen(control), delta=_frozen(delta),
        gamma=_frozen(gamma), policy_iters=_frozen(np.asarray(iters)), scheme=cfg.scheme,
        tie_tol=cfg.tie_tol, consumption_tol=cfg.consumption_tol,
    )


@dataclass(frozen=True)
class PriceInterval:
    h_low: float
    h_up: float
    bs_mid: tuple[tuple[float, float], ...]
    diagnostics: dict = field(default_factory=dict)

    @property
    def width(self) -> float:
        return self.h_up - self.h_low

    def collapsed(self, rtol: float = 1e-6) -> bool:
        return abs(self.width) <= rtol * max(1.0, abs(self.h_up))

    def to_dict(self) -> dict:
        return {
            "h_low": self.h_low,
            "h_up": self.h_up,
            "bs_mid": [{"sigma": s, "bs_price": p} for s, p in self.bs_mid],
            "diagnostics": self.diagnostics,
        }


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("UNCVOL_THREADS", "1")))
    except ValueError:
        return 1


def price_interval(params: MarketParams, payoff: Payoff, grid: GridSpec | None = None,
                   cfg: SolverConfig | None = None, *, return_surfaces: bool = False, kernels=None):
    """Upper and lower arbitrage prices from two independent BSB solves.

    The lower price solves with terminal data ``-Phi`` and negates; it is not
    the negated upper surface because G is not odd.
    """
    grid = grid or GridSpec()
    cfg = cfg or SolverConfig()
    jobs = (payoff, payoff.negated())
    if _threads() > 1:
        with ThreadPoolExecutor(2) as ex:
            upper, lower = ex.map(lambda p: solve_bsb(params, p, grid, cfg, kernels=kernels), jobs)
    else:
        upper, lower = (solve_bsb(params, p, grid, cfg, kernels=kernels) for p in jobs)
    h_up = upper.spot_value()
    h_low = -lower.spot_value()
    mid = 0.5 * (params.sigma_low + params.sigma_high)
    sigmas = (params.sigma_low, mid, params.sigma_high)
    bs_mid = tuple((s, bs_piecewise_linear(params.spot, payoff, params.rate, s, params.horizon)) for s in sigmas)
    diagnostics = {
        "grid": {"n_space": grid.n_space, "n_time": grid.n_time, "log_width": grid.log_width},
        "scheme": cfg.scheme,
        "policy_iterations_upper": int(upper.policy_iters.sum()),
        "policy_iterations_lower": int(lower.policy_iters.sum()),
        "max_policy_iterations_per_step": int(max(upper.policy_iters.max(), lower.policy_iters.max())),
        "convexity": classify_convexity(payoff).value,
        "backend": _backend.name_of(kernels),
    }
    result = PriceInterval(h_low, h_up, bs_mid, diagnostics)
    if return_surfaces:
        return result, upper, lower
    return result


def extract_hedge(surface: Surface, t: float, s: float) -> tuple[float, float]:
    """Stock units ``phi = u_x(t, s)`` and bond units ``(u - phi s) / e^{rt}``."""
    phi = surface.interpolate("delta", t, s)
    u = surface.interpolate("values", t, s)
    return phi, (u - phi * s) * math.exp(-surface.params.rate * t)


def consumption_increment(surface: Surface, t: float, s: float, realized_qv_rate: float, dt: float) -> float:
    """Consumption over ``[t, t + dt]`` given the realized variance rate.

    ``[G(u_xx s^2) - u_xx s^2 v / 2] dt``: the slack between the worst-case and
    realized quadratic-variation charge. Nonnegative for any ``v`` in the band.
    """
    p = surface.params
    if dt <= 0:
        raise ValueError("dt must be > 0")
    lo, hi = p.var_low, p.var_high
    slack = 1e-12 * hi
    if not (lo - slack <= realized_qv_rate <= hi + slack):
        raise ValueError(f"realized variance rate {realized_qv_rate} outside [{lo}, {hi}]")
    z = surface.interpolate("gamma", t, s) * s * s
    dc = (g_eval(p.g, z) - 0.5 * realized_qv_rate * z) * dt
    if dc < -surface.consumption_tol:
        raise ArithmeticError(f"negative consumption increment {dc}")
    return dc
