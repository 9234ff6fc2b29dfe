"""Pathwise super-hedging checks and the arbitrage constructions at and beyond
the price bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .bsb import GridSpec, SolverConfig, Surface, price_interval, solve_bsb
from .market import MarketParams
from .montecarlo import ConstantControl, PathBatch, simulate_paths
from .payoff import Payoff, evaluate

_QUANTILES = (0.5, 0.9, 0.99, 0.999)


class NoArbitrageError(ValueError):
    """Raised for quotes strictly inside the arbitrage-free interval."""


@dataclass(frozen=True)
class HedgeReport:
    n_paths: int
    n_steps: int
    control: str
    initial_capital: float
    terminal_shortfall_max: float
    shortfall_quantiles: dict
    rms_error: float
    consumption_min_increment: float
    consumption_total_mean: float
    consumption_discounted_mean: float
    min_wealth: float
    admissibility_bound: float
    out_of_domain_steps: int
    notes: tuple[str, ...] = ()
    terminal_error: np.ndarray = field(default=None, repr=False, compare=False)
    trace: tuple | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "n_steps": self.n_steps,
            "control": self.control,
            "initial_capital": self.initial_capital,
            "terminal_shortfall_max": self.terminal_shortfall_max,
            "shortfall_quantiles": {str(k): v for k, v in self.shortfall_quantiles.items()},
            "rms_error": self.rms_error,
            "consumption_min_increment": self.consumption_min_increment,
            "consumption_total_mean": self.consumption_total_mean,
            "consumption_discounted_mean": self.consumption_discounted_mean,
            "min_wealth": self.min_wealth,
            "admissibility_bound": self.admissibility_bound,
            "out_of_domain_steps": self.out_of_domain_steps,
            "notes": list(self.notes),
        }

    def trace_csv(self, fh, batch: PathBatch) -> None:
        if self.trace is None:
            raise ValueError("report was produced without record=True")
        X, phi, C = self.trace
        fh.write("path_id,step,t,S,X,phi,C\n")
        t = batch.times
        for p in range(batch.n_paths):
            for k in range(batch.n_steps + 1):
                ph = phi[p, k] if k < batch.n_steps else phi[p, -1]
                fh.write(f"{p},{k},{t[k]:.17g},{batch.stock[p, k]:.17g},{X[p, k]:.17g},{ph:.17g},{C[p, k]:.17g}\n")


def _compatible(surface: Surface, params: MarketParams, batch: PathBatch) -> None:
    sp = surface.params
    if sp != params:
        raise ValueError("surface was solved for different market parameters")
    if not math.isclose(batch.horizon, params.horizon, rel_tol=1e-12):
        raise ValueError("path batch horizon differs from the market horizon")
    lo, hi = params.sigma_low, params.sigma_high
    if np.any(batch.control_used < lo) or np.any(batch.control_used > hi):
        raise ValueError("path batch uses volatilities outside the band")


def _run(surface, params, batch, consume, record, kernels):
    kernels = kernels or _backend.kernels
    x0_value = surface.spot_value()
    out = kernels.hedge_paths(
        np.ascontiguousarray(batch.stock), np.ascontiguousarray(batch.control_used ** 2),
        batch.dt, params.rate, x0_value, surface.dt, float(surface.log_x[0]), surface.dy,
        np.ascontiguousarray(surface.delta), np.ascontiguousarray(surface.gamma),
        params.var_low, params.var_high, consume, record)
    return x0_value, out


def simulate_hedge(surface: Surface, params: MarketParams, payoff: Payoff, batch: PathBatch,
                   *, record: bool = False, kernels=None) -> HedgeReport:
    """Run the BSB hedge ``phi = u_x`` with consumption along each simulated path.

    Starting from ``u(0, x0)``, each step applies
    ``dX = phi dS + (X - phi S)(e^{r dt} - 1) - dC`` where ``dC`` is the
    consumption increment at the path's own variance rate.
    """
    _compatible(surface, params, batch)
    x0_value, (X, C, Cd, min_dc, min_x, clamped, trace) = _run(surface, params, batch, True, record, kernels)
    h = evaluate(payoff, batch.stock[:, -1])
    shortfall = h - X
    bound = -payoff.lipschitz_bound * float(surface.x[-1])
    notes = [
        "admissibility is checked only as a lower bound on wealth; H^1_G membership has no finite-sample test",
    ]
    n_out = int(clamped.sum())
    if n_out:
        notes.append(f"{n_out} path-steps left the grid and used edge values")
    return HedgeReport(
        n_paths=batch.n_paths,
        n_steps=batch.n_steps,
        control=batch.control,
        initial_capital=x0_value,
        terminal_shortfall_max=float(shortfall.max()),
        shortfall_quantiles={q: float(np.quantile(shortfall, q)) for q in _QUANTILES},
        rms_error=float(np.sqrt(np.mean(shortfall ** 2))),
        consumption_min_increment=float(min_dc.min()),
        consumption_total_mean=float(C.mean()),
        consumption_discounted_mean=float(Cd.mean()),
        min_wealth=float(min_x.min()),
        admissibility_bound=bound,
        out_of_domain_steps=n_out,
        notes=tuple(notes),
        terminal_error=shortfall,
        trace=trace,
    )


def _chunked_terminal(surface, params, payoff, control, n_paths, n_steps, seed, consume, kernels,
                      chunk=512):
    """Terminal hedge wealth and claim value, simulating ``chunk`` paths at a time."""
    X, H = [], []
    for start in range(0, n_paths, chunk):
        batch = simulate_paths(params, control, min(chunk, n_paths - start), n_steps, seed,
                               first_path=start, kernels=kernels)
        _, (x, *_rest) = _run(surface, params, batch, consume, False, kernels)
        X.append(x)
        H.append(evaluate(payoff, batch.stock[:, -1]))
    return np.concatenate(X), np.concatenate(H)


def calibrate_tolerance(params: MarketParams, payoff: Payoff, n_paths: int, n_steps: int, seed: int,
                        *, grid: GridSpec | None = None, cfg: SolverConfig | None = None,
                        sigma: float | None = None, factor: float = 3.0, statistic: str = "max",
                        kernels=None) -> float:
    """Discretization tolerance from a degenerate band, where replication is exact.

    Solves with ``sigma_low = sigma_high = sigma`` (band midpoint by default),
    hedges paths simulated at that volatility with the same resolution, and
    returns ``factor`` times the max (or RMS) absolute terminal error.
    """
    sigma = sigma if sigma is not None else 0.5 * (params.sigma_low + params.sigma_high)
    flat = params.with_band(sigma, sigma)
    surf = solve_bsb(flat, payoff, grid, cfg, kernels=kernels)
    X, H = _chunked_terminal(surf, flat, payoff, ConstantControl(sigma), n_paths, n_steps, seed, True, kernels)
    err = H - X
    if statistic == "max":
        return factor * float(np.max(np.abs(err)))
    if statistic == "rms":
        return factor * float(np.sqrt(np.mean(err ** 2)))
    raise ValueError("statistic must be 'max' or 'rms'")


@dataclass(frozen=True)
class PriorOutcome:
    control: str
    min_wealth: float
    mean_wealth: float
    frac_nonnegative: float
    frac_above_tol: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class ArbitrageTrace:
    side: str
    quote: float
    h_low: float
    h_up: float
    banked: float
    strategy: str
    tol: float
    outcomes: tuple[PriorOutcome, ...]

    @property
    def min_wealth(self) -> float:
        return min(o.min_wealth for o in self.outcomes)

    @property
    def frac_above_tol(self) -> float:
        return min(o.frac_above_tol for o in self.outcomes)

    def to_dict(self) -> dict:
        return {
            "side": self.side, "quote": self.quote, "h_low": self.h_low, "h_up": self.h_up,
            "banked": self.banked, "strategy": self.strategy, "tol": self.tol,
            "outcomes": [o.to_dict() for o in self.outcomes],
        }


def demo_arbitrage_outside_interval(params: MarketParams, payoff: Payoff, quote: float, side: str, *,
                                    priors=None, n_paths: int = 2000, n_steps: int = 256, seed: int = 0,
                                    grid: GridSpec | None = None, cfg: SolverConfig | None = None,
                                    tol: float | None = None, price_atol: float = 1e-9,
                                    kernels=None) -> ArbitrageTrace:
    """Build and simulate the riskless-profit strategy for a quote at or outside the bounds.

    Above ``h_up``: sell the claim at ``quote``, run the upper super-hedge from
    ``h_up`` and bank the difference. Below ``h_low``: buy the claim, short
    the lower hedge (which brings in ``h_low``) and bank the difference. At a
    bound exactly, the same hedge is run with its consumption kept in the
    portfolio; profit then comes from consumption under non-worst-case priors.

    ``tol`` is the profit threshold; by default three times the RMS hedging
    error of the degenerate band at this resolution.
    """
    if side not in ("above_hup", "below_hlow"):
        raise ValueError("side must be 'above_hup' or 'below_hlow'")
    interval, upper, lower = price_interval(params, payoff, grid, cfg, return_surfaces=True, kernels=kernels)
    h_low, h_up = interval.h_low, interval.h_up
    atol = price_atol * max(1.0, abs(h_up))
    if h_low + atol < quote < h_up - atol:
        raise NoArbitrageError(
            f"quote {quote:.10g} lies inside the open interval ({h_low:.10g}, {h_up:.10g}); "
            "no arbitrage exists at such prices")
    if side == "above_hup":
        if quote < h_up - atol:
            raise ValueError(f"side above_hup needs quote >= h_up = {h_up:.10g}")
        surface, claim_sign, banked = upper, -1.0, quote - h_up
        at_bound = quote <= h_up + atol
        strategy = ("sell claim at h_up; run the super-hedge keeping its consumption"
                    if at_bound else "sell claim, super-hedge from h_up, bank quote - h_up")
    else:
        if quote > h_low + atol:
            raise ValueError(f"side below_hlow needs quote <= h_low = {h_low:.10g}")
        surface, claim_sign, banked = lower, 1.0, h_low - quote
        at_bound = quote >= h_low - atol
        strategy = ("buy claim at h_low; short the lower hedge keeping its consumption"
                    if at_bound else "buy claim, short the lower hedge (receives h_low), bank h_low - quote")
    if at_bound:
        banked = 0.0
    if priors is None:
        priors = [ConstantControl(params.sigma_low), ConstantControl(params.sigma_high)]
    if tol is None:
        tol = calibrate_tolerance(params, payoff, n_paths, n_steps, seed, grid=grid, cfg=cfg,
                                  statistic="rms", kernels=kernels)
    growth = math.exp(params.rate * params.horizon)
    outcomes = []
    for prior in priors:
        X, h = _chunked_terminal(surface, params, payoff, prior, n_paths, n_steps, seed, False, kernels)
        # upper surface hedges the short claim; lower surface super-replicates -H
        wealth = X + claim_sign * h + banked * growth
        outcomes.append(PriorOutcome(
            prior.describe(), float(wealth.min()), float(wealth.mean()),
            float(np.mean(wealth >= 0.0)), float(np.mean(wealth > tol))))
    return ArbitrageTrace(side, float(quote), h_low, h_up, banked, strategy, float(tol), tuple(outcomes))
