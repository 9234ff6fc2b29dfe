"""Command-line front end.

    uncvol price --config run.json
    uncvol surface --config run.json --format csv --out surface.csv
    uncvol simulate --config run.json --seed 7
    uncvol hedge --config run.json
    uncvol arbitrage --config run.json --quote 15.0 --side above_hup

The config is one JSON document with a strict schema (unknown keys are an
error). Exit codes: 0 ok, 2 config or usage error (including a quote inside
the no-arbitrage interval), 3 solver non-convergence, 4 a verification
command found an invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .bsb import GridSpec, PolicyIterationError, SolverConfig, price_interval, solve_bsb
from .hedge import (NoArbitrageError, calibrate_tolerance, demo_arbitrage_outside_interval,
                    simulate_hedge)
from .market import MarketParams
from .montecarlo import (ConstantControl, DeterministicControl, FeedbackControl, estimate_sup,
                         qv_bounds_check, random_step_controls, simulate_paths)
from .payoff import Payoff, classify_convexity

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_INVARIANT = 4

_QV_SAMPLE = 1000
_GRID_RTOL = 1e-3


class ConfigError(ValueError):
    pass


# -- config -------------------------------------------------------------------

def _keys(section: str, d: Any, required: set[str], optional: set[str] = frozenset()) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{section}: expected an object")
    missing = required - set(d)
    if missing:
        raise ConfigError(f"{section}: missing keys {sorted(missing)}")
    unknown = set(d) - required - set(optional)
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")
    return d


def _int(section: str, v: Any) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{section}: expected an integer, got {v!r}")
    return v


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 100_000
    n_steps: int = 256
    seed: int = 0
    controls: tuple[dict, ...] = ()


@dataclass(frozen=True)
class RunConfig:
    market: MarketParams
    payoff: Payoff
    grid: GridSpec = field(default_factory=GridSpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    mc: McConfig = field(default_factory=McConfig)
    hedge_tol: float | None = None
    out_format: str = "json"
    out_path: str | None = None


_CONTROL_KEYS = {
    "constant": ({"sigma"}, set()),
    "deterministic": ({"breaks", "sigmas"}, set()),
    "feedback": (set(), set()),
    "random_steps": ({"count"}, {"pieces", "seed"}),
}


def _control_spec(i: int, spec: Any) -> dict:
    where = f"mc.controls[{i}]"
    if not isinstance(spec, dict) or spec.get("kind") not in _CONTROL_KEYS:
        raise ConfigError(f"{where}: kind must be one of {sorted(_CONTROL_KEYS)}")
    req, opt = _CONTROL_KEYS[spec["kind"]]
    _keys(where, spec, req | {"kind"}, opt)
    return spec


def parse_config(doc: dict) -> RunConfig:
    """Validate a decoded config document and build the run objects."""
    try:
        return _parse(doc)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def _parse(doc: dict) -> RunConfig:
    _keys("config", doc, {"schema_version", "market", "payoff"}, {"grid", "solver", "mc", "hedge", "output"})
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {doc['schema_version']!r}")
    m = _keys("market", doc["market"], {"rate", "sigma_low", "sigma_high", "spot", "horizon"})
    market = MarketParams(**m)
    if not isinstance(doc["payoff"], dict):
        raise ConfigError("payoff: expected an object")
    payoff = Payoff.from_spec(doc["payoff"])
    grid = GridSpec(**_keys("grid", doc.get("grid", {}), set(), {"n_space", "n_time", "log_width"}))
    solver = SolverConfig(**_keys("solver", doc.get("solver", {}), set(),
                                  {"policy_tol", "max_policy_iters", "tie_tol", "scheme", "consumption_tol"}))
    mc_doc = _keys("mc", doc.get("mc", {}), set(), {"n_paths", "n_steps", "seed", "controls"})
    controls = mc_doc.get("controls", [])
    if not isinstance(controls, list):
        raise ConfigError("mc.controls: expected a list")
    mc = McConfig(
        n_paths=_int("mc.n_paths", mc_doc.get("n_paths", McConfig.n_paths)),
        n_steps=_int("mc.n_steps", mc_doc.get("n_steps", McConfig.n_steps)),
        seed=_int("mc.seed", mc_doc.get("seed", McConfig.seed)),
        controls=tuple(_control_spec(i, c) for i, c in enumerate(controls)),
    )
    if mc.n_paths < 2 or mc.n_steps < 1 or mc.seed < 0:
        raise ConfigError("mc: need n_paths >= 2, n_steps >= 1, seed >= 0")
    # build once so band violations surface at parse time
    _static_controls(market, mc)
    hedge = _keys("hedge", doc.get("hedge", {}), set(), {"tol"})
    tol = hedge.get("tol")
    if tol is not None and not (isinstance(tol, (int, float)) and tol >= 0):
        raise ConfigError("hedge.tol must be a nonnegative number")
    out = _keys("output", doc.get("output", {}), set(), {"format", "path"})
    fmt = out.get("format", "json")
    if fmt not in ("json", "csv"):
        raise ConfigError("output.format must be 'json' or 'csv'")
    path = out.get("path")
    if path is not None and not isinstance(path, str):
        raise ConfigError("output.path must be a string or null")
    return RunConfig(market, payoff, grid, solver, mc, None if tol is None else float(tol), fmt, path)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(doc)


def _static_controls(market: MarketParams, mc: McConfig) -> list:
    """Non-feedback controls from the config, default ``{sigma_low, mid, sigma_high}``."""
    out = []
    for spec in mc.controls:
        kind = spec["kind"]
        if kind == "constant":
            c = ConstantControl(float(spec["sigma"]))
        elif kind == "deterministic":
            c = DeterministicControl(tuple(spec["breaks"]), tuple(spec["sigmas"]))
        elif kind == "random_steps":
            out.extend(random_step_controls(market, _int("count", spec["count"]),
                                            _int("pieces", spec.get("pieces", 4)),
                                            _int("seed", spec.get("seed", 0))))
            continue
        else:
            continue
        c.validate(market)
        out.append(c)
    if not mc.controls:
        mid = 0.5 * (market.sigma_low + market.sigma_high)
        out = [ConstantControl(s) for s in sorted({market.sigma_low, mid, market.sigma_high})]
    return out


def _wants_feedback(mc: McConfig) -> bool:
    return any(c["kind"] == "feedback" for c in mc.controls)


# -- rendering ----------------------------------------------------------------

def _json(payload: dict) -> str:
    return json.dumps(payload, indent=2, allow_nan=True) + "\n"


def _csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])
    return buf.getvalue()


# -- commands -----------------------------------------------------------------

def cmd_price(cfg: RunConfig, fmt: str) -> tuple[str, int]:
    iv = price_interval(cfg.market, cfg.payoff, cfg.grid, cfg.solver)
    conv = classify_convexity(cfg.payoff).value
    if fmt == "csv":
        header = ["h_low", "h_up", "width", "collapsed", "convexity"] + [f"bs_sigma_{s!r}" for s, _ in iv.bs_mid]
        row = [iv.h_low, iv.h_up, iv.width, iv.collapsed(), conv] + [p for _, p in iv.bs_mid]
        return _csv(header, [row]), EXIT_OK
    payload = {"command": "price", **iv.to_dict(), "width": iv.width, "collapsed": iv.collapsed(),
               "convexity": conv}
    return _json(payload), EXIT_OK


def cmd_surface(cfg: RunConfig, fmt: str, bound: str = "upper") -> tuple[str, int]:
    payoff = cfg.payoff if bound == "upper" else cfg.payoff.negated()
    surf = solve_bsb(cfg.market, payoff, cfg.grid, cfg.solver)
    if fmt == "csv":
        buf = io.StringIO()
        surf.to_csv(buf)
        return buf.getvalue(), EXIT_OK
    payload = {
        "command": "surface",
        "bound": bound,
        "times": surf.times.tolist(),
        "x": surf.x.tolist(),
        "u": surf.values.tolist(),
        "delta": surf.delta.tolist(),
        "gamma": surf.gamma.tolist(),
        "control": surf.control.tolist(),
    }
    return _json(payload), EXIT_OK


def cmd_simulate(cfg: RunConfig, fmt: str) -> tuple[str, int]:
    mc = cfg.mc
    iv, upper, _ = price_interval(cfg.market, cfg.payoff, cfg.grid, cfg.solver, return_surfaces=True)
    family = _static_controls(cfg.market, mc)
    feedback = FeedbackControl(upper)
    est = estimate_sup(cfg.market, cfg.payoff, family + [feedback], mc.n_paths, mc.n_steps, mc.seed)
    fb = est.candidates[-1]
    static_best = max(est.candidates[:-1], key=lambda c: c[1])
    grid_tol = _GRID_RTOL * abs(iv.h_up)
    qv = []
    for c in family + [feedback]:
        batch = simulate_paths(cfg.market, c, min(mc.n_paths, _QV_SAMPLE), mc.n_steps, mc.seed)
        qv.append((c.describe(), qv_bounds_check(batch, cfg.market)))
    violations = []
    for name, value, se in est.candidates:
        if value > iv.h_up + 3.0 * se + grid_tol:
            violations.append(f"{name}: estimate above h_up beyond tolerance")
    violations += [f"{name}: quadratic variation left the band" for name, r in qv if not r.ok]
    code = EXIT_INVARIANT if violations else EXIT_OK
    if fmt == "csv":
        rows = [[name, value, se, value - iv.h_up] for name, value, se in est.candidates]
        return _csv(["control", "estimate", "std_error", "gap_to_h_up"], rows), code
    payload = {
        "command": "simulate",
        "h_up": iv.h_up,
        "h_low": iv.h_low,
        "estimate": est.to_dict(),
        "maximizer": est.control,
        "static_family_best": {"control": static_best[0], "value": static_best[1], "std_error": static_best[2]},
        "feedback": {"value": fb[1], "std_error": fb[2], "gap_to_h_up": fb[1] - iv.h_up,
                     "within_tolerance": abs(fb[1] - iv.h_up) <= 3.0 * fb[2] + grid_tol},
        "qv": [{"control": name, **r.to_dict()} for name, r in qv],
        "violations": violations,
    }
    return _json(payload), code


def cmd_hedge(cfg: RunConfig, fmt: str) -> tuple[str, int]:
    mc = cfg.mc
    upper = solve_bsb(cfg.market, cfg.payoff, cfg.grid, cfg.solver)
    priors = _static_controls(cfg.market, mc)
    if _wants_feedback(mc):
        priors.append(FeedbackControl(upper))
    tol = cfg.hedge_tol
    if tol is None:
        tol = calibrate_tolerance(cfg.market, cfg.payoff, mc.n_paths, mc.n_steps, mc.seed,
                                  grid=cfg.grid, cfg=cfg.solver)
    reports = []
    for prior in priors:
        batch = simulate_paths(cfg.market, prior, mc.n_paths, mc.n_steps, mc.seed)
        reports.append(simulate_hedge(upper, cfg.market, cfg.payoff, batch))
    violations = []
    for r in reports:
        n_bad = int(np.count_nonzero(r.terminal_error > tol))
        if n_bad:
            violations.append(f"{r.control}: {n_bad} paths short by more than tol")
        if r.consumption_min_increment < -tol:
            violations.append(f"{r.control}: negative consumption increment")
        if r.min_wealth < r.admissibility_bound:
            violations.append(f"{r.control}: wealth below the admissibility bound")
    code = EXIT_INVARIANT if violations else EXIT_OK
    if fmt == "csv":
        rows = [[r.control, r.initial_capital, r.terminal_shortfall_max, r.rms_error,
                 r.consumption_min_increment, r.consumption_total_mean, r.consumption_discounted_mean,
                 r.min_wealth] for r in reports]
        header = ["control", "initial_capital", "terminal_shortfall_max", "rms_error",
                  "consumption_min_increment", "consumption_total_mean", "consumption_discounted_mean",
                  "min_wealth"]
        return _csv(header, rows), code
    payload = {"command": "hedge", "tol": tol, "reports": [r.to_dict() for r in reports],
               "violations": violations}
    return _json(payload), code


def cmd_arbitrage(cfg: RunConfig, fmt: str, quote: float, side: str) -> tuple[str, int]:
    mc = cfg.mc
    priors = _static_controls(cfg.market, mc)
    trace = demo_arbitrage_outside_interval(
        cfg.market, cfg.payoff, quote, side, priors=priors, n_paths=mc.n_paths, n_steps=mc.n_steps,
        seed=mc.seed, grid=cfg.grid, cfg=cfg.solver, tol=cfg.hedge_tol)
    violations = []
    if trace.min_wealth < -trace.tol:
        violations.append("terminal wealth negative beyond tol on some path")
    if max(o.frac_above_tol for o in trace.outcomes) == 0.0:
        violations.append("no sampled prior shows a profit above tol")
    code = EXIT_INVARIANT if violations else EXIT_OK
    if fmt == "csv":
        rows = [[o.control, o.min_wealth, o.mean_wealth, o.frac_nonnegative, o.frac_above_tol]
                for o in trace.outcomes]
        return _csv(["control", "min_wealth", "mean_wealth", "frac_nonnegative", "frac_above_tol"], rows), code
    return _json({"command": "arbitrage", **trace.to_dict(), "violations": violations}), code


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uncvol", description="Uncertain-volatility pricing and hedging.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run config")
    common.add_argument("--out", help="output file (default: config output.path or stdout)")
    common.add_argument("--format", choices=("json", "csv"), help="overrides output.format")
    common.add_argument("--seed", type=int, help="overrides mc.seed")
    common.add_argument("--grid-refine", type=int, default=0, metavar="K",
                        help="halve the space and time steps K times")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("price", parents=[common], help="price interval (h_low, h_up)")
    sp = sub.add_parser("surface", parents=[common], help="value, greeks and control on the grid")
    sp.add_argument("--bound", choices=("upper", "lower"), default="upper",
                    help="lower exports the surface solved for the negated claim")
    sub.add_parser("simulate", parents=[common], help="multiple-prior Monte Carlo cross-check")
    sub.add_parser("hedge", parents=[common], help="pathwise super-hedge verification")
    arb = sub.add_parser("arbitrage", parents=[common], help="arbitrage strategy for an outside quote")
    arb.add_argument("--quote", type=float, required=True)
    arb.add_argument("--side", choices=("above_hup", "below_hlow"), required=True)
    return ap


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    grid = cfg.grid
    if args.grid_refine:
        if args.grid_refine < 0:
            raise ConfigError("--grid-refine must be >= 0")
        grid = grid.refined(args.grid_refine)
    mc = cfg.mc
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        mc = McConfig(mc.n_paths, mc.n_steps, args.seed, mc.controls)
    return RunConfig(cfg.market, cfg.payoff, grid, cfg.solver, mc, cfg.hedge_tol,
                     args.format or cfg.out_format, args.out or cfg.out_path)


def run(args: argparse.Namespace) -> tuple[str, int, str | None]:
    """Execute one command; returns ``(rendered output, exit code, output path)``."""
    cfg = _apply_overrides(load_config(args.config), args)
    fmt = cfg.out_format
    if args.command == "price":
        text, code = cmd_price(cfg, fmt)
    elif args.command == "surface":
        text, code = cmd_surface(cfg, fmt, args.bound)
    elif args.command == "simulate":
        text, code = cmd_simulate(cfg, fmt)
    elif args.command == "hedge":
        text, code = cmd_hedge(cfg, fmt)
    else:
        text, code = cmd_arbitrage(cfg, fmt, args.quote, args.side)
    return text, code, cfg.out_path


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text, code, out_path = run(args)
    except PolicyIterationError as exc:
        print(f"uncvol: solver did not converge: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except NoArbitrageError as exc:
        print(f"uncvol: refused: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ValueError) as exc:
        print(f"uncvol: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
