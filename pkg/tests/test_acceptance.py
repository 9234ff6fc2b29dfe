"""Acceptance gate: criteria 1-10, each at its stated tolerance.

Every test prints one ``[PASS]``/``[FAIL]`` line and the lines are repeated
in the pytest terminal summary. Run on its own with

    python -m pytest tests/test_acceptance.py -v
"""

import json
import math
import time

import numpy as np
import pytest

from uncvol.bsb import GridSpec, price_interval, solve_bsb
from uncvol.cli import main as cli_main
from uncvol.closed_form import bs_call, bs_piecewise_linear, forward_value
from uncvol.hedge import NoArbitrageError, calibrate_tolerance, demo_arbitrage_outside_interval, simulate_hedge
from uncvol.market import MarketParams
from uncvol.montecarlo import (ConstantControl, FeedbackControl, estimate_claim, qv_bounds_check,
                               random_step_controls, simulate_paths)
from uncvol.payoff import Payoff

from conftest import crr_call_smoothed

RESULTS: dict[int, str] = {}

BAND = MarketParams(rate=0.05, sigma_low=0.1, sigma_high=0.3, spot=100.0, horizon=1.0)
FLAT = BAND.with_band(0.2, 0.2)
CALL = Payoff.call(100.0)
SPREAD = Payoff.bull_spread(90.0, 110.0)
SIGMAS = (0.10, 0.15, 0.20, 0.25, 0.30)


def report(n: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:>2}: {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def priors():
    # 5 constant volatilities plus 20 random deterministic step controls
    return [ConstantControl(s) for s in SIGMAS] + random_step_controls(BAND, 20, n_pieces=4, seed=2024)


def test_criterion_01_degenerate_band():
    bs = bs_call(100, 100, 0.05, 0.2, 1).price
    tree = crr_call_smoothed(100.0, 100.0, 0.05, 0.2, 1.0)
    price_interval(FLAT, CALL)  # warm-up so the timing excludes import costs
    iv, dt = timed(lambda: price_interval(FLAT, CALL))
    rel = abs(iv.h_up - bs) / bs
    ok = iv.h_up == iv.h_low and rel < 5e-4 and dt < 1.0 and abs(bs - tree) < 5e-5
    report(1, ok, f"h_up=h_low={iv.h_up:.6f} bs={bs:.6f} (tree {tree:.6f}) rel={rel:.2e} < 5e-4, "
                  f"runtime {dt:.3f}s < 1s")


def test_criterion_02_convex_collapse():
    iv, dt = timed(lambda: price_interval(BAND, CALL))
    hi = bs_call(100, 100, 0.05, 0.3, 1).price
    lo = bs_call(100, 100, 0.05, 0.1, 1).price
    e_up, e_low = abs(iv.h_up - hi) / hi, abs(iv.h_low - lo) / lo
    ok = e_up < 1e-3 and e_low < 1e-3 and dt < 2.0
    report(2, ok, f"h_up rel err {e_up:.2e}, h_low rel err {e_low:.2e} (< 1e-3), runtime {dt:.3f}s < 2s")


def test_criterion_03_sandwich():
    call = price_interval(BAND, CALL)
    tol = 5e-4 * call.h_up
    call_ok = all(call.h_low - tol <= bs_call(100, 100, 0.05, s, 1).price <= call.h_up + tol for s in SIGMAS)
    spread = price_interval(BAND, SPREAD)
    slack = []
    for s in SIGMAS[1:-1]:
        p = bs_piecewise_linear(100.0, SPREAD, 0.05, s, 1.0)
        slack.append(min(p - spread.h_low, spread.h_up - p) / spread.h_up)
    ok = call_ok and min(slack) > 1e-3
    report(3, ok, f"call sandwich within {tol:.4f}: {call_ok}; spread min interior slack "
                  f"{min(slack):.3%} of h_up > 0.1%")


def test_criterion_04_linear_parity():
    iv = price_interval(BAND, Payoff.forward(100.0))
    exact = forward_value(100, 100, 0.05, 1)
    width_ok = iv.h_up - iv.h_low <= 2e-4 * 100.0
    e = max(abs(iv.h_up - exact), abs(iv.h_low - exact)) / exact
    ok = width_ok and e <= 2e-4
    report(4, ok, f"width {iv.h_up - iv.h_low:.2e} <= 0.02 (0.02% of notional), max rel err {e:.2e} <= 2e-4")


def test_criterion_05_pde_mc_duality():
    def run():
        iv, upper, _ = price_interval(BAND, SPREAD, return_surfaces=True)
        fb = estimate_claim(BAND, SPREAD, FeedbackControl(upper), 100_000, 256, 7)
        consts = [estimate_claim(BAND, SPREAD, ConstantControl(s), 100_000, 256, 7) for s in SIGMAS]
        return iv, fb, consts

    (iv, fb, consts), dt = timed(run)
    gap = abs(fb.value - iv.h_up)
    fb_ok = gap <= 3 * fb.std_error + 1e-3 * iv.h_up
    best = max(consts, key=lambda e: e.value)
    sup_ok = iv.h_up - best.value > 3 * best.std_error
    ok = fb_ok and sup_ok and dt < 30.0
    report(5, ok, f"feedback MC {fb.value:.4f}±{fb.std_error:.4f} vs h_up {iv.h_up:.4f} (gap {gap:.4f}); "
                  f"constant sup {best.value:.4f} ({best.control}) below by {iv.h_up - best.value:.3f}; "
                  f"runtime {dt:.1f}s < 30s")


def test_criterion_06_bang_bang():
    s = solve_bsb(BAND, SPREAD)
    rows = np.flatnonzero(s.times <= 0.9 * BAND.horizon + 1e-12)
    bad = []
    for i in rows:
        hi = s.high_mask[i]
        down = np.flatnonzero(hi[:-1] & ~hi[1:])
        if len(down) != 1 or not (90 < s.x[down[0]] and s.x[down[0] + 1] < 110):
            bad.append(i)
    front = [s.x[np.flatnonzero(s.high_mask[i][:-1] & ~s.high_mask[i][1:])[0]] for i in (0, rows[-1])]
    report(6, not bad, f"{len(rows)} slices with t<=0.9T, {len(bad)} without a single switch in (90,110); "
                       f"switch at t=0: x~{front[0]:.2f}, t=0.9: x~{front[1]:.2f}")


def test_criterion_07_super_hedge_dominance(priors):
    def run():
        tol = calibrate_tolerance(BAND, CALL, 4000, 256, 11, sigma=0.2, factor=3.0, statistic="max")
        upper = solve_bsb(BAND, CALL)
        worst, min_dc, n_bad = -math.inf, math.inf, 0
        for c in priors:
            r = simulate_hedge(upper, BAND, CALL, simulate_paths(BAND, c, 4000, 256, 11))
            n_bad += int(np.count_nonzero(r.terminal_error > tol))
            worst = max(worst, r.terminal_shortfall_max)
            min_dc = min(min_dc, r.consumption_min_increment)
        return tol, worst, min_dc, n_bad

    (tol, worst, min_dc, n_bad), dt = timed(run)
    ok = n_bad == 0 and min_dc >= -tol and dt < 60.0
    report(7, ok, f"25 priors x 4000 paths: {n_bad} paths short by more than tol={tol:.3f} "
                  f"(max shortfall {worst:.3f}); min consumption increment {min_dc:.2e}; runtime {dt:.1f}s < 60s")


def test_criterion_08_arbitrage_dichotomy(tmp_path, capsys):
    grid = GridSpec(401, 2048)
    iv = price_interval(BAND, CALL, grid)
    tr = demo_arbitrage_outside_interval(BAND, CALL, iv.h_up + 0.5, "above_hup", n_paths=2000, n_steps=16384,
                                         seed=5, grid=grid)
    with pytest.raises(NoArbitrageError):
        demo_arbitrage_outside_interval(BAND, CALL, 0.5 * (iv.h_low + iv.h_up), "above_hup", grid=grid)
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({
        "schema_version": 1,
        "market": {"rate": 0.05, "sigma_low": 0.1, "sigma_high": 0.3, "spot": 100.0, "horizon": 1.0},
        "payoff": {"kind": "call", "strike": 100.0},
    }))
    code = cli_main(["arbitrage", "--config", str(cfg), "--quote", f"{iv.h_up - 1.0!r}", "--side", "above_hup"])
    capsys.readouterr()
    ok = tr.min_wealth >= 0.0 and tr.frac_above_tol > 0.99 and code == 2
    print(capsys.readouterr().out, end="")
    report(8, ok, f"quote h_up+0.5: min wealth {tr.min_wealth:.4f} >= 0, fraction above tol={tr.tol:.3f} "
                  f"{tr.frac_above_tol:.4f} > 0.99 (worst prior); inside quote exit code {code} == 2")


def test_criterion_09_qv_bounds(priors):
    upper = solve_bsb(BAND, SPREAD)
    all_ok = True
    for c in priors + [FeedbackControl(upper)]:
        b = simulate_paths(BAND, c, 2000, 256, 3)
        all_ok &= qv_bounds_check(b, BAND).ok
    lo = qv_bounds_check(simulate_paths(BAND, ConstantControl(0.1), 2000, 256, 3), BAND)
    hi = qv_bounds_check(simulate_paths(BAND, ConstantControl(0.3), 2000, 256, 3), BAND)
    ok = all_ok and lo.attains_lower and hi.attains_upper
    report(9, ok, f"26 controls in band: {all_ok}; sigma_low attains {lo.qv_terminal_min!r} "
                  f"(= {lo.lower!r}), sigma_high attains {hi.qv_terminal_max!r} (= {hi.upper!r})")


def test_criterion_10_grid_convergence():
    grids = (GridSpec(201, 100), GridSpec(401, 200), GridSpec(801, 400))
    h = [solve_bsb(BAND, CALL, g).spot_value() for g in grids]
    ratio = (h[1] - h[0]) / (h[2] - h[1])
    report(10, 1.5 <= ratio <= 4.5, f"u(0,x0) = {h[0]:.6f}, {h[1]:.6f}, {h[2]:.6f}; ratio {ratio:.3f} in [1.5, 4.5]")
