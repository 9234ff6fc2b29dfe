"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 3] [--json]

Each case runs through the public API with ``kernels=`` pinned, so the
numbers include the same Python-side setup a user would pay.
"""

from __future__ import annotations

import argparse
import json
import time

from uncvol import _kernels_py
from uncvol.bsb import GridSpec, solve_bsb
from uncvol.hedge import simulate_hedge
from uncvol.market import MarketParams
from uncvol.montecarlo import ConstantControl, FeedbackControl, simulate_paths
from uncvol.payoff import Payoff

try:
    from uncvol import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

PARAMS = MarketParams(0.05, 0.1, 0.3, 100.0, 1.0)
SPREAD = Payoff.bull_spread(90.0, 110.0)


def _best(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(kernels):
    surf = solve_bsb(PARAMS, SPREAD, GridSpec(), kernels=kernels)
    batch = simulate_paths(PARAMS, ConstantControl(0.2), 4000, 256, 0, kernels=kernels)
    return {
        "bsb_solve 401x200": lambda: solve_bsb(PARAMS, SPREAD, GridSpec(), kernels=kernels),
        "bsb_solve 801x800": lambda: solve_bsb(PARAMS, SPREAD, GridSpec(801, 800), kernels=kernels),
        "feedback_paths 20000x256": lambda: simulate_paths(PARAMS, FeedbackControl(surf), 20000, 256, 0,
                                                           kernels=kernels),
        "hedge_paths 4000x256": lambda: simulate_hedge(surf, PARAMS, SPREAD, batch, kernels=kernels),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", action="store_true", help="emit machine-readable results")
    args = ap.parse_args(argv)

    backends = {"python": _kernels_py}
    if _compiled is not None:
        backends["cython"] = _compiled
    results = {}
    for name, mod in backends.items():
        for case, fn in cases(mod).items():
            results.setdefault(case, {})[name] = _best(fn, args.repeat)

    if args.json:
        print(json.dumps(results, indent=2))
        return 0
    print(f"{'case':<28}{'python [s]':>12}{'cython [s]':>12}{'speedup':>10}")
    for case, t in results.items():
        cy = t.get("cython")
        cy_s = f"{cy:12.4f}" if cy is not None else f"{'n/a':>12}"
        sp = f"{t['python'] / cy:9.1f}x" if cy else f"{'':>10}"
        print(f"{case:<28}{t['python']:12.4f}{cy_s}{sp}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
