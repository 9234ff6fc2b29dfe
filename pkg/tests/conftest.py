import numpy as np
import pytest

from uncvol import _kernels_py
from uncvol.market import MarketParams

try:
    from uncvol import _kernels as _compiled
except ImportError:
    _compiled = None

BACKENDS = [pytest.param(_kernels_py, id="python")]
if _compiled is not None:
    BACKENDS.append(pytest.param(_compiled, id="cython"))


@pytest.fixture
def band():
    return MarketParams(rate=0.05, sigma_low=0.1, sigma_high=0.3, spot=100.0, horizon=1.0)


@pytest.fixture
def flat():
    return MarketParams(rate=0.05, sigma_low=0.2, sigma_high=0.2, spot=100.0, horizon=1.0)


def crr_call(spot, strike, rate, sigma, tau, n):
    """Cox-Ross-Rubinstein binomial price of a European call."""
    dt = tau / n
    u = np.exp(sigma * np.sqrt(dt))
    d = 1.0 / u
    p = (np.exp(rate * dt) - d) / (u - d)
    disc = np.exp(-rate * dt)
    j = np.arange(n + 1)
    v = np.maximum(spot * u ** j * d ** (n - j) - strike, 0.0)
    for _ in range(n):
        v = disc * (p * v[1:] + (1.0 - p) * v[:-1])
    return float(v[0])


def crr_call_smoothed(spot, strike, rate, sigma, tau, n=10_000):
    """Average of the n- and (n+1)-step trees, cancelling the odd/even oscillation."""
    return 0.5 * (crr_call(spot, strike, rate, sigma, tau, n) + crr_call(spot, strike, rate, sigma, tau, n + 1))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
