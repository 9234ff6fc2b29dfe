"""Pure-Python (numpy/scipy) versions of the hot loops.

Signatures and semantics match the compiled ``_kernels`` module exactly; the
backend is picked in :mod:`uncvol._backend`.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_banded


def bsb_sweep(x, terminal, gl, gc, gu, dl, dc, du, dt, n_time, rate, var_low, var_high,
              noise_scale, tie_tol, policy_tol, max_iters, bdf2):
    """Backward sweep of the discretized BSB equation with policy iteration.

    Returns ``(values, high, iters, status, fail_step, fail_resid)`` where
    ``high[i, j]`` flags interior node ``j + 1`` at time row ``i`` as using the
    upper variance. ``status`` is 0 on success, 1 if a step exhausted
    ``max_iters``.
    """
    nx = x.shape[0]
    m = nx - 2
    values = np.empty((n_time + 1, nx))
    high = np.empty((n_time + 1, m), dtype=np.uint8)
    iters = np.zeros(n_time, dtype=np.int32)
    values[n_time] = terminal
    degenerate = var_low == var_high

    def curvature(u):
        return gl * u[:-2] + gc * u[1:-1] + gu * u[2:]

    def select(u):
        floor = tie_tol + noise_scale * np.max(np.abs(u))
        return (curvature(u) >= -floor).astype(np.uint8)

    hi = select(terminal)
    high[n_time] = hi
    ab = np.zeros((3, m))
    rdt = rate * dt
    for n in range(n_time - 1, -1, -1):
        old = values[n + 1]
        a0 = (old[1] - old[0]) / (x[1] - x[0])
        an = (old[-1] - old[-2]) / (x[-1] - x[-2])
        if bdf2 and n < n_time - 1:
            old2 = values[n + 2]
            c0 = 1.5
            rhs_full = 2.0 * old - 0.5 * old2
            b0 = a0 * x[0] + (2.0 * (old[0] - a0 * x[0]) - 0.5 * (old2[0] - a0 * x[0])) / (1.5 + rdt)
            bn = an * x[-1] + (2.0 * (old[-1] - an * x[-1]) - 0.5 * (old2[-1] - an * x[-1])) / (1.5 + rdt)
        else:
            c0 = 1.0
            rhs_full = old
            b0 = a0 * x[0] + (old[0] - a0 * x[0]) / (1.0 + rdt)
            bn = an * x[-1] + (old[-1] - an * x[-1]) / (1.0 + rdt)

        prev = None
        status = 1
        resid = math.inf
        for it in range(1, max_iters + 1):
            v = np.where(hi == 1, var_high, var_low)
            lo = -dt * (0.5 * v * gl + dl)
            md = c0 - dt * (0.5 * v * gc + dc - rate)
            up = -dt * (0.5 * v * gu + du)
            rhs = rhs_full[1:-1].copy()
            rhs[0] -= lo[0] * b0
            rhs[-1] -= up[-1] * bn
            ab[0, 1:] = up[:-1]
            ab[1] = md
            ab[2, :-1] = lo[1:]
            u = np.empty(nx)
            u[0] = b0
            u[-1] = bn
            u[1:-1] = solve_banded((1, 1), ab, rhs, check_finite=False)
            new_hi = select(u)
            if degenerate or np.array_equal(new_hi, hi):
                hi = new_hi
                status = 0
                break
            if prev is not None:
                resid = float(np.max(np.abs(u - prev)))
                if resid <= policy_tol * max(1.0, float(np.max(np.abs(u)))):
                    hi = new_hi
                    status = 0
                    break
            prev = u
            hi = new_hi
        iters[n] = it
        if status:
            return values, high, iters, 1, n, resid
        values[n] = u
        high[n] = hi
    return values, high, iters, 0, -1, 0.0


def _locate(t, log_s, surf_dt, y0, dy, nt, nx):
    ti = t / surf_dt
    i0 = min(max(int(math.floor(ti)), 0), nt - 1)
    wt = min(max(ti - i0, 0.0), 1.0)
    yj = (log_s - y0) / dy
    j0 = np.clip(np.floor(yj).astype(np.int64), 0, nx - 2)
    wy = yj - j0
    clamped = (wy < 0.0) | (wy > 1.0)
    wy = np.clip(wy, 0.0, 1.0)
    return i0, wt, j0, wy, clamped


def _bilinear(field, i0, wt, j0, wy):
    a = field[i0, j0] * (1.0 - wy) + field[i0, j0 + 1] * wy
    b = field[i0 + 1, j0] * (1.0 - wy) + field[i0 + 1, j0 + 1] * wy
    return a * (1.0 - wt) + b * wt


def hedge_paths(stock, var, dt, rate, x0_value, surf_dt, y0, dy, delta, gamma,
                var_low, var_high, consume, record):
    """Run the self-financing hedge along every path.

    Returns ``(wealth, cons, cons_disc, min_dc, min_wealth, clamped, trace)``;
    ``trace`` is ``(X, phi, C)`` path matrices when ``record`` else ``None``.
    """
    n_paths, n_cols = stock.shape
    n_steps = n_cols - 1
    nt = delta.shape[0] - 1
    nx = delta.shape[1]
    growth = math.expm1(rate * dt)
    X = np.full(n_paths, x0_value)
    C = np.zeros(n_paths)
    Cd = np.zeros(n_paths)
    min_dc = np.full(n_paths, math.inf)
    min_x = X.copy()
    clamped = np.zeros(n_paths, dtype=np.int64)
    if record:
        tx = np.empty((n_paths, n_cols))
        tphi = np.empty((n_paths, n_steps))
        tc = np.empty((n_paths, n_cols))
        tx[:, 0] = X
        tc[:, 0] = 0.0
    hv_lo = 0.5 * var_low
    hv_hi = 0.5 * var_high
    for k in range(n_steps):
        t = k * dt
        s = stock[:, k]
        i0, wt, j0, wy, cl = _locate(t, np.log(s), surf_dt, y0, dy, nt, nx)
        clamped += cl
        phi = _bilinear(delta, i0, wt, j0, wy)
        z = _bilinear(gamma, i0, wt, j0, wy) * s * s
        g = np.where(z >= 0.0, hv_hi * z, hv_lo * z)
        dc = (g - 0.5 * var[:, k] * z) * dt
        X = X + phi * (stock[:, k + 1] - s) + (X - phi * s) * growth
        if consume:
            X = X - dc
        C = C + dc
        Cd = Cd + dc * math.exp(-rate * t)
        min_dc = np.minimum(min_dc, dc)
        min_x = np.minimum(min_x, X)
        if record:
            tx[:, k + 1] = X
            tphi[:, k] = phi
            tc[:, k + 1] = C
    trace = (tx, tphi, tc) if record else None
    return X, C, Cd, min_dc, min_x, clamped, trace


def feedback_paths(log_s0, z, dt, rate, sig_low, sig_high, high, surf_dt, y0, dy):
    """Log-Euler paths whose volatility is read from a surface control field.

    ``high`` is the full ``(n_time + 1, n_space)`` boolean control field.
    Returns ``(log_s, sigma)`` with shapes ``(P, M + 1)`` and ``(P, M)``.
    """
    n_paths, n_steps = z.shape
    nt = high.shape[0] - 1
    nx = high.shape[1]
    sq = math.sqrt(dt)
    log_s = np.empty((n_paths, n_steps + 1))
    sig = np.empty((n_paths, n_steps))
    log_s[:, 0] = log_s0
    y = np.full(n_paths, log_s0)
    for k in range(n_steps):
        i = min(max(int(math.floor(k * dt / surf_dt + 0.5)), 0), nt)
        j = np.clip(np.floor((y - y0) / dy + 0.5).astype(np.int64), 0, nx - 1)
        s = np.where(high[i, j] != 0, sig_high, sig_low)
        y = y + ((rate - 0.5 * s * s) * dt + s * sq * z[:, k])
        log_s[:, k + 1] = y
        sig[:, k] = s
    return log_s, sig
