# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Mirrors :mod:`uncvol._kernels_py` call for call."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, fabs, floor, log, sqrt, INFINITY

cnp.import_array()


cdef inline double _absmax(double[::1] u, Py_ssize_t n) noexcept nogil:
    cdef double m = 0.0
    cdef Py_ssize_t j
    for j in range(n):
        if fabs(u[j]) > m:
            m = fabs(u[j])
    return m


cdef inline void _select(double[::1] u, const double[::1] gl, const double[::1] gc,
                         const double[::1] gu, double floor_, unsigned char[::1] out,
                         Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t j
    cdef double g
    for j in range(m):
        g = gl[j] * u[j] + gc[j] * u[j + 1] + gu[j] * u[j + 2]
        out[j] = 1 if g >= -floor_ else 0


def bsb_sweep(const double[::1] x, const double[::1] terminal,
              const double[::1] gl, const double[::1] gc, const double[::1] gu,
              const double[::1] dl, const double[::1] dc, const double[::1] du,
              double dt, int n_time, double rate, double var_low, double var_high,
              double noise_scale, double tie_tol, double policy_tol, int max_iters,
              bint bdf2):
    cdef Py_ssize_t nx = x.shape[0]
    cdef Py_ssize_t m = nx - 2
    values_arr = np.empty((n_time + 1, nx))
    high_arr = np.empty((n_time + 1, m), dtype=np.uint8)
    iters_arr = np.zeros(n_time, dtype=np.int32)
    cdef double[:, ::1] values = values_arr
    cdef unsigned char[:, ::1] high = high_arr
    cdef int[::1] iters = iters_arr

    cdef double[::1] u = np.empty(nx)
    cdef double[::1] prev = np.empty(nx)
    cdef double[::1] rhs_full = np.empty(nx)
    cdef double[::1] cp = np.empty(m)
    cdef double[::1] dp = np.empty(m)
    cdef unsigned char[::1] hi = np.empty(m, dtype=np.uint8)
    cdef unsigned char[::1] new_hi = np.empty(m, dtype=np.uint8)

    cdef bint degenerate = var_low == var_high
    cdef double rdt = rate * dt
    cdef Py_ssize_t n, j, it
    cdef double a0, an, b0, bn, c0, v, lo, md, up, denom, resid, fl, umax
    cdef bint same, have_prev
    cdef int status = 0
    cdef Py_ssize_t fail_step = -1
    cdef double fail_resid = 0.0

    with nogil:
        for j in range(nx):
            values[n_time, j] = terminal[j]
            u[j] = terminal[j]
        fl = tie_tol + noise_scale * _absmax(u, nx)
        _select(u, gl, gc, gu, fl, hi, m)
        for j in range(m):
            high[n_time, j] = hi[j]

        n = n_time - 1
        while n >= 0:
            a0 = (values[n + 1, 1] - values[n + 1, 0]) / (x[1] - x[0])
            an = (values[n + 1, nx - 1] - values[n + 1, nx - 2]) / (x[nx - 1] - x[nx - 2])
            if bdf2 and n < n_time - 1:
                c0 = 1.5
                for j in range(nx):
                    rhs_full[j] = 2.0 * values[n + 1, j] - 0.5 * values[n + 2, j]
                b0 = a0 * x[0] + (2.0 * (values[n + 1, 0] - a0 * x[0])
                                  - 0.5 * (values[n + 2, 0] - a0 * x[0])) / (1.5 + rdt)
                bn = an * x[nx - 1] + (2.0 * (values[n + 1, nx - 1] - an * x[nx - 1])
                                       - 0.5 * (values[n + 2, nx - 1] - an * x[nx - 1])) / (1.5 + rdt)
            else:
                c0 = 1.0
                for j in range(nx):
                    rhs_full[j] = values[n + 1, j]
                b0 = a0 * x[0] + (values[n + 1, 0] - a0 * x[0]) / (1.0 + rdt)
                bn = an * x[nx - 1] + (values[n + 1, nx - 1] - an * x[nx - 1]) / (1.0 + rdt)

            status = 1
            have_prev = False
            resid = INFINITY
            it = 0
            while it < max_iters:
                it += 1
                # Thomas forward sweep over interior rows
                for j in range(m):
                    v = var_high if hi[j] else var_low
                    lo = -dt * (0.5 * v * gl[j] + dl[j])
                    md = c0 - dt * (0.5 * v * gc[j] + dc[j] - rate)
                    up = -dt * (0.5 * v * gu[j] + du[j])
                    if j == 0:
                        denom = md
                        cp[j] = up / denom
                        dp[j] = (rhs_full[1] - lo * b0) / denom
                    else:
                        denom = md - lo * cp[j - 1]
                        cp[j] = up / denom
                        if j == m - 1:
                            dp[j] = (rhs_full[j + 1] - up * bn - lo * dp[j - 1]) / denom
                        else:
                            dp[j] = (rhs_full[j + 1] - lo * dp[j - 1]) / denom
                u[0] = b0
                u[nx - 1] = bn
                u[m] = dp[m - 1]
                j = m - 2
                while j >= 0:
                    u[j + 1] = dp[j] - cp[j] * u[j + 2]
                    j -= 1

                umax = _absmax(u, nx)
                _select(u, gl, gc, gu, tie_tol + noise_scale * umax, new_hi, m)
                same = True
                for j in range(m):
                    if new_hi[j] != hi[j]:
                        same = False
                    hi[j] = new_hi[j]
                if degenerate or same:
                    status = 0
                    break
                if have_prev:
                    resid = 0.0
                    for j in range(nx):
                        if fabs(u[j] - prev[j]) > resid:
                            resid = fabs(u[j] - prev[j])
                    if resid <= policy_tol * (umax if umax > 1.0 else 1.0):
                        status = 0
                        break
                for j in range(nx):
                    prev[j] = u[j]
                have_prev = True

            iters[n] = <int>it
            if status:
                fail_step = n
                fail_resid = resid
                break
            for j in range(nx):
                values[n, j] = u[j]
            for j in range(m):
                high[n, j] = hi[j]
            n -= 1

    return values_arr, high_arr, iters_arr, status, fail_step, fail_resid


def hedge_paths(const double[:, ::1] stock, const double[:, ::1] var, double dt, double rate,
                double x0_value, double surf_dt, double y0, double dy,
                const double[:, ::1] delta, const double[:, ::1] gamma,
                double var_low, double var_high, bint consume, bint record):
    cdef Py_ssize_t n_paths = stock.shape[0]
    cdef Py_ssize_t n_steps = stock.shape[1] - 1
    cdef Py_ssize_t nt = delta.shape[0] - 1
    cdef Py_ssize_t nx = delta.shape[1]
    wealth_arr = np.empty(n_paths)
    cons_arr = np.empty(n_paths)
    consd_arr = np.empty(n_paths)
    mindc_arr = np.empty(n_paths)
    minx_arr = np.empty(n_paths)
    clamped_arr = np.zeros(n_paths, dtype=np.int64)
    cdef double[::1] wealth = wealth_arr
    cdef double[::1] cons = cons_arr
    cdef double[::1] consd = consd_arr
    cdef double[::1] mindc = mindc_arr
    cdef double[::1] minx = minx_arr
    cdef long long[::1] clamped = clamped_arr
    if record:
        tx_arr = np.empty((n_paths, n_steps + 1))
        tphi_arr = np.empty((n_paths, n_steps))
        tc_arr = np.empty((n_paths, n_steps + 1))
    else:
        tx_arr = np.empty((1, 1))
        tphi_arr = np.empty((1, 1))
        tc_arr = np.empty((1, 1))
    cdef double[:, ::1] tx = tx_arr
    cdef double[:, ::1] tphi = tphi_arr
    cdef double[:, ::1] tc = tc_arr

    cdef double growth = expm1(rate * dt)
    cdef double hv_lo = 0.5 * var_low
    cdef double hv_hi = 0.5 * var_high
    cdef Py_ssize_t p, k, i0, j0
    cdef double X, C, Cd, mdc, mx, t, s, ti, wt, yj, wy, phi, gm, z, g, dcons, a, b
    cdef long long ncl

    with nogil:
        for p in range(n_paths):
            X = x0_value
            C = 0.0
            Cd = 0.0
            mdc = INFINITY
            mx = X
            ncl = 0
            if record:
                tx[p, 0] = X
                tc[p, 0] = 0.0
            for k in range(n_steps):
                t = k * dt
                s = stock[p, k]
                ti = t / surf_dt
                i0 = <Py_ssize_t>floor(ti)
                if i0 < 0:
                    i0 = 0
                if i0 > nt - 1:
                    i0 = nt - 1
                wt = ti - i0
                if wt < 0.0:
                    wt = 0.0
                if wt > 1.0:
                    wt = 1.0
                yj = (log(s) - y0) / dy
                j0 = <Py_ssize_t>floor(yj)
                if j0 < 0:
                    j0 = 0
                if j0 > nx - 2:
                    j0 = nx - 2
                wy = yj - j0
                if wy < 0.0 or wy > 1.0:
                    ncl += 1
                    wy = 0.0 if wy < 0.0 else 1.0
                a = delta[i0, j0] * (1.0 - wy) + delta[i0, j0 + 1] * wy
                b = delta[i0 + 1, j0] * (1.0 - wy) + delta[i0 + 1, j0 + 1] * wy
                phi = a * (1.0 - wt) + b * wt
                a = gamma[i0, j0] * (1.0 - wy) + gamma[i0, j0 + 1] * wy
                b = gamma[i0 + 1, j0] * (1.0 - wy) + gamma[i0 + 1, j0 + 1] * wy
                gm = a * (1.0 - wt) + b * wt
                z = gm * s * s
                g = hv_hi * z if z >= 0.0 else hv_lo * z
                dcons = (g - 0.5 * var[p, k] * z) * dt
                X = X + phi * (stock[p, k + 1] - s) + (X - phi * s) * growth
                if consume:
                    X = X - dcons
                C = C + dcons
                Cd = Cd + dcons * exp(-rate * t)
                if dcons < mdc:
                    mdc = dcons
                if X < mx:
                    mx = X
                if record:
                    tx[p, k + 1] = X
                    tphi[p, k] = phi
                    tc[p, k + 1] = C
            wealth[p] = X
            cons[p] = C
            consd[p] = Cd
            mindc[p] = mdc
            minx[p] = mx
            clamped[p] = ncl

    trace = (tx_arr, tphi_arr, tc_arr) if record else None
    return wealth_arr, cons_arr, consd_arr, mindc_arr, minx_arr, clamped_arr, trace


def feedback_paths(double log_s0, const double[:, ::1] z, double dt, double rate,
                   double sig_low, double sig_high, const unsigned char[:, ::1] high,
                   double surf_dt, double y0, double dy):
    cdef Py_ssize_t n_paths = z.shape[0]
    cdef Py_ssize_t n_steps = z.shape[1]
    cdef Py_ssize_t nt = high.shape[0] - 1
    cdef Py_ssize_t nx = high.shape[1]
    log_s_arr = np.empty((n_paths, n_steps + 1))
    sig_arr = np.empty((n_paths, n_steps))
    cdef double[:, ::1] log_s = log_s_arr
    cdef double[:, ::1] sig = sig_arr
    cdef double sq = sqrt(dt)
    cdef Py_ssize_t p, k, i, j
    cdef double y, s

    with nogil:
        for p in range(n_paths):
            y = log_s0
            log_s[p, 0] = y
            for k in range(n_steps):
                i = <Py_ssize_t>floor(k * dt / surf_dt + 0.5)
                if i < 0:
                    i = 0
                if i > nt:
                    i = nt
                j = <Py_ssize_t>floor((y - y0) / dy + 0.5)
                if j < 0:
                    j = 0
                if j > nx - 1:
                    j = nx - 1
                s = sig_high if high[i, j] else sig_low
                y = y + ((rate - 0.5 * s * s) * dt + s * sq * z[p, k])
                log_s[p, k + 1] = y
                sig[p, k] = s
    return log_s_arr, sig_arr
