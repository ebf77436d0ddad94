"""Compiled inner loops: right-hand sides and a Dormand-Prince 5(4) stepper.

Parameter rows follow ``model.PARAM_NAMES``:
p1..p9 (0-8), alpha 9, lam 10, mu_E 11, mu_B 12, H_m 13, b 14, N 15, tau 16.
States are always length 6; the four-population model uses slots 0-3 only.
"""

from __future__ import annotations

import numpy as np
from numba import njit

MODEL6 = 0
MODEL4 = 1

OK = 0
STIFF = 1
DIVERGED = 2
MAXSTEPS = 3
CAPACITY = 4

# Dormand-Prince coefficients.
C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0,
                           49.0 / 176.0, -5103.0 / 18656.0)
B1, B3, B4, B5, B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
E1, E3, E4, E5, E6, E7 = (71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0,
                          -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)
# Fourth-order continuous extension (Hairer, Norsett & Wanner, DOPRI5).
D1, D3, D4 = -12715105075.0 / 11282082432.0, 87487479700.0 / 32700410799.0, -10690763975.0 / 1880347072.0
D5, D6, D7 = 701980252875.0 / 199316789632.0, -1453857185.0 / 822651844.0, 69997945.0 / 29380423.0


@njit(cache=True, nogil=True, inline='always')
def rhs6_into(y, p, out):
    B, E, Ti, Tu, Hu, Hi = y[0], y[1], y[2], y[3], y[4], y[5]
    p1, p2, p3, p4, p5, p6, p7, p8, p9 = p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8]
    alpha, lam, mu_E, mu_B, H_m = p[9], p[10], p[11], p[12], p[13]
    out[0] = -p1 * E * B - p2 * B * Tu - p8 * B * Hu - mu_B * B
    out[1] = -mu_E * E + alpha * (Ti + Hi) + p4 * E * B - p5 * E * Ti - p6 * E * Hi
    out[2] = p2 * B * Tu - p3 * Ti * E
    out[3] = lam * Tu - p2 * B * Tu - p3 * Tu * E
    out[4] = p7 * Hu * (1.0 - (Hu + Hi + Tu + Ti) / H_m) - p8 * B * Hu
    out[5] = p8 * B * Hu - p9 * E * Hi


@njit(cache=True, nogil=True, inline='always')
def rhs4_into(y, p, infusion, out):
    B, E, Ti, Tu = y[0], y[1], y[2], y[3]
    p1, p2, p3, p4, p5 = p[0], p[1], p[2], p[3], p[4]
    alpha, lam, mu_E, mu_B = p[9], p[10], p[11], p[12]
    out[0] = -p1 * E * B - p2 * B * Tu - mu_B * B + infusion
    out[1] = -mu_E * E + alpha * Ti + p4 * E * B - p5 * E * Ti
    out[2] = p2 * B * Tu - p3 * Ti * E
    out[3] = lam * Tu - p2 * B * Tu
    out[4] = 0.0
    out[5] = 0.0


@njit(cache=True, nogil=True, inline='always')
def rhs_into(model, y, p, infusion, out):
    if model == MODEL6:
        rhs6_into(y, p, out)
    else:
        rhs4_into(y, p, infusion, out)


@njit(cache=True, nogil=True, inline='always')
def _dp_step(model, y, k1, h, p, infusion, ynew, knew, err, k2, k3, k4, k5, k6, tmp):
    """One Dormand-Prince step; fills ``ynew``, ``knew`` (FSAL) and ``err``."""
    n = y.shape[0]
    for i in range(n):
        tmp[i] = y[i] + h * A21 * k1[i]
    rhs_into(model, tmp, p, infusion, k2)
    for i in range(n):
        tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
    rhs_into(model, tmp, p, infusion, k3)
    for i in range(n):
        tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
    rhs_into(model, tmp, p, infusion, k4)
    for i in range(n):
        tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
    rhs_into(model, tmp, p, infusion, k5)
    for i in range(n):
        tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
    rhs_into(model, tmp, p, infusion, k6)
    for i in range(n):
        ynew[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])
    rhs_into(model, ynew, p, infusion, knew)
    for i in range(n):
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * knew[i])


@njit(cache=True, nogil=True)
def _initial_step(y, f, rtol, atol, span, hmax):
    d0 = 0.0
    d1 = 0.0
    n = y.shape[0]
    for i in range(n):
        sc = atol + rtol * abs(y[i])
        d0 += (y[i] / sc) ** 2
        d1 += (f[i] / sc) ** 2
    d0 = np.sqrt(d0 / n)
    d1 = np.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h = 1e-6 * max(span, 1.0)
    else:
        h = 0.01 * d0 / d1
    h = min(h, span, hmax)
    return max(h, 1e-12 * max(span, 1.0))


@njit(cache=True, nogil=True)
def segment(model, p, infusion, ta, tb, y, f, h, rtol, atol, hmax, fixed_h,
            record, ts, ys, fs, ds, n0, stats, work):
    """Integrate ``y`` (with derivative ``f``) from ``ta`` to exactly ``tb``.

    ``y`` and ``f`` are updated in place. When ``record`` is true each accepted
    step is appended to ``ts``/``ys``/``fs`` starting at row ``n0``, with the
    step's dense-output correction in ``ds`` (zero after a clamp, which
    reduces the interpolant to cubic Hermite).
    ``stats`` accumulates [accepted, rejected, rhs evaluations, most negative
    pre-clamp value]. Returns ``(status, rows written, last step size)``.
    """
    n = y.shape[0]
    ynew = work[0]
    knew = work[1]
    err = work[2]
    k2 = work[3]
    k3 = work[4]
    k4 = work[5]
    k5 = work[6]
    k6 = work[7]
    tmp = work[8]
    k1 = work[9]
    t = ta
    rows = n0
    cap = ts.shape[0]
    span = tb - ta
    if span <= 0.0:
        return OK, rows, h
    if fixed_h > 0.0:
        nsteps = int(np.ceil(span / fixed_h - 1e-9))
        hstep = span / nsteps
        for s in range(nsteps):
            _dp_step(model, y, f, hstep, p, infusion, ynew, knew, err, k2, k3, k4, k5, k6, tmp)
            stats[2] += 6.0
            stats[0] += 1.0
            t = ta + (s + 1) * hstep
            if s == nsteps - 1:
                t = tb
            finite = True
            for i in range(n):
                if not np.isfinite(ynew[i]):
                    finite = False
            if not finite:
                return DIVERGED, rows, hstep
            if record:
                for i in range(n):
                    k1[i] = f[i]
            for i in range(n):
                y[i] = ynew[i]
                f[i] = knew[i]
            if record:
                if rows >= cap:
                    return CAPACITY, rows, hstep
                ts[rows] = t
                for i in range(n):
                    ys[rows, i] = y[i]
                    fs[rows, i] = f[i]
                    ds[rows, i] = hstep * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i]
                                           + D6 * k6[i] + D7 * knew[i])
                rows += 1
        return OK, rows, hstep

    if h <= 0.0:
        h = _initial_step(y, f, rtol, atol, span, hmax)
    h = min(h, hmax)
    accepted = 0
    while t < tb:
        last = False
        if t + h >= tb or (tb - (t + h)) < 1e-12 * max(abs(tb), 1.0):
            h = tb - t
            last = True
        if h < 1e-10 * max(abs(t), 1.0):
            return STIFF, rows, h
        _dp_step(model, y, f, h, p, infusion, ynew, knew, err, k2, k3, k4, k5, k6, tmp)
        stats[2] += 6.0
        enorm = 0.0
        finite = True
        for i in range(n):
            if not np.isfinite(ynew[i]):
                finite = False
                break
            sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
            enorm += (err[i] / sc) ** 2
        if not finite:
            # Treat as a failed step first; diverge only if h cannot shrink.
            h *= 0.2
            stats[1] += 1.0
            if h < 1e-10 * max(abs(t), 1.0):
                return DIVERGED, rows, h
            continue
        enorm = np.sqrt(enorm / n)
        if enorm <= 1.0:
            t = tb if last else t + h
            for i in range(n):
                k1[i] = f[i]
            clamped = False
            for i in range(n):
                v = ynew[i]
                if v < 0.0:
                    if v < stats[3]:
                        stats[3] = v
                    v = 0.0
                    clamped = True
                y[i] = v
            if clamped:
                rhs_into(model, y, p, infusion, f)
                stats[2] += 1.0
            else:
                for i in range(n):
                    f[i] = knew[i]
            stats[0] += 1.0
            accepted += 1
            if record:
                if rows >= cap:
                    return CAPACITY, rows, h
                ts[rows] = t
                for i in range(n):
                    ys[rows, i] = y[i]
                    fs[rows, i] = f[i]
                    if clamped:
                        ds[rows, i] = 0.0
                    else:
                        ds[rows, i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i]
                                           + D6 * k6[i] + D7 * knew[i])
                rows += 1
            if enorm == 0.0:
                fac = 5.0
            else:
                fac = min(5.0, max(0.2, 0.9 * enorm ** -0.2))
            if not last:
                h = min(h * fac, hmax)
            if accepted > 10_000_000:
                return MAXSTEPS, rows, h
        else:
            stats[1] += 1.0
            h *= max(0.2, 0.9 * enorm ** -0.2)
    return OK, rows, h


@njit(cache=True, nogil=True)
def final_tumor(model, p, y0, t_end, rtol, atol, h0, hmax, fixed_h, stats):
    """Simulate one patient from t=0 to ``t_end``; return ``(status, T_i + T_u)``.

    MODEL6 applies the dose train ``b`` at ``m * tau`` for ``m < N``.
    MODEL4 instead infuses at rate ``b / tau`` over ``[0, N * tau)``.
    """
    y = y0.copy()
    f = np.empty(6)
    work = np.empty((10, 6))
    dummy_t = np.empty(0)
    dummy_y = np.empty((0, 6))
    b = p[14]
    nd = int(p[15])
    tau = p[16]
    h = h0
    t = 0.0
    if model == MODEL6:
        m = 0
        while m < nd and m * tau <= t_end:
            tm = m * tau
            rhs_into(model, y, p, 0.0, f)
            st, _, h = segment(model, p, 0.0, t, tm, y, f, h, rtol, atol, hmax, fixed_h,
                               False, dummy_t, dummy_y, dummy_y, dummy_y, 0, stats, work)
            if st != OK:
                return st, np.nan
            t = tm
            y[0] += b
            m += 1
        rhs_into(model, y, p, 0.0, f)
        st, _, h = segment(model, p, 0.0, t, t_end, y, f, h, rtol, atol, hmax, fixed_h,
                           False, dummy_t, dummy_y, dummy_y, dummy_y, 0, stats, work)
        if st != OK:
            return st, np.nan
    else:
        t_stop = min(nd * tau, t_end)
        rate = b / tau
        if t_stop > 0.0:
            rhs_into(model, y, p, rate, f)
            st, _, h = segment(model, p, rate, 0.0, t_stop, y, f, h, rtol, atol, hmax, fixed_h,
                               False, dummy_t, dummy_y, dummy_y, dummy_y, 0, stats, work)
            if st != OK:
                return st, np.nan
        rhs_into(model, y, p, 0.0, f)
        st, _, h = segment(model, p, 0.0, t_stop, t_end, y, f, h, rtol, atol, hmax, fixed_h,
                           False, dummy_t, dummy_y, dummy_y, dummy_y, 0, stats, work)
        if st != OK:
            return st, np.nan
    return OK, y[2] + y[3]


@njit(cache=True, nogil=True)
def final_tumor_batch(model, params, y0s, t_ends, rtol, atol, h0, hmax, fixed_h, out, status):
    stats = np.zeros(4)
    for r in range(params.shape[0]):
        st, v = final_tumor(model, params[r], y0s[r], t_ends[r], rtol, atol, h0, hmax, fixed_h, stats)
        out[r] = v
        status[r] = st
