"""Compiled numerical core: load-bus Newton solve, full-system derivative,
and the adaptive Runge-Kutta-Fehlberg 4(5) drivers.

Everything here works on packed float64 arrays so numba can compile it;
the friendly dataclass layer lives in devices.py / sim.py. State ordering
is fixed as [w1, d, x, V1, th2, w2, V2, th3, w3, V3] (angles relative to
the machine node, which is the angle reference).
"""

from __future__ import annotations

import numpy as np
from numba import njit

# state vector layout
IW1, ID, IX, IV1, ITH2, IW2, IV2, ITH3, IW3, IV3 = range(10)
NSTATE = 10

# packed parameter layout
(P_WNOM, P_VNOM,
 P_J, P_KD, P_TD, P_KI, P_KV, P_TINV, P_KAWU, P_KP1, P_PNOM1, P_XSAT,
 P_T2, P_KP2, P_KQ2, P_PNOM2, P_QNOM2,
 P_T3, P_KP3, P_KQ3, P_PNOM3, P_QNOM3,
 P_G1, P_B1, P_G2, P_B2, P_G3, P_B3,
 P_GC1, P_BC1, P_GC2, P_BC2, P_GC3, P_BC3) = range(34)
NPARAMS = 34

# aux layout (derived quantities at one time point)
(A_P1, A_P2, A_P3, A_Q1, A_Q2, A_Q3,
 A_VG1, A_VG2, A_VG3, A_V4, A_TH4) = range(11)
NAUX = 11

# status codes
OK = 0
ERR_OMEGA = 1       # w1 <= 0 or a device voltage collapsed
ERR_BUS = 2         # load-bus Newton divergence
ERR_UNDERFLOW = 3   # adaptive step size underflow

BUS_TOL_REL = 1e-9
TWO_PI = 2.0 * np.pi

# Fehlberg 4(5) tableau; the 4th-order solution is propagated and the
# e-row (b5 - b4) weights the embedded error estimate.
_C2, _C3, _C4, _C5, _C6 = 1.0 / 4.0, 3.0 / 8.0, 12.0 / 13.0, 1.0, 1.0 / 2.0
_A21 = 1.0 / 4.0
_A31, _A32 = 3.0 / 32.0, 9.0 / 32.0
_A41, _A42, _A43 = 1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0
_A51, _A52, _A53, _A54 = 439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0
_A61, _A62, _A63, _A64, _A65 = (-8.0 / 27.0, 2.0, -3544.0 / 2565.0,
                                1859.0 / 4104.0, -11.0 / 40.0)
# propagated solution: 5th-order row (local extrapolation); the e-row is
# the 4th/5th difference used for step control
_B1, _B3, _B4, _B5, _B6 = (16.0 / 135.0, 6656.0 / 12825.0,
                           28561.0 / 56430.0, -9.0 / 50.0, 2.0 / 55.0)
_E1, _E3, _E4, _E5, _E6 = (1.0 / 360.0, -128.0 / 4275.0, -2197.0 / 75240.0,
                           1.0 / 50.0, 2.0 / 55.0)

H_MIN = 1e-11
MAX_STEPS = 5_000_000


@njit(cache=True)
def bus_solve(p, pload, qload, V1, V2, V3, th2, th3, bus):
    """Newton iteration for the load-bus unknowns.

    bus[0] = V4, bus[1] = th4 serve as warm start and are updated in place.
    The constraint is injection = -consumption: P4 + pload = 0, Q4 + qload = 0.
    Returns 1 on convergence, -1 on divergence/voltage collapse.
    """
    g1 = p[P_G1]; b1 = p[P_B1]
    g2 = p[P_G2]; b2 = p[P_B2]
    g3 = p[P_G3]; b3 = p[P_B3]
    G44 = g1 + g2 + g3
    B44 = b1 + b2 + b3
    scale = max(1.0, abs(pload), abs(qload))
    V4 = bus[0]
    th4 = bus[1]
    for attempt in range(2):
        if attempt == 1:
            V4 = p[P_VNOM]
            th4 = (th2 + th3) / 3.0
        for _ in range(60):
            d1 = -th4
            d2 = th2 - th4
            d3 = th3 - th4
            c1 = np.cos(d1); s1 = np.sin(d1)
            c2 = np.cos(d2); s2 = np.sin(d2)
            c3 = np.cos(d3); s3 = np.sin(d3)
            sum_p = (V1 * (g1 * c1 - b1 * s1) + V2 * (g2 * c2 - b2 * s2)
                     + V3 * (g3 * c3 - b3 * s3))
            sum_q = (V1 * (g1 * s1 + b1 * c1) + V2 * (g2 * s2 + b2 * c2)
                     + V3 * (g3 * s3 + b3 * c3))
            rP = 3.0 * (G44 * V4 * V4 - V4 * sum_p) + pload
            rQ = 3.0 * (-B44 * V4 * V4 + V4 * sum_q) + qload
            if abs(rP) <= BUS_TOL_REL * scale and abs(rQ) <= BUS_TOL_REL * scale:
                bus[0] = V4
                bus[1] = th4
                return 1
            dP_dV = 3.0 * (2.0 * G44 * V4 - sum_p)
            dP_dt = -3.0 * V4 * sum_q
            dQ_dV = 3.0 * (-2.0 * B44 * V4 + sum_q)
            dQ_dt = -3.0 * V4 * sum_p
            det = dP_dV * dQ_dt - dP_dt * dQ_dV
            if det == 0.0 or not np.isfinite(det):
                break
            V4 -= (rP * dQ_dt - rQ * dP_dt) / det
            th4 -= (dP_dV * rQ - dQ_dV * rP) / det
            if not (1.0 < V4 < 1e5) or not np.isfinite(th4):
                break
    return -1


@njit(cache=True)
def device_powers(p, V1, V2, V3, th2, th3, V4, th4, out6):
    """Injections (P_i, Q_i) at the three device nodes for a solved bus."""
    d1 = -th4
    d2 = th2 - th4
    d3 = th3 - th4
    g1 = p[P_G1]; b1 = p[P_B1]
    g2 = p[P_G2]; b2 = p[P_B2]
    g3 = p[P_G3]; b3 = p[P_B3]
    c = np.cos(d1); s = np.sin(d1)
    out6[0] = 3.0 * (g1 * V1 * V1 - V1 * V4 * (g1 * c + b1 * s))
    out6[3] = 3.0 * (-b1 * V1 * V1 - V1 * V4 * (g1 * s - b1 * c))
    c = np.cos(d2); s = np.sin(d2)
    out6[1] = 3.0 * (g2 * V2 * V2 - V2 * V4 * (g2 * c + b2 * s))
    out6[4] = 3.0 * (-b2 * V2 * V2 - V2 * V4 * (g2 * s - b2 * c))
    c = np.cos(d3); s = np.sin(d3)
    out6[2] = 3.0 * (g3 * V3 * V3 - V3 * V4 * (g3 * c + b3 * s))
    out6[5] = 3.0 * (-b3 * V3 * V3 - V3 * V4 * (g3 * s - b3 * c))


@njit(cache=True)
def grid_voltage_mag(P, Q, V, gc, bc):
    """Magnitude of the grid-side voltage behind a coupling admittance:
    |V - conj(S)/(3 Y conj(V))|, the series voltage drop of the injected
    current over 1/Y."""
    den = 3.0 * (gc * gc + bc * bc) * V
    re = V - (P * gc - Q * bc) / den
    im = (P * bc + Q * gc) / den
    return np.hypot(re, im)


@njit(cache=True)
def rhs(t, y, dy, p, pload, qload, bus, aux, want_aux):
    """Full reduced-system derivative; solves the load bus internally.

    Returns a status code; on OK, dy holds the derivative and bus the
    algebraic solution. With want_aux != 0, aux receives the derived
    injections, grid voltages and bus solution.
    """
    w1 = y[IW1]
    if not (w1 > 0.0) or not np.isfinite(w1):
        return ERR_OMEGA
    V1 = y[IV1]; th2 = y[ITH2]; w2 = y[IW2]; V2 = y[IV2]
    th3 = y[ITH3]; w3 = y[IW3]; V3 = y[IV3]
    if not (V1 > 0.0 and V2 > 0.0 and V3 > 0.0):
        return ERR_OMEGA
    if bus_solve(p, pload, qload, V1, V2, V3, th2, th3, bus) < 0:
        return ERR_BUS
    V4 = bus[0]
    th4 = bus[1]

    g1 = p[P_G1]; b1 = p[P_B1]
    g2 = p[P_G2]; b2 = p[P_B2]
    g3 = p[P_G3]; b3 = p[P_B3]
    d = -th4
    c = np.cos(d); s = np.sin(d)
    P1 = 3.0 * (g1 * V1 * V1 - V1 * V4 * (g1 * c + b1 * s))
    Q1 = 3.0 * (-b1 * V1 * V1 - V1 * V4 * (g1 * s - b1 * c))
    d = th2 - th4
    c = np.cos(d); s = np.sin(d)
    P2 = 3.0 * (g2 * V2 * V2 - V2 * V4 * (g2 * c + b2 * s))
    Q2 = 3.0 * (-b2 * V2 * V2 - V2 * V4 * (g2 * s - b2 * c))
    d = th3 - th4
    c = np.cos(d); s = np.sin(d)
    P3 = 3.0 * (g3 * V3 * V3 - V3 * V4 * (g3 * c + b3 * s))
    Q3 = 3.0 * (-b3 * V3 * V3 - V3 * V4 * (g3 * s - b3 * c))
    Vg1 = grid_voltage_mag(P1, Q1, V1, p[P_GC1], p[P_BC1])

    wnom = p[P_WNOM]
    Vnom = p[P_VNOM]
    x = y[IX]
    xlim = p[P_XSAT]
    satx = min(max(x, -xlim), xlim)
    pinj = p[P_PNOM1] + (wnom - w1) / p[P_KP1] + satx
    kd_over_td = p[P_KD] / p[P_TD]

    dy[IW1] = (-kd_over_td * (w1 + y[ID]) + (pinj - P1) / w1) / p[P_J]
    dy[ID] = -(w1 + y[ID]) / p[P_TD]
    dy[IX] = p[P_KI] * (wnom - w1) + p[P_KAWU] * (satx - x)
    dy[IV1] = (-V1 + Vnom + p[P_KV] * (Vnom - Vg1)) / p[P_TINV]
    dy[ITH2] = w2 - w1
    dy[IW2] = (-w2 + wnom + p[P_KP2] * (p[P_PNOM2] - P2)) / p[P_T2]
    dy[IV2] = (-V2 + Vnom + p[P_KQ2] * (p[P_QNOM2] - Q2)) / p[P_T2]
    dy[ITH3] = w3 - w1
    dy[IW3] = (-w3 + wnom + p[P_KP3] * (p[P_PNOM3] - P3)) / p[P_T3]
    dy[IV3] = (-V3 + Vnom + p[P_KQ3] * (p[P_QNOM3] - Q3)) / p[P_T3]

    if want_aux != 0:
        aux[A_P1] = P1; aux[A_P2] = P2; aux[A_P3] = P3
        aux[A_Q1] = Q1; aux[A_Q2] = Q2; aux[A_Q3] = Q3
        aux[A_VG1] = Vg1
        aux[A_VG2] = grid_voltage_mag(P2, Q2, V2, p[P_GC2], p[P_BC2])
        aux[A_VG3] = grid_voltage_mag(P3, Q3, V3, p[P_GC3], p[P_BC3])
        aux[A_V4] = V4
        aux[A_TH4] = th4
    return OK


@njit(cache=True)
def steady_residual(z, p, pload, qload, out12):
    """Residual of the full steady-state system.

    z = [10 differential states, V4, th4]; out12 = [dy(10), rP, rQ].
    Returns a status code (bus Newton is bypassed: the bus unknowns are
    part of z, so the residual is evaluated directly).
    """
    w1 = z[IW1]
    if not (w1 > 0.0) or not np.isfinite(w1):
        return ERR_OMEGA
    V1 = z[IV1]; th2 = z[ITH2]; w2 = z[IW2]; V2 = z[IV2]
    th3 = z[ITH3]; w3 = z[IW3]; V3 = z[IV3]
    V4 = z[10]; th4 = z[11]
    if not (V1 > 0.0 and V2 > 0.0 and V3 > 0.0 and V4 > 0.0):
        return ERR_OMEGA

    g1 = p[P_G1]; b1 = p[P_B1]
    g2 = p[P_G2]; b2 = p[P_B2]
    g3 = p[P_G3]; b3 = p[P_B3]
    d1 = -th4; d2 = th2 - th4; d3 = th3 - th4
    c1 = np.cos(d1); s1 = np.sin(d1)
    c2 = np.cos(d2); s2 = np.sin(d2)
    c3 = np.cos(d3); s3 = np.sin(d3)
    sum_p = (V1 * (g1 * c1 - b1 * s1) + V2 * (g2 * c2 - b2 * s2)
             + V3 * (g3 * c3 - b3 * s3))
    sum_q = (V1 * (g1 * s1 + b1 * c1) + V2 * (g2 * s2 + b2 * c2)
             + V3 * (g3 * s3 + b3 * c3))
    G44 = g1 + g2 + g3
    B44 = b1 + b2 + b3
    rP = 3.0 * (G44 * V4 * V4 - V4 * sum_p) + pload
    rQ = 3.0 * (-B44 * V4 * V4 + V4 * sum_q) + qload

    pq = np.empty(6)
    device_powers(p, V1, V2, V3, th2, th3, V4, th4, pq)
    Vg1 = grid_voltage_mag(pq[0], pq[3], V1, p[P_GC1], p[P_BC1])

    wnom = p[P_WNOM]
    Vnom = p[P_VNOM]
    x = z[IX]
    xlim = p[P_XSAT]
    satx = min(max(x, -xlim), xlim)
    pinj = p[P_PNOM1] + (wnom - w1) / p[P_KP1] + satx
    kd_over_td = p[P_KD] / p[P_TD]

    out12[IW1] = (-kd_over_td * (w1 + z[ID]) + (pinj - pq[0]) / w1) / p[P_J]
    out12[ID] = -(w1 + z[ID]) / p[P_TD]
    out12[IX] = p[P_KI] * (wnom - w1) + p[P_KAWU] * (satx - x)
    out12[IV1] = (-V1 + Vnom + p[P_KV] * (Vnom - Vg1)) / p[P_TINV]
    out12[ITH2] = w2 - w1
    out12[IW2] = (-w2 + wnom + p[P_KP2] * (p[P_PNOM2] - pq[1])) / p[P_T2]
    out12[IV2] = (-V2 + Vnom + p[P_KQ2] * (p[P_QNOM2] - pq[4])) / p[P_T2]
    out12[ITH3] = w3 - w1
    out12[IW3] = (-w3 + wnom + p[P_KP3] * (p[P_PNOM3] - pq[2])) / p[P_T3]
    out12[IV3] = (-V3 + Vnom + p[P_KQ3] * (p[P_QNOM3] - pq[5])) / p[P_T3]
    out12[10] = rP
    out12[11] = rQ
    return OK


@njit(cache=True)
def hermite_point(y0, y1, f0, f1, s, h):
    """Cubic Hermite interpolation within one accepted step, s in [0, 1]."""
    oms = 1.0 - s
    h00 = (1.0 + 2.0 * s) * oms * oms
    h10 = s * oms * oms
    h01 = s * s * (3.0 - 2.0 * s)
    h11 = s * s * (s - 1.0)
    return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


@njit(cache=True)
def rkf45_generic(f, p, t0, y0, t_end, rtol, atol, hmax, cap):
    """Plain adaptive RKF45 on an arbitrary compiled RHS f(t, y, dy, p).

    Records every accepted step. Returns (status, n, ts, ys); ts/ys are
    preallocated to cap entries and filled up to n.
    """
    n_dim = y0.shape[0]
    y = y0.copy()
    dy = np.empty(n_dim)
    k1 = np.empty(n_dim); k2 = np.empty(n_dim); k3 = np.empty(n_dim)
    k4 = np.empty(n_dim); k5 = np.empty(n_dim); k6 = np.empty(n_dim)
    ytmp = np.empty(n_dim)
    ynew = np.empty(n_dim)
    ts = np.empty(cap)
    ys = np.empty((cap, n_dim))
    t = t0
    n = 0
    ts[n] = t
    ys[n] = y
    n += 1
    h = min(1e-3 * max(1.0, abs(t_end - t0)), hmax, t_end - t0)
    st = f(t, y, k1, p)
    if st != OK:
        return st, n, ts, ys
    steps = 0
    while t < t_end - 1e-14 * max(1.0, abs(t_end)):
        steps += 1
        if steps > MAX_STEPS:
            return ERR_UNDERFLOW, n, ts, ys
        if t + h > t_end:
            h = t_end - t
        failed = False
        for i in range(n_dim):
            ytmp[i] = y[i] + h * _A21 * k1[i]
        if f(t + _C2 * h, ytmp, k2, p) != OK:
            failed = True
        if not failed:
            for i in range(n_dim):
                ytmp[i] = y[i] + h * (_A31 * k1[i] + _A32 * k2[i])
            if f(t + _C3 * h, ytmp, k3, p) != OK:
                failed = True
        if not failed:
            for i in range(n_dim):
                ytmp[i] = y[i] + h * (_A41 * k1[i] + _A42 * k2[i] + _A43 * k3[i])
            if f(t + _C4 * h, ytmp, k4, p) != OK:
                failed = True
        if not failed:
            for i in range(n_dim):
                ytmp[i] = y[i] + h * (_A51 * k1[i] + _A52 * k2[i] + _A53 * k3[i]
                                      + _A54 * k4[i])
            if f(t + _C5 * h, ytmp, k5, p) != OK:
                failed = True
        if not failed:
            for i in range(n_dim):
                ytmp[i] = y[i] + h * (_A61 * k1[i] + _A62 * k2[i] + _A63 * k3[i]
                                      + _A64 * k4[i] + _A65 * k5[i])
            if f(t + _C6 * h, ytmp, k6, p) != OK:
                failed = True
        if failed:
            h *= 0.5
            if h < H_MIN:
                return ERR_UNDERFLOW, n, ts, ys
            continue
        errnorm = 0.0
        for i in range(n_dim):
            ynew[i] = y[i] + h * (_B1 * k1[i] + _B3 * k3[i] + _B4 * k4[i]
                                  + _B5 * k5[i] + _B6 * k6[i])
            e = h * (_E1 * k1[i] + _E3 * k3[i] + _E4 * k4[i] + _E5 * k5[i]
                     + _E6 * k6[i])
            sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
            en = abs(e) / sc
            if en > errnorm:
                errnorm = en
        if errnorm > 1.0:
            h *= max(0.1, 0.9 * errnorm ** -0.2)
            if h < H_MIN:
                return ERR_UNDERFLOW, n, ts, ys
            continue
        t += h
        for i in range(n_dim):
            y[i] = ynew[i]
        st = f(t, y, k1, p)
        if st != OK:
            return st, n, ts, ys
        if n < cap:
            ts[n] = t
            ys[n] = y
            n += 1
        errnorm = max(errnorm, 1e-16)
        h = min(hmax, h * min(5.0, max(0.2, 0.9 * errnorm ** -0.2)))
    return OK, n, ts, ys


# output slots of simulate_kernel
(O_STATUS, O_TEND, O_DFPEAK, O_DVPEAK, O_VIOLATED, O_NREC, O_RELAXED,
 O_NSTEPS) = range(8)
NOUT = 8


@njit(cache=True)
def _monitor_freq(w, dev, fnom, f_ref, f_low, f_high, relax_band, tau,
                  edge_side, departed, reentry, prev_f, peaks):
    """Per-sample frequency bookkeeping for device dev; returns violation.

    The relaxation edge is fixed by the perturbation direction
    (edge_side 1: a load increase sags the frequencies, so the moments
    are upward crossings of fnom - relax_band; edge_side 2 mirrors for a
    decrease). The stamp is overwritten on every crossing, so the
    recorded moment is the last one; excursions on the opposite side of
    the band create neither departures nor moments.
    """
    f = w / TWO_PI
    a = abs(f - f_ref[dev])
    if a > peaks[dev]:
        peaks[dev] = a
    viol = f < f_low or f > f_high
    if edge_side == 1:
        lo = fnom - relax_band
        if departed[dev] == 0:
            if f < lo:
                departed[dev] = 1
        elif prev_f[dev] < lo <= f:
            reentry[dev] = tau
    else:
        hi = fnom + relax_band
        if departed[dev] == 0:
            if f > hi:
                departed[dev] = 1
        elif prev_f[dev] > hi >= f:
            reentry[dev] = tau
    prev_f[dev] = f
    return viol


@njit(cache=True)
def simulate_kernel(y, bus, p, pl1, ql1, pl2, ql2,
                    t_start, t0, t_max, rtol, atol_vec, hmax,
                    f_low, f_high, v_low, v_high, relax_band, edge_side,
                    confirm_window, sample_dt, record, stop_violation,
                    traj_t, traj_y, traj_aux,
                    f_ref, vg_ref, reentry, departed, fpeaks, out):
    """Integrate the perturbation experiment, monitoring the transient.

    Segment A runs [t_start, t0] at the pre-jump load without monitoring;
    the reference frequencies/voltages are taken at t0 (pre-jump), then
    segment B applies the post-jump load. Frequencies are monitored on the
    sample_dt grid via cubic Hermite interpolation, voltages at accepted
    step endpoints. With record != 0, rows (cadence grid from t0 on) are
    written to traj_t / traj_y / traj_aux. Integration always ends at a
    confirmed relaxation (all devices back inside the relaxation band and
    staying there for confirm_window) or at t_max; with stop_violation != 0
    it also ends at the first band violation.

    y and bus are updated in place to the final state. out receives
    [status, t_end, df_peak, dv_peak, violated, n_rec, relaxed, n_steps].
    """
    dy = np.empty(NSTATE)
    k1 = np.empty(NSTATE); k2 = np.empty(NSTATE); k3 = np.empty(NSTATE)
    k4 = np.empty(NSTATE); k5 = np.empty(NSTATE); k6 = np.empty(NSTATE)
    knew = np.empty(NSTATE)
    ytmp = np.empty(NSTATE)
    ynew = np.empty(NSTATE)
    yint = np.empty(NSTATE)
    aux = np.empty(NAUX)
    rec_aux = np.empty(NAUX)
    rec_bus = np.empty(2)
    fnom = p[P_WNOM] / TWO_PI
    cap = traj_t.shape[0]
    prev_f = np.empty(3)

    for dev in range(3):
        departed[dev] = 0
        reentry[dev] = -1.0
        fpeaks[dev] = 0.0
    out[O_STATUS] = OK
    out[O_DFPEAK] = 0.0
    out[O_DVPEAK] = 0.0
    out[O_VIOLATED] = 0.0
    out[O_NREC] = 0.0
    out[O_RELAXED] = 0.0
    n_rec = 0
    n_steps = 0

    # ---------------- segment A: settle toward the pre-jump state --------
    t = t_start
    h = min(1e-3, hmax, max(t0 - t_start, 1e-6))
    st = rhs(t, y, k1, p, pl1, ql1, bus, aux, 0)
    if st != OK:
        out[O_STATUS] = st
        out[O_TEND] = t
        return
    while t < t0 - 1e-12:
        n_steps += 1
        if n_steps > MAX_STEPS:
            out[O_STATUS] = ERR_UNDERFLOW
            out[O_TEND] = t
            return
        if t + h > t0:
            h = t0 - t
        failed = False
        for i in range(NSTATE):
            ytmp[i] = y[i] + h * _A21 * k1[i]
        if rhs(t + _C2 * h, ytmp, k2, p, pl1, ql1, bus, aux, 0) != OK:
            failed = True
        if not failed:
            for i in range(NSTATE):
                ytmp[i] = y[i] + h * (_A31 * k1[i] + _A32 * k2[i])
            if rhs(t + _C3 * h, ytmp, k3, p, pl1, ql1, bus, aux, 0) != OK:
                failed = True
        if not failed:
            for i in range(NSTATE):
                ytmp[i] = y[i] + h * (_A41 * k1[i] + _A42 * k2[i] + _A43 * k3[i])
            if rhs(t + _C4 * h, ytmp, k4, p, pl1, ql1, bus, aux, 0) != OK:
                failed = True
        if not failed:
            for i in range(NSTATE):
                ytmp[i] = y[i] + h * (_A51 * k1[i] + _A52 * k2[i]
                                      + _A53 * k3[i] + _A54 * k4[i])
            if rhs(t + _C5 * h, ytmp, k5, p, pl1, ql1, bus, aux, 0) != OK:
                failed = True
        if not failed:
            for i in range(NSTATE):
                ytmp[i] = y[i] + h * (_A61 * k1[i] + _A62 * k2[i] + _A63 * k3[i]
                                      + _A64 * k4[i] + _A65 * k5[i])
            if rhs(t + _C6 * h, ytmp, k6, p, pl1, ql1, bus, aux, 0) != OK:
                failed = True
        if failed:
            h *= 0.5
            if h < H_MIN:
                out[O_STATUS] = ERR_UNDERFLOW
                out[O_TEND] = t
                return
            continue
        errnorm = 0.0
        for i in range(NSTATE):
            ynew[i] = y[i] + h * (_B1 * k1[i] + _B3 * k3[i] + _B4 * k4[i]
                                  + _B5 * k5[i] + _B6 * k6[i])
            e = h * (_E1 * k1[i] + _E3 * k3[i] + _E4 * k4[i] + _E5 * k5[i]
                     + _E6 * k6[i])
            sc = atol_vec[i] + rtol * max(abs(y[i]), abs(ynew[i]))
            en = abs(e) / sc
            if en > errnorm:
                errnorm = en
        if errnorm > 1.0:
            h *= max(0.1, 0.9 * errnorm ** -0.2)
            if h < H_MIN:
                out[O_STATUS] = ERR_UNDERFLOW
                out[O_TEND] = t
                return
            continue
        t += h
        for i in range(NSTATE):
            y[i] = ynew[i]
        st = rhs(t, y, k1, p, pl1, ql1, bus, aux, 0)
        if st != OK:
            out[O_STATUS] = st
            out[O_TEND] = t
            return
        errnorm = max(errnorm, 1e-16)
        h = min(hmax, h * min(5.0, max(0.2, 0.9 * errnorm ** -0.2)))

    # ---------------- references at t0 (pre-jump load) -------------------
    st = rhs(t0, y, k1, p, pl1, ql1, bus, aux, 1)
    if st != OK:
        out[O_STATUS] = st
        out[O_TEND] = t0
        return
    f_ref[0] = y[IW1] / TWO_PI
    f_ref[1] = y[IW2] / TWO_PI
    f_ref[2] = y[IW3] / TWO_PI
    prev_f[0] = f_ref[0]
    prev_f[1] = f_ref[1]
    prev_f[2] = f_ref[2]
    vg_ref[0] = aux[A_VG1]
    vg_ref[1] = aux[A_VG2]
    vg_ref[2] = aux[A_VG3]
    vg_ref[3] = aux[A_V4]
    if record != 0 and n_rec < cap:
        traj_t[n_rec] = t0
        for i in range(NSTATE):
            traj_y[n_rec, i] = y[i]
        for i in range(NAUX):
            traj_aux[n_rec, i] = aux[i]
        n_rec += 1

    # ---------------- segment B: post-jump load with monitors ------------
    t = t0
    h = min(1e-3, hmax)
    dvpeak = 0.0
    violated = False
    relaxed = False
    settled_since = -1.0
    m_next = 1
    rec_bus[0] = bus[0]
    rec_bus[1] = bus[1]
    st = rhs(t, y, k1, p, pl2, ql2, bus, aux, 1)
    if st != OK:
        out[O_STATUS] = st
        out[O_TEND] = t
        return
    # the algebraic jump at t0+ already counts toward the voltage peaks
    for j in range(4):
        if j == 0:
            v = aux[A_VG1]
        elif j == 1:
            v = aux[A_VG2]
        elif j == 2:
            v = aux[A_VG3]
        else:
            v = aux[A_V4]
        dv = abs(v - vg_ref[j])
        if dv > dvpeak:
            dvpeak = dv
        if v < v_low or v > v_high:
            violated = True

    while t < t_max - 1e-12:
        n_steps += 1
        if n_steps > MAX_STEPS:
            out[O_STATUS] = ERR_UNDERFLOW
            break
        if t + h > t_max:
            h = t_max - t
        failed = False
        for i in range(NSTATE):
            ytmp[i] = y[i] + h * _A21 * k1[i]
        if rhs(t + _C2 * h, ytmp, k2, p, pl2, ql2, bus, aux, 0) != OK:
            failed = True
        if not failed:
            for i in range(NSTATE):
                ytmp[i] = y[i] + h * (_A31 * k1[i] + _A32 * k2[i])
            if rhs(t + _C3 * h, ytmp, k3, p, pl2, ql2, bus, aux, 0) != OK:
                failed = True
        if not failed:
            for i in range(NSTATE):
                ytmp[i] = y[i] + h * (_A41 * k1[i] + _A42 * k2[i] + _A43 * k3[i])
            if rhs(t + _C4 * h, ytmp, k4, p, pl2, ql2, bus, aux, 0) != OK:
                failed = True
        if not failed:
            for i in range(NSTATE):
                ytmp[i] = y[i] + h * (_A51 * k1[i] + _A52 * k2[i]
                                      + _A53 * k3[i] + _A54 * k4[i])
            if rhs(t + _C5 * h, ytmp, k5, p, pl2, ql2, bus, aux, 0) != OK:
                failed = True
        if not failed:
            for i in range(NSTATE):
                ytmp[i] = y[i] + h * (_A61 * k1[i] + _A62 * k2[i] + _A63 * k3[i]
                                      + _A64 * k4[i] + _A65 * k5[i])
            if rhs(t + _C6 * h, ytmp, k6, p, pl2, ql2, bus, aux, 0) != OK:
                failed = True
        if not failed:
            errnorm = 0.0
            for i in range(NSTATE):
                ynew[i] = y[i] + h * (_B1 * k1[i] + _B3 * k3[i] + _B4 * k4[i]
                                      + _B5 * k5[i] + _B6 * k6[i])
                e = h * (_E1 * k1[i] + _E3 * k3[i] + _E4 * k4[i] + _E5 * k5[i]
                         + _E6 * k6[i])
                sc = atol_vec[i] + rtol * max(abs(y[i]), abs(ynew[i]))
                en = abs(e) / sc
                if en > errnorm:
                    errnorm = en
            if errnorm > 1.0:
                failed = True
                h *= max(0.1, 0.9 * errnorm ** -0.2)
                if h < H_MIN:
                    out[O_STATUS] = ERR_UNDERFLOW
                    break
                continue
            # endpoint derivative doubles as the Hermite slope and next k1
            st = rhs(t + h, ynew, knew, p, pl2, ql2, bus, aux, 1)
            if st != OK:
                failed = True
        if failed:
            h *= 0.5
            if h < H_MIN:
                out[O_STATUS] = ERR_UNDERFLOW
                break
            continue

        t_new = t + h
        # frequency monitoring on the cadence grid (anchored at t0)
        tau = t0 + m_next * sample_dt
        while tau <= t_new + 1e-15:
            s = (tau - t) / h
            if s > 1.0:
                s = 1.0
            for dev in range(3):
                widx = IW1 if dev == 0 else (IW2 if dev == 1 else IW3)
                w = hermite_point(y[widx], ynew[widx], k1[widx], knew[widx], s, h)
                if _monitor_freq(w, dev, fnom, f_ref, f_low, f_high,
                                 relax_band, tau, edge_side, departed,
                                 reentry, prev_f, fpeaks):
                    violated = True
            if record != 0 and n_rec < cap:
                for i in range(NSTATE):
                    yint[i] = hermite_point(y[i], ynew[i], k1[i], knew[i], s, h)
                if rhs(tau, yint, dy, p, pl2, ql2, rec_bus, rec_aux, 1) == OK:
                    traj_t[n_rec] = tau
                    for i in range(NSTATE):
                        traj_y[n_rec, i] = yint[i]
                    for i in range(NAUX):
                        traj_aux[n_rec, i] = rec_aux[i]
                    n_rec += 1
            m_next += 1
            tau = t0 + m_next * sample_dt
        # endpoint frequency checks (grid points need not hit endpoints)
        for dev in range(3):
            widx = IW1 if dev == 0 else (IW2 if dev == 1 else IW3)
            if _monitor_freq(ynew[widx], dev, fnom, f_ref, f_low, f_high,
                             relax_band, t_new, edge_side, departed,
                             reentry, prev_f, fpeaks):
                violated = True
        # endpoint voltage checks
        for j in range(4):
            if j == 0:
                v = aux[A_VG1]
            elif j == 1:
                v = aux[A_VG2]
            elif j == 2:
                v = aux[A_VG3]
            else:
                v = aux[A_V4]
            dv = abs(v - vg_ref[j])
            if dv > dvpeak:
                dvpeak = dv
            if v < v_low or v > v_high:
                violated = True

        t = t_new
        for i in range(NSTATE):
            y[i] = ynew[i]
            k1[i] = knew[i]
        errnorm = max(errnorm, 1e-16)
        h = min(hmax, h * min(5.0, max(0.2, 0.9 * errnorm ** -0.2)))

        if violated and stop_violation != 0:
            break
        # confirmed-relaxation exit
        settled = True
        for dev in range(3):
            widx = IW1 if dev == 0 else (IW2 if dev == 1 else IW3)
            f_end = y[widx] / TWO_PI
            if abs(f_end - fnom) > relax_band:
                settled = False
            if departed[dev] != 0 and reentry[dev] < 0.0:
                settled = False
        if settled:
            if settled_since < 0.0:
                settled_since = t
            elif t - settled_since >= confirm_window:
                relaxed = True
                break
        else:
            settled_since = -1.0

    dfp = fpeaks[0]
    if fpeaks[1] > dfp:
        dfp = fpeaks[1]
    if fpeaks[2] > dfp:
        dfp = fpeaks[2]
    out[O_TEND] = t
    out[O_DFPEAK] = dfp
    out[O_DVPEAK] = dvpeak
    out[O_VIOLATED] = 1.0 if violated else 0.0
    out[O_NREC] = float(n_rec)
    out[O_RELAXED] = 1.0 if relaxed else 0.0
    out[O_NSTEPS] = float(n_steps)
