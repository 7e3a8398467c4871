"""Hot numeric kernels.

Every function here is plain numpy that numba can compile; ``_jit.jit`` picks
the path at import time. Parameters travel as packed tuples so the compiled
signatures stay small:

``mp``  model   ``(lam, C, gamma_r, gamma_d, p, N)`` with ``C = M / N[None, :]``
``cp``  control ``(alpha1, alpha2, theta_sup, s_lo, s_hi, i_lo, i_hi, floor)``
``op``  observer ``(beta, eps, Ct, zfloor, ztol, project)`` with ``Ct = C / gamma_d[None, :]``

States are flat: ``x = [S(n), I(n), R(n), D(n)]`` and
``z = [z11, z21, z31, z12, ..., z3n]``.
"""

import math

import numpy as np

from ._jit import jit

MODE_NONE = 0
MODE_LINEARIZING = 1
MODE_SATURATED = 2
MODE_SCHEDULE = 3

EV_SWITCH_OFF = 0
EV_SWITCH_ON = 1
EV_ERADICATION = 2
EV_LEFT_DOMAIN = 3

ST_HORIZON = 0
ST_ERADICATED = 1
ST_LEFT_DOMAIN = 2
ST_NONFINITE = 3
ST_EXCURSION = 4

FOUR_OVER_PI = 4.0 / math.pi


# --------------------------------------------------------------------- plant


@jit
def force(x, C):
    """Per-class infection pressure ``sum_j C[k, j] I_j``."""
    n = C.shape[0]
    return C @ np.ascontiguousarray(x[n:2 * n])


@jit
def lift_f(x, mp):
    lam, C, gr, gd, p, N = mp
    n = C.shape[0]
    S = x[:n]
    I = x[n:2 * n]
    inf = lam * S * force(x, C)
    out = np.empty(2 * n)
    out[:n] = inf - (gr + gd) * I
    out[n:] = -inf
    return out


@jit
def sird_rhs(x, theta, mp):
    lam, C, gr, gd, p, N = mp
    n = C.shape[0]
    S = x[:n]
    I = x[n:2 * n]
    inf = lam * S * force(x, C)
    vac = p * theta * S
    dx = np.empty(4 * n)
    dx[:n] = -inf - vac
    dx[n:2 * n] = inf - (gr + gd) * I
    dx[2 * n:3 * n] = gr * I + vac
    dx[3 * n:] = gd * I
    return dx


@jit
def in_domain(x, C, s_floor, a_floor):
    n = C.shape[0]
    a = force(x, C)
    for k in range(n):
        if x[k] < s_floor or a[k] < a_floor:
            return False
    return True


# ------------------------------------------------------------------- control


@jit
def lie_terms(x, mp):
    """Return ``(L_f^2 h, L_g L_f h, f)`` for the output ``h = I``."""
    lam, C, gr, gd, p, N = mp
    n = C.shape[0]
    S = x[:n]
    f = lift_f(x, mp)
    fk = np.ascontiguousarray(f[:n])
    a = force(x, C)
    lf2h = lam * S * (C @ fk) - (gr + gd) * fk + lam * f[n:] * a
    lglfh = -p * lam * S * a
    return lf2h, lglfh, f


@jit
def theta_linearizing(x, alpha1, alpha2, mp):
    n = mp[1].shape[0]
    lf2h, lglfh, f = lie_terms(x, mp)
    v = -alpha2 * f[:n] - alpha1 * x[n:2 * n]
    return (v - lf2h) / lglfh


@jit
def q_blend(s, i, s_lo, s_hi, i_lo, i_hi):
    if s >= s_hi and i >= i_hi:
        return 1.0
    diag = (i_hi - i_lo) / (s_hi - s_lo) * (s - s_lo) + i_lo
    if i <= diag and i < i_hi:
        return FOUR_OVER_PI * math.atan((i - i_lo) / (i_hi - i_lo))
    return FOUR_OVER_PI * math.atan((s - s_lo) / (s_hi - s_lo))


@jit
def theta_bar(x, k, cp, mp):
    """Capped linearizing law for class ``k``; caller guarantees the B area."""
    alpha1, alpha2, tsup, s_lo, s_hi, i_lo, i_hi, floor = cp
    n = mp[1].shape[0]
    a = force(x, mp[1])
    if a[k] < floor or x[k] < floor:
        # raw law diverges to +inf here; the cap is the continuous limit
        return tsup
    lf2h, lglfh, f = lie_terms(x, mp)
    v = -alpha2[k] * f[k] - alpha1[k] * x[n + k]
    tk = (v - lf2h[k]) / lglfh[k]
    if tk <= tsup:
        return tk
    return tsup


@jit
def theta_sat(x, cp, mp):
    alpha1, alpha2, tsup, s_lo, s_hi, i_lo, i_hi, floor = cp
    n = mp[1].shape[0]
    out = np.zeros(n)
    active = False
    for k in range(n):
        if x[k] >= s_lo[k] and x[n + k] >= i_lo[k]:
            active = True
    if not active:
        return out
    a = force(x, mp[1])
    lf2h, lglfh, f = lie_terms(x, mp)
    for k in range(n):
        s = x[k]
        i = x[n + k]
        if s >= s_lo[k] and i >= i_lo[k]:
            if a[k] < floor or s < floor:
                tb = tsup
            else:
                v = -alpha2[k] * f[k] - alpha1[k] * i
                tk = (v - lf2h[k]) / lglfh[k]
                tb = tk if tk <= tsup else tsup
            out[k] = q_blend(s, i, s_lo[k], s_hi[k], i_lo[k], i_hi[k]) * tb
    return out


@jit
def b_area(x, s_lo, i_lo):
    n = s_lo.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    for k in range(n):
        out[k] = x[k] >= s_lo[k] and x[n + k] >= i_lo[k]
    return out


@jit
def schedule_value(t, sched_t, sched_v):
    idx = -1
    for j in range(sched_t.shape[0]):
        if sched_t[j] <= t:
            idx = j
    if idx < 0:
        return np.zeros(sched_v.shape[1])
    return sched_v[idx].copy()


@jit
def control(x, t, mode, mp, cp, sched_t, sched_v):
    if mode == MODE_LINEARIZING:
        return theta_linearizing(x, cp[0], cp[1], mp)
    if mode == MODE_SATURATED:
        return theta_sat(x, cp, mp)
    if mode == MODE_SCHEDULE:
        return schedule_value(t, sched_t, sched_v)
    return np.zeros(mp[1].shape[0])


# ------------------------------------------------------------------ observer


@jit
def to_z(x, mp):
    n = mp[1].shape[0]
    gd = mp[3]
    f = lift_f(x, mp)
    z = np.empty(3 * n)
    for k in range(n):
        z[3 * k] = x[3 * n + k]
        z[3 * k + 1] = gd[k] * x[n + k]
        z[3 * k + 2] = gd[k] * f[k]
    return z


@jit
def z_sums(z, Ct):
    n = Ct.shape[0]
    z2 = np.empty(n)
    z3 = np.empty(n)
    for k in range(n):
        z2[k] = z[3 * k + 1]
        z3[k] = z[3 * k + 2]
    return Ct @ z2, Ct @ z3


@jit
def from_z(z, mp, Ct, zfloor, s_fallback):
    lam, C, gr, gd, p, N = mp
    n = C.shape[0]
    s2, s3 = z_sums(z, Ct)
    D = np.empty(n)
    I = np.empty(n)
    S = np.empty(n)
    for k in range(n):
        D[k] = z[3 * k]
        I[k] = z[3 * k + 1] / gd[k]
        if s2[k] >= zfloor[k]:
            S[k] = (z[3 * k + 2] / gd[k] + (gr[k] + gd[k]) * I[k]) / (lam * s2[k])
        else:
            S[k] = s_fallback[k]
    return D, I, S


@jit
def in_z(z, mp, Ct, ztol):
    lam, C, gr, gd, p, N = mp
    n = C.shape[0]
    s2, s3 = z_sums(z, Ct)
    for k in range(n):
        c = gr[k] + gd[k]
        sc = gd[k] * N[k]
        z1 = z[3 * k]
        z2 = z[3 * k + 1]
        z3 = z[3 * k + 2]
        if z1 < -ztol * N[k] or z1 > N[k] * (1.0 + ztol):
            return False
        if z2 < -ztol * sc or z2 > sc * (1.0 + ztol):
            return False
        slack = ztol * sc * (1.0 + c + lam * (C[k] * N).sum())
        if z3 < -c * z2 - slack:
            return False
        if z3 > N[k] * gd[k] * lam * s2[k] - c * z2 + slack:
            return False
    return True


@jit
def phi(z, u, mp, Ct, zfloor):
    lam, C, gr, gd, p, N = mp
    n = C.shape[0]
    s2, s3 = z_sums(z, Ct)
    out = np.zeros(n)
    for k in range(n):
        if s2[k] < zfloor[k]:
            continue
        c = gr[k] + gd[k]
        z2 = z[3 * k + 1]
        z3 = z[3 * k + 2]
        out[k] = (z3 + c * z2) * (-lam * s2[k] - p[k] * u[k] + s3[k] / s2[k] - c) + c * c * z2
    return out


@jit
def project_z(z, mp, Ct):
    """Nearest point of Z coordinatewise: clamp z1, z2, then z3 given z2."""
    lam, C, gr, gd, p, N = mp
    n = C.shape[0]
    out = z.copy()
    for k in range(n):
        out[3 * k] = min(max(z[3 * k], 0.0), N[k])
        out[3 * k + 1] = min(max(z[3 * k + 1], 0.0), gd[k] * N[k])
    s2, s3 = z_sums(out, Ct)
    for k in range(n):
        c = gr[k] + gd[k]
        z2 = out[3 * k + 1]
        lo = -c * z2
        hi = N[k] * gd[k] * lam * s2[k] - c * z2
        out[3 * k + 2] = min(max(z[3 * k + 2], lo), hi)
    return out


@jit
def output_u(zh, mp, cp, op):
    beta, eps, Ct, zfloor, ztol, project = op
    n = Ct.shape[0]
    if not in_z(zh, mp, Ct, ztol):
        return np.zeros(n)
    D, I, S = from_z(zh, mp, Ct, zfloor, np.zeros(n))
    x = np.empty(4 * n)
    x[:n] = S
    x[n:2 * n] = I
    x[2 * n:3 * n] = mp[5] - S - I - D
    x[3 * n:] = D
    return theta_sat(x, cp, mp)


@jit
def observer_rhs(zh, y, u, mp, op):
    beta, eps, Ct, zfloor, ztol, project = op
    n = Ct.shape[0]
    if project:
        ph = phi(project_z(zh, mp, Ct), u, mp, Ct, zfloor)
    else:
        ph = phi(zh, u, mp, Ct, zfloor)
    dz = np.empty(3 * n)
    for k in range(n):
        e = y[k] - zh[3 * k]
        dz[3 * k] = zh[3 * k + 1] + beta[k, 0] / eps * e
        dz[3 * k + 1] = zh[3 * k + 2] + beta[k, 1] / eps ** 2 * e
        dz[3 * k + 2] = ph[k] + beta[k, 2] / eps ** 3 * e
    return dz


@jit
def coupled_rhs(X, mp, cp, op):
    n = mp[1].shape[0]
    x = X[:4 * n]
    zh = X[4 * n:]
    u = output_u(zh, mp, cp, op)
    dX = np.empty(7 * n)
    dX[:4 * n] = sird_rhs(x, u, mp)
    dX[4 * n:] = observer_rhs(zh, np.ascontiguousarray(x[3 * n:]), u, mp, op)
    return dX, u


# ------------------------------------------------------------------ stepping


@jit
def plant_step(x, t, h, mode, mp, cp, sched_t, sched_v):
    tm = t + 0.5 * h
    k1 = sird_rhs(x, control(x, tm, mode, mp, cp, sched_t, sched_v), mp)
    x2 = x + 0.5 * h * k1
    k2 = sird_rhs(x2, control(x2, tm, mode, mp, cp, sched_t, sched_v), mp)
    x3 = x + 0.5 * h * k2
    k3 = sird_rhs(x3, control(x3, tm, mode, mp, cp, sched_t, sched_v), mp)
    x4 = x + h * k3
    k4 = sird_rhs(x4, control(x4, tm, mode, mp, cp, sched_t, sched_v), mp)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@jit
def coupled_step(X, h, mp, cp, op):
    k1, u = coupled_rhs(X, mp, cp, op)
    k2, u = coupled_rhs(X + 0.5 * h * k1, mp, cp, op)
    k3, u = coupled_rhs(X + 0.5 * h * k2, mp, cp, op)
    k4, u = coupled_rhs(X + h * k3, mp, cp, op)
    return X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@jit
def _check_box(xn, N, n, clip_rtol):
    """Clip roundoff excursions out of B in place.

    Returns ``(n_clipped, bad_index)``; ``bad_index >= 0`` flags an excursion
    larger than ``clip_rtol * N_k`` (or a non-finite entry, as ``-2 - idx``).
    """
    nclip = 0
    for j in range(4 * n):
        if not np.isfinite(xn[j]):
            return nclip, -2 - j
    for c in range(4):
        for k in range(n):
            j = c * n + k
            tol = clip_rtol * N[k]
            v = xn[j]
            if v < 0.0:
                if v < -tol:
                    return nclip, j
                xn[j] = 0.0
                nclip += 1
            elif v > N[k]:
                if v > N[k] + tol:
                    return nclip, j
                xn[j] = N[k]
                nclip += 1
    return nclip, -1


@jit
def run_plant(x0, t0, h, nsteps, stride, mode, mp, cp, sched_t, sched_v,
              stop_erad, clip_rtol, s_floor, a_floor, track_switches, ev_cap):
    n = mp[1].shape[0]
    N = mp[5]
    nrec = nsteps // stride + 2
    ts = np.empty(nrec)
    xs = np.empty((nrec, 4 * n))
    ths = np.empty((nrec, n))
    ev_t = np.empty(ev_cap)
    ev_kind = np.empty(ev_cap, dtype=np.int64)
    ev_cls = np.empty(ev_cap, dtype=np.int64)
    ev_x = np.empty((ev_cap, 4 * n))
    nev = 0
    overflow = False

    x = x0.copy()
    t = t0
    ts[0] = t
    xs[0] = x
    ths[0] = control(x, t + 0.5 * h, mode, mp, cp, sched_t, sched_v)
    rec = 1
    pred = b_area(x, cp[3], cp[5])
    status = ST_HORIZON
    bad = -1
    nclip = 0

    for i in range(nsteps):
        xn = plant_step(x, t, h, mode, mp, cp, sched_t, sched_v)
        tn = t0 + (i + 1) * h
        if mode == MODE_LINEARIZING and not in_domain(xn, mp[1], s_floor, a_floor):
            if nev < ev_cap:
                ev_t[nev] = t
                ev_kind[nev] = EV_LEFT_DOMAIN
                ev_cls[nev] = -1
                ev_x[nev] = x
                nev += 1
            status = ST_LEFT_DOMAIN
            break
        c, bad = _check_box(xn, N, n, clip_rtol)
        nclip += c
        if bad != -1:
            status = ST_NONFINITE if bad <= -2 else ST_EXCURSION
            ts[rec] = tn
            xs[rec] = xn
            ths[rec] = np.full(n, np.nan)
            rec += 1
            break
        if track_switches:
            newpred = b_area(xn, cp[3], cp[5])
            for k in range(n):
                if newpred[k] != pred[k]:
                    if nev < ev_cap:
                        ev_t[nev] = t
                        ev_kind[nev] = EV_SWITCH_ON if newpred[k] else EV_SWITCH_OFF
                        ev_cls[nev] = k
                        ev_x[nev] = x
                        nev += 1
                    else:
                        overflow = True
            pred = newpred
        xprev = x
        x = xn
        t = tn
        erad = stop_erad and x[n:2 * n].sum() < 1.0
        if erad:
            if nev < ev_cap:
                ev_t[nev] = t - h
                ev_kind[nev] = EV_ERADICATION
                ev_cls[nev] = -1
                ev_x[nev] = xprev
                nev += 1
            status = ST_ERADICATED
        if erad or (i + 1) % stride == 0 or i == nsteps - 1:
            ts[rec] = t
            xs[rec] = x
            ths[rec] = control(x, t + 0.5 * h, mode, mp, cp, sched_t, sched_v)
            rec += 1
        if erad:
            break

    if status == ST_LEFT_DOMAIN and ts[rec - 1] != t:
        ts[rec] = t
        xs[rec] = x
        ths[rec] = control(x, t + 0.5 * h, mode, mp, cp, sched_t, sched_v)
        rec += 1
    return (ts[:rec], xs[:rec], ths[:rec], status, bad, nclip,
            ev_t[:nev], ev_kind[:nev], ev_cls[:nev], ev_x[:nev], overflow)


@jit
def run_coupled(X0, t0, h, nsteps, stride, mp, cp, op, stop_erad, clip_rtol,
                track_switches, ev_cap):
    n = mp[1].shape[0]
    N = mp[5]
    nrec = nsteps // stride + 2
    ts = np.empty(nrec)
    Xs = np.empty((nrec, 7 * n))
    us = np.empty((nrec, n))
    ev_t = np.empty(ev_cap)
    ev_kind = np.empty(ev_cap, dtype=np.int64)
    ev_cls = np.empty(ev_cap, dtype=np.int64)
    ev_x = np.empty((ev_cap, 7 * n))
    nev = 0
    overflow = False

    X = X0.copy()
    t = t0
    ts[0] = t
    Xs[0] = X
    us[0] = output_u(np.ascontiguousarray(X[4 * n:]), mp, cp, op)
    rec = 1
    pred = b_area(X, cp[3], cp[5])
    status = ST_HORIZON
    bad = -1
    nclip = 0

    for i in range(nsteps):
        Xn = coupled_step(X, h, mp, cp, op)
        tn = t0 + (i + 1) * h
        xn = Xn[:4 * n]
        for j in range(4 * n, 7 * n):
            if not np.isfinite(Xn[j]):
                bad = -2 - j
        if bad == -1:
            c, bad = _check_box(xn, N, n, clip_rtol)
            nclip += c
        if bad != -1:
            status = ST_NONFINITE if bad <= -2 else ST_EXCURSION
            ts[rec] = tn
            Xs[rec] = Xn
            us[rec] = np.full(n, np.nan)
            rec += 1
            break
        Xn[:4 * n] = xn
        if track_switches:
            newpred = b_area(Xn, cp[3], cp[5])
            for k in range(n):
                if newpred[k] != pred[k]:
                    if nev < ev_cap:
                        ev_t[nev] = t
                        ev_kind[nev] = EV_SWITCH_ON if newpred[k] else EV_SWITCH_OFF
                        ev_cls[nev] = k
                        ev_x[nev] = X
                        nev += 1
                    else:
                        overflow = True
            pred = newpred
        Xprev = X
        X = Xn
        t = tn
        erad = stop_erad and X[n:2 * n].sum() < 1.0
        if erad:
            if nev < ev_cap:
                ev_t[nev] = t - h
                ev_kind[nev] = EV_ERADICATION
                ev_cls[nev] = -1
                ev_x[nev] = Xprev
                nev += 1
            status = ST_ERADICATED
        if erad or (i + 1) % stride == 0 or i == nsteps - 1:
            ts[rec] = t
            Xs[rec] = X
            us[rec] = output_u(np.ascontiguousarray(X[4 * n:]), mp, cp, op)
            rec += 1
        if erad:
            break
    return (ts[:rec], Xs[:rec], us[:rec], status, bad, nclip,
            ev_t[:nev], ev_kind[:nev], ev_cls[:nev], ev_x[:nev], overflow)


# ------------------------------------------------------------------- batches


@jit
def theta_sat_batch(xs, cp, mp):
    m = xs.shape[0]
    n = mp[1].shape[0]
    out = np.empty((m, n))
    for r in range(m):
        out[r] = theta_sat(np.ascontiguousarray(xs[r]), cp, mp)
    return out


@jit
def theta_linearizing_batch(xs, alpha1, alpha2, mp):
    m = xs.shape[0]
    n = mp[1].shape[0]
    out = np.empty((m, n))
    for r in range(m):
        out[r] = theta_linearizing(np.ascontiguousarray(xs[r]), alpha1, alpha2, mp)
    return out


@jit
def theta_bar_batch(xs, k, cp, mp):
    m = xs.shape[0]
    out = np.empty(m)
    for r in range(m):
        out[r] = theta_bar(np.ascontiguousarray(xs[r]), k, cp, mp)
    return out


@jit
def q_blend_batch(s, i, s_lo, s_hi, i_lo, i_hi):
    m = s.shape[0]
    out = np.empty(m)
    for r in range(m):
        out[r] = q_blend(s[r], i[r], s_lo, s_hi, i_lo, i_hi)
    return out


@jit
def phi_batch(zs, us, mp, Ct, zfloor):
    m = zs.shape[0]
    n = Ct.shape[0]
    out = np.empty((m, n))
    for r in range(m):
        out[r] = phi(np.ascontiguousarray(zs[r]), np.ascontiguousarray(us[r]), mp, Ct, zfloor)
    return out
