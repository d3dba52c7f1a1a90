"""Compiled kernels for the lazy decomposition tree.

A sample is tracked as (x, y, lo, hi): the point and the interval of the standard
pair currently containing it, in the lifted frame of x. The pair's curve is
replaced locally by the reference curve through the point, which differs from
any standard pair through it by O(Y'^{-3/2}) in slope; all geometric quantities
(critical windows, image extents, cut points) are computed on that curve with
cancellation-free differences relative to the point.

Step outcomes: STANDARD (one step into a standard piece), STANDBY (two steps,
through a stand-by pair), INVALID (the image lies in Z), BELOW (point under y*).
"""

import math

import numpy as np
from numba import njit

from .core_map import _step

STANDARD, STANDBY, INVALID, BELOW = 0, 1, 2, 3
TWO_PI = 2.0 * math.pi

# packed critical constants: K1, K2, K2_bar, K1_hat, K2_hat, delta, cell width, tol
CP_LEN = 8


def pack_critical(cp, cell_width, tol=4e-16):
    return np.array([cp.K1, cp.K2, cp.K2_bar, cp.K1_hat, cp.K2_hat, cp.delta, cell_width, tol])


@njit(cache=True)
def _yp(y, g, c):
    return c * g * y ** (g - 1.0)


@njit(cache=True)
def _pdiff(base, d, g, c):
    return c * base ** g * math.expm1(g * math.log1p(d / base))


@njit(cache=True)
def _ishift(base, t, g, c):
    return base * math.expm1(math.log1p(t / (c * base ** g)) / g)


# ---------------------------------------------------------------------------
# reference curve through (x, y): psi(s) = 2A cos s + v + ishift(v, s - x)

@njit(cache=True)
def _psi_d(s, x, v, A, g, c):
    return 2.0 * A * (math.cos(s) - math.cos(x)) + _ishift(v, s - x, g, c)


@njit(cache=True)
def _h0(s, x, y, v, A, g, c):
    w = v + _ishift(v, s - x, g, c)
    ps = y + _psi_d(s, x, v, A, g, c)
    return -2.0 * A * math.sin(s) + 1.0 / _yp(w, g, c) + 1.0 / _yp(ps, g, c)


@njit(cache=True)
def _t_d(s, x, y, v, A, g, c):
    """Image x-offset F(s, psi(s)) - F(x, y) along the curve."""
    return (s - x) + _pdiff(y, _psi_d(s, x, v, A, g, c), g, c)


@njit(cache=True)
def _product(s, x, y, v, x1, A, g, c):
    """(|h0 h1| Y', |h0| Y'^{1/2}) at the curve point over s."""
    pd = _psi_d(s, x, v, A, g, c)
    ps = y + pd
    X1 = x1 + (s - x) + _pdiff(y, pd, g, c)
    y1 = ps + 2.0 * A * math.cos(X1)
    d0 = _yp(ps, g, c)
    w = v + _ishift(v, s - x, g, c)
    h0 = -2.0 * A * math.sin(s) + 1.0 / _yp(w, g, c) + 1.0 / d0
    h1 = -2.0 * A * math.sin(X1) + 1.0 / d0 + 1.0 / _yp(y1, g, c)
    return abs(h0 * h1) * d0, abs(h0) * math.sqrt(d0)


@njit(cache=True)
def _y_min(lo, hi, x, y, v, A, g, c):
    m = min(y + _psi_d(lo, x, v, A, g, c), y + _psi_d(hi, x, v, A, g, c))
    k = math.ceil((lo - math.pi) / TWO_PI)
    s = math.pi + TWO_PI * k
    while s <= hi:
        m = min(m, y + _psi_d(s, x, v, A, g, c))
        s += TWO_PI
    return m


@njit(cache=True)
def _y_range(lo, hi, x, y, v, A, g, c):
    """Approximate min and max of psi over [lo, hi] (endpoints and cos extrema)."""
    a = y + _psi_d(lo, x, v, A, g, c)
    b = y + _psi_d(hi, x, v, A, g, c)
    mn, mx = min(a, b), max(a, b)
    k = math.ceil(lo / math.pi)
    s = math.pi * k
    while s <= hi:
        val = y + _psi_d(s, x, v, A, g, c)
        mn = min(mn, val)
        mx = max(mx, val)
        s += math.pi
    return mn, mx


# ---------------------------------------------------------------------------
# root finding (bisection on specialised residuals)

@njit(cache=True)
def _resid(kind, s, x, y, v, x1, A, g, c, target):
    if kind == 0:      # h0 = 0
        return _h0(s, x, y, v, A, g, c)
    if kind == 1:      # |h0| Y'^{1/2} = target
        ps = y + _psi_d(s, x, v, A, g, c)
        return abs(_h0(s, x, y, v, A, g, c)) * math.sqrt(_yp(ps, g, c)) - target
    if kind == 2:      # x1 + t_d(s) = target
        return x1 + _t_d(s, x, y, v, A, g, c) - target
    # kind 3: product = target
    return _product(s, x, y, v, x1, A, g, c)[0] - target


@njit(cache=True)
def _bisect(kind, a, b, x, y, v, x1, A, g, c, target, tol):
    """Bracketed root of the residual on [a, b] (Illinois regula falsi)."""
    fa = _resid(kind, a, x, y, v, x1, A, g, c, target)
    fb = _resid(kind, b, x, y, v, x1, A, g, c, target)
    if fa == 0.0:
        return a
    if fb == 0.0 or (fa > 0) == (fb > 0):
        return b
    side = 0
    for _ in range(200):
        if abs(b - a) <= tol * (1.0 + abs(a)):
            break
        m = (a * fb - b * fa) / (fb - fa)
        if not (min(a, b) < m < max(a, b)):
            m = 0.5 * (a + b)
            if m == a or m == b:
                break
        fm = _resid(kind, m, x, y, v, x1, A, g, c, target)
        if fm == 0.0:
            return m
        if (fm > 0) == (fb > 0):
            b, fb = m, fm
            if side == -1:
                fa *= 0.5
            side = -1
        else:
            a, fa = m, fm
            if side == 1:
                fb *= 0.5
            side = 1
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# cutting an image range into partition cells

@njit(cache=True)
def cut_piece(X, a, b, w, delta):
    """Standard piece containing X when [a, b] is cut at multiples of w.

    Interior cells are kept; a leftover end piece no longer than delta/4 is
    merged into its neighbour (first the low end, then the high end).
    Returns (lo, hi, n_pieces, merged_low, merged_high).
    """
    ja = math.floor(a / w)
    jb = math.ceil(b / w) - 1
    if jb < ja:
        jb = ja
    n = jb - ja + 1
    if n == 1:
        return a, b, 1, False, False
    first_len = (ja + 1) * w - a
    last_len = b - jb * w
    m_lo = first_len <= 0.25 * delta
    m_hi = last_len <= 0.25 * delta and (n - (1 if m_lo else 0)) >= 2
    # edges e_i = (ja + i) w for i = 1..n-1; e_1 removed if m_lo, e_{n-1} if m_hi
    i0 = math.floor(X / w) - ja
    if i0 < 0:
        i0 = 0
    if i0 > n - 1:
        i0 = n - 1
    il = i0
    while il >= 1 and ((il == 1 and m_lo) or (il == n - 1 and m_hi)):
        il -= 1
    ir = i0 + 1
    while ir <= n - 1 and ((ir == 1 and m_lo) or (ir == n - 1 and m_hi)):
        ir += 1
    lo = a if il == 0 else (ja + il) * w
    hi = b if ir >= n else (ja + ir) * w
    return lo, hi, n, m_lo, m_hi


# ---------------------------------------------------------------------------
# Gamma* geometry of the current pair

@njit(cache=True)
def _gamma_star(x, y, v, x1, lo, hi, mp, cpk):
    """Critical part of the pair [lo, hi] through (x, y).

    Returns (has_c1, z, g_lo, g_hi, far_lo, far_hi, near_lo, near_hi) where
    [g_lo, g_hi] is Gamma* (C1 window plus absorbed pieces) and, for each long
    outside component, the image range kept for cutting:
    left component -> [far_lo, near_lo] in image coordinates (sorted later),
    right component -> [near_hi, far_hi]. NaN marks an absent component.
    """
    A, g, c = mp[0], mp[1], mp[2]
    K1, w, tol = cpk[0], cpk[6], cpk[7]
    nan = np.nan
    kk = math.floor((lo - 0.3) / math.pi) + 1
    kpi = kk * math.pi
    if kpi > hi + 0.3:
        return False, nan, nan, nan, nan, nan, nan, nan
    # quick rejection: |h0| >= 2A|sin(s)| - 2/Y'(y_low) exceeds K1 Y'^{-1/2} far from k pi
    dist = max(lo - kpi, kpi - hi, 0.0)
    if dist > 0.0:
        y_low = max(y - 4.0 * A - 1.0, 0.5 * y)
        d_low = _yp(y_low, g, c)
        arg = (K1 / math.sqrt(d_low) + 2.0 / d_low) / (2.0 * A)
        if arg < 0.5 and dist > 1.5 * math.asin(arg):
            return False, nan, nan, nan, nan, nan, nan, nan
    z = _bisect(0, kpi - 0.1, kpi + 0.1, x, y, v, x1, A, g, c, 0.0, tol)
    cl = _bisect(1, z - 0.7, z, x, y, v, x1, A, g, c, K1, tol)
    cr = _bisect(1, z, z + 0.7, x, y, v, x1, A, g, c, K1, tol)
    if cr <= lo or cl >= hi:
        return False, z, nan, nan, nan, nan, nan, nan
    cl = max(cl, lo)
    cr = min(cr, hi)
    yhat = _y_min(lo, hi, x, y, v, A, g, c)
    short = 4.0 * math.pi / K1 * _yp(yhat, g, c) ** -0.5
    g_lo, g_hi = cl, cr
    far_lo = nan
    near_lo = nan
    far_hi = nan
    near_hi = nan
    if cl > lo:
        if cl - lo <= short:
            g_lo = lo
        else:
            Tf = x1 + _t_d(lo, x, y, v, A, g, c)
            Tn = x1 + _t_d(cl, x, y, v, A, g, c)
            e = math.floor(Tn / w) * w if Tn > Tf else math.ceil(Tn / w) * w
            if (Tn > Tf and e <= Tf) or (Tn < Tf and e >= Tf):
                g_lo = lo
            else:
                g_lo = _bisect(2, lo, cl, x, y, v, x1, A, g, c, e, tol)
                far_lo, near_lo = Tf, e
    if cr < hi:
        if hi - cr <= short:
            g_hi = hi
        else:
            Tf = x1 + _t_d(hi, x, y, v, A, g, c)
            Tn = x1 + _t_d(cr, x, y, v, A, g, c)
            e = math.floor(Tn / w) * w if Tn > Tf else math.ceil(Tn / w) * w
            if (Tn > Tf and e <= Tf) or (Tn < Tf and e >= Tf):
                g_hi = hi
            else:
                g_hi = _bisect(2, cr, hi, x, y, v, x1, A, g, c, e, tol)
                far_hi, near_hi = Tf, e
    return True, z, g_lo, g_hi, far_lo, far_hi, near_lo, near_hi


@njit(cache=True)
def _in_c2_star(s, x, y, v, x1, A, g, c, K2, K1h):
    P, q = _product(s, x, y, v, x1, A, g, c)
    return P < K2 and q < K1h


@njit(cache=True)
def _next_marker(s, direction, z, g_end, x, y, v, x1, A, g, c, tol):
    """Next zero candidate of the product from s in ``direction``: the h0 zero z,
    the preimage of the next multiple of pi of the image angle, or the end of Gamma*."""
    bound = g_end
    if direction > 0 and z > s and z < bound:
        bound = z
    if direction < 0 and z < s and z > bound:
        bound = z
    T0 = x1 + _t_d(s, x, y, v, A, g, c)
    Tb = x1 + _t_d(bound, x, y, v, A, g, c)
    if Tb > T0:
        target = (math.floor(T0 / math.pi) + 1.0) * math.pi
        if target >= Tb:
            return bound, bound == z
    else:
        target = (math.ceil(T0 / math.pi) - 1.0) * math.pi
        if target <= Tb:
            return bound, bound == z
    if direction > 0:
        return _bisect(2, s, bound, x, y, v, x1, A, g, c, target, tol), True
    return _bisect(2, bound, s, x, y, v, x1, A, g, c, target, tol), True


@njit(cache=True)
def _gap_end(s, direction, z, g_end, x, y, v, x1, A, g, c, K2, K1h, tol):
    """End of the component of Gamma* minus C2* containing s, walking in ``direction``."""
    cur = s
    for _ in range(4096):
        m, is_zero = _next_marker(cur, direction, z, g_end, x, y, v, x1, A, g, c, tol)
        if _in_c2_star(m, x, y, v, x1, A, g, c, K2, K1h):
            a, b = (cur, m) if direction > 0 else (m, cur)
            # residual P - K2 changes sign between cur (>= K2) and m (< K2)
            return _bisect(3, a, b, x, y, v, x1, A, g, c, K2, tol)
        if m == g_end:
            return g_end
        if m == cur:
            return g_end
        cur = m
    return g_end


@njit(cache=True)
def classify_step(x, y, lo, hi, mp, cpk):
    """Decide where F(x, y) falls in the decomposition of the pair [lo, hi].

    Returns (code, gap_lo, gap_hi, img_lo, img_hi):
    STANDARD -> image range [img_lo, img_hi] of the outside piece to be cut;
    STANDBY  -> Gamma* component [gap_lo, gap_hi] (a stand-by preimage);
    INVALID  -> F(x, y) in Z.
    """
    A, g, c = mp[0], mp[1], mp[2]
    K2, K1h, w, tol = cpk[1], cpk[3], cpk[6], cpk[7]
    v = y - 2.0 * A * math.cos(x)
    x1 = x + c * y ** g
    x1 = x1 - TWO_PI * math.floor(x1 / TWO_PI)
    has, z, g_lo, g_hi, far_lo, far_hi, near_lo, near_hi = _gamma_star(x, y, v, x1, lo, hi, mp, cpk)
    if not has:
        a = x1 + _t_d(lo, x, y, v, A, g, c)
        b = x1 + _t_d(hi, x, y, v, A, g, c)
        return STANDARD, np.nan, np.nan, min(a, b), max(a, b)
    if x < g_lo:
        return STANDARD, np.nan, np.nan, min(far_lo, near_lo), max(far_lo, near_lo)
    if x > g_hi:
        return STANDARD, np.nan, np.nan, min(far_hi, near_hi), max(far_hi, near_hi)
    if _in_c2_star(x, x, y, v, x1, A, g, c, K2, K1h):
        return INVALID, np.nan, np.nan, np.nan, np.nan
    ga = _gap_end(x, -1.0, z, g_lo, x, y, v, x1, A, g, c, K2, K1h, tol)
    gb = _gap_end(x, 1.0, z, g_hi, x, y, v, x1, A, g, c, K2, K1h, tol)
    yhat = _y_min(lo, hi, x, y, v, A, g, c)
    if gb - ga <= 2.0 / (K2 * _yp(yhat, g, c)):
        return INVALID, ga, gb, np.nan, np.nan
    return STANDBY, ga, gb, np.nan, np.nan


@njit(cache=True)
def advance(x, y, lo, hi, mp, cpk, y_star):
    """One node of the decomposition tree for the sample at (x, y) on pair [lo, hi].

    Returns (code, steps, x', y', lo', hi').
    """
    if y <= y_star:
        return BELOW, 0, x, y, lo, hi
    A, g, c = mp[0], mp[1], mp[2]
    delta, w = cpk[5], cpk[6]
    code, ga, gb, ia, ib = classify_step(x, y, lo, hi, mp, cpk)
    if code == INVALID:
        return INVALID, 0, x, y, lo, hi
    x1, y1 = _step(x, y, mp)
    if code == STANDARD:
        nlo, nhi, _, _, _ = cut_piece(x1, ia, ib, w, delta)
        return STANDARD, 1, x1, y1, nlo, nhi
    # stand-by: follow both endpoints through two steps
    v = y - 2.0 * A * math.cos(x)
    x2, y2 = _step(x1, y1, mp)
    ends = np.empty(2)
    for j in range(2):
        s = ga if j == 0 else gb
        pd = _psi_d(s, x, v, A, g, c)
        dx1 = (s - x) + _pdiff(y, pd, g, c)
        dy1 = pd + 2.0 * A * (math.cos(x1 + dx1) - math.cos(x1))
        dx2 = dx1 + _pdiff(y1, dy1, g, c)
        ends[j] = x2 + dx2
    a, b = min(ends[0], ends[1]), max(ends[0], ends[1])
    nlo, nhi, _, _, _ = cut_piece(x2, a, b, w, delta)
    return STANDBY, 2, x2, y2, nlo, nhi


# ---------------------------------------------------------------------------
# drivers

@njit(cache=True)
def critical_time_kernel(xs, ys, los, his, max_iter, mp, cpk, y_star):
    """Critical time of each sample; max_iter marks truncation.

    Also returns the terminal code (INVALID, BELOW, or -1 when truncated).
    """
    m = len(xs)
    tau = np.empty(m, np.int64)
    term = np.empty(m, np.int64)
    for i in range(m):
        x, y, lo, hi = xs[i], ys[i], los[i], his[i]
        t = 0
        code = -1
        while t < max_iter:
            cd, st, x, y, lo, hi = advance(x, y, lo, hi, mp, cpk, y_star)
            if cd == INVALID or cd == BELOW:
                code = cd
                break
            t += st
        tau[i] = min(t, max_iter)
        term[i] = code
    return tau, term


@njit(cache=True)
def _compatible(lo, hi, x, y, mp, band_lo, band_hi):
    A, g, c = mp[0], mp[1], mp[2]
    v = y - 2.0 * A * math.cos(x)
    mn, mx = _y_range(lo, hi, x, y, v, A, g, c)
    return mn >= band_lo and mx <= band_hi


@njit(cache=True)
def level_kernel(xs, ys, los, his, y_master, k, nu, max_iter, mp, cpk, y_star):
    """Joint evaluation of tau^[k], tau (capped) and xi^[k] per sample.

    Returns tau_k, tau, xi, truncated flag. tau continues past tau_k until Z,
    below y*, or the cap; xi is +1 iff tau_k < tau and the pair reached at tau_k
    is close to R_{k+1}.
    """
    A = mp[0]
    Rk = y_master * 2.0 ** k
    band_lo, band_hi = 0.5 * Rk, 2.0 * Rk
    R_up = 2.0 * Rk
    m = len(xs)
    tk = np.empty(m, np.int64)
    tt = np.empty(m, np.int64)
    xi = np.empty(m, np.int64)
    trunc = np.zeros(m, np.bool_)
    for i in range(m):
        x, y, lo, hi = xs[i], ys[i], los[i], his[i]
        t = 0
        stopped_k = -1
        close_up = False
        finished = False
        while t < max_iter:
            if stopped_k < 0 and not _compatible(lo, hi, x, y, mp, band_lo, band_hi):
                stopped_k = t
                close_up = _compatible(lo, hi, x, y, mp, R_up - 2 * A * nu, R_up + 2 * A * nu)
                # tau only matters through tau_k < tau: any further step decides it
            cd, st, x, y, lo, hi = advance(x, y, lo, hi, mp, cpk, y_star)
            if cd == INVALID or cd == BELOW:
                finished = True
                break
            t += st
            if stopped_k >= 0:
                break
        if stopped_k < 0:
            stopped_k = min(t, max_iter)
        tk[i] = stopped_k
        tt[i] = t
        if finished and t == stopped_k:
            xi[i] = -1
        elif stopped_k < t or (not finished and stopped_k < max_iter):
            xi[i] = 1 if close_up else -1
        else:
            xi[i] = -1
        trunc[i] = (not finished) and stopped_k >= max_iter
    return tk, tt, xi, trunc


@njit(cache=True)
def walk_kernel(xs, ys, los, his, y_master, nu, horizon, max_steps, max_records, mp, cpk, y_star):
    """Level-crossing walk (tau_m, chi_m) for each sample on the master pair.

    Status: 0 entered C2_hat (Z or below y*), 1 truncated, 2 reached +horizon.
    Records are stored up to max_records per sample.
    """
    A = mp[0]
    m = len(xs)
    taus = np.full((m, max_records), -1, np.int64)
    chis = np.zeros((m, max_records), np.int64)
    nrec = np.zeros(m, np.int64)
    status = np.empty(m, np.int64)
    for i in range(m):
        x, y, lo, hi = xs[i], ys[i], los[i], his[i]
        t = 0
        chi = 0
        taus[i, 0] = 0
        chis[i, 0] = 0
        r = 1
        st_code = 1
        while t < max_steps:
            Rk = y_master * 2.0 ** chi
            leaving = not _compatible(lo, hi, x, y, mp, 0.5 * Rk, 2.0 * Rk)
            up = leaving and _compatible(lo, hi, x, y, mp, 2.0 * Rk - 2 * A * nu, 2.0 * Rk + 2 * A * nu)
            cd, s, x, y, lo, hi = advance(x, y, lo, hi, mp, cpk, y_star)
            if cd == INVALID or cd == BELOW:
                # tau_k = tau: chi moves down and stays frozen afterwards
                st_code = 0
                if r < max_records:
                    taus[i, r] = t
                    chis[i, r] = chi - 1
                    r += 1
                break
            if leaving:
                chi = chi + 1 if up else chi - 1
                if r < max_records:
                    taus[i, r] = t
                    chis[i, r] = chi
                    r += 1
                if chi >= horizon:
                    st_code = 2
                    break
            t += s
        nrec[i] = r
        status[i] = st_code
    return taus, chis, nrec, status
