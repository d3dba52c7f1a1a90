"""Shared numerical helpers: cancellation-free power-law differences,
finite differences, Gauss-Legendre panels and log-log regression."""

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(x):
    """Reduce angles to [0, 2pi)."""
    r = np.mod(x, TWO_PI)
    # np.mod can return exactly 2pi for tiny negative inputs
    return np.where(r >= TWO_PI, 0.0, r) if np.ndim(r) else (0.0 if r >= TWO_PI else r)


def cos_diff(a, b):
    """cos(a) - cos(b) without cancellation for nearby a, b."""
    return -2 * np.sin(0.5 * (a + b)) * np.sin(0.5 * (a - b))


def power_diff(base, delta, gamma, coeff=1.0):
    """coeff * ((base + delta)**gamma - base**gamma) without cancellation.

    Accurate to relative machine precision of the *result* even when
    delta / base is tiny and base**gamma is huge.
    """
    return coeff * base ** gamma * np.expm1(gamma * np.log1p(delta / base))


def inverse_shift(base, t, gamma, coeff=1.0):
    """Y^{-1}(Y(base) + t) - base for Y(y) = coeff * y**gamma, cancellation free."""
    return base * np.expm1(np.log1p(t / (coeff * base ** gamma)) / gamma)


def fd_first(values, step):
    """4th-order first derivative on a uniform grid (one-sided 4th order at ends)."""
    v = np.asarray(values)
    d = np.empty_like(v)
    d[2:-2] = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12 * step)
    c = np.array([-25, 48, -36, 16, -3], dtype=v.dtype) / (12 * step)
    d[0] = c @ v[:5]
    d[1] = c @ v[1:6]
    d[-1] = -(c @ v[::-1][:5])
    d[-2] = -(c @ v[::-1][1:6])
    return d


def fd_second(values, step):
    """4th-order second derivative on a uniform grid (one-sided at ends)."""
    v = np.asarray(values)
    d = np.empty_like(v)
    d[2:-2] = (-v[:-4] + 16 * v[1:-3] - 30 * v[2:-2] + 16 * v[3:-1] - v[4:]) / (12 * step ** 2)
    c = np.array([45, -154, 214, -156, 61, -10], dtype=v.dtype) / (12 * step ** 2)
    d[0] = c @ v[:6]
    d[1] = c @ v[1:7]
    d[-1] = c @ v[::-1][:6]
    d[-2] = c @ v[::-1][1:7]
    return d


_GL_CACHE = {}


def gauss_legendre(n):
    """Nodes and weights on [-1, 1] (cached)."""
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def panel_nodes(edges, order=16):
    """Gauss-Legendre nodes and weights on consecutive panels given by ``edges``."""
    t, w = gauss_legendre(order)
    edges = np.asarray(edges)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    x = (0.5 * (hi + lo) + half * t).ravel()
    wt = (half * w).ravel()
    return x, wt


def loglog_fit(x, y):
    """Least-squares fit of log y = a + s log x.

    Returns (slope, stderr, intercept, r2).
    """
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    return linear_fit(lx, ly)


def linear_fit(x, y):
    """Ordinary least squares y = a + s x; returns (slope, stderr, intercept, r2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    A = np.vstack([np.ones(n), x]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    dof = max(n - 2, 1)
    sxx = float(((x - x.mean()) ** 2).sum())
    se = np.sqrt(ss_res / dof / sxx) if sxx > 0 else np.inf
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[1]), float(se), float(coef[0]), float(r2)


def wilson_interval(k, n, z=1.96):
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, mid - half), min(1.0, mid + half)


def bisect_vec(func, lo, hi, iters=60):
    """Vectorized bisection for sign changes of ``func`` on [lo, hi] elementwise.

    ``func(lo)`` and ``func(hi)`` must have opposite signs.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    flo = func(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = func(mid)
        same = np.sign(fm) == np.sign(flo)
        lo = np.where(same, mid, lo)
        flo = np.where(same, fm, flo)
        hi = np.where(same, hi, mid)
    return 0.5 * (lo + hi)


_SPLITTER = 134217729.0  # 2^27 + 1


def two_sum(a, b):
    """Error-free sum: a + b = s + e exactly."""
    s = a + b
    bb = s - a
    e = (a - (s - bb)) + (b - bb)
    return s, e


def two_product(a, b):
    """Error-free product (Dekker): a * b = p + e exactly, barring overflow."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    p = a * b
    ca = _SPLITTER * a
    a_hi = ca - (ca - a)
    a_lo = a - a_hi
    cb = _SPLITTER * b
    b_hi = cb - (cb - b)
    b_lo = b - b_hi
    e = ((a_hi * b_hi - p) + a_hi * b_lo + a_lo * b_hi) + a_lo * b_lo
    return p, e
