"""Curves with densities ("pairs") and their transport by the map.

A pair is a graph y = psi(x) over an interval of the lifted circle carrying a
probability density rho. Reference pairs are images of vertical lines, standard
pairs are close to reference pairs with a regular density, and image pairs are
pushforwards evaluated lazily through their parent.

All pairs expose ``dpsi(x, x_ref)`` computing psi(x) - psi(x_ref) without the
cancellation that would otherwise destroy the phase x + Y(psi(x)) at large heights.
"""

from dataclasses import dataclass
import json
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .core_map import MapParams, Point, big_y, big_y_inverse, yp, ypp
from .critical_sets import CriticalParams
from .numerics import TWO_PI, cos_diff, fd_first, fd_second, inverse_shift, panel_nodes, power_diff


class DegenerateImageError(ValueError):
    """The expansion rate vanishes (or changes sign) on the requested subinterval."""


class IntervalWidthError(ValueError):
    """Interval width outside the standard range (delta/4, delta)."""


class NotCleanError(ValueError):
    """The part of the curve outside C1 is not connected."""


def phase_mod(y, params: MapParams, x=0.0):
    """(x + Y(y)) mod 2pi evaluated in extended precision."""
    yl = np.longdouble(y)
    two_pi = 2 * np.arccos(np.longdouble(-1))
    return float(np.mod(np.longdouble(x) + params.y_hat_coeff * yl ** params.gamma, two_pi))


def slope_field_1(x, y, params: MapParams, y_prev=None):
    """h_1 and the adapted slope h~_1 at (x, y).

    Without ``y_prev`` the current height is substituted; the third return value
    is then a bound on the relative error of 1/Y' caused by that substitution.
    """
    A = params.A
    approx = y_prev is None
    yprev = y if approx else y_prev
    h1 = -2 * A * np.sin(x) + 1 / yp(yprev, params)
    ht = h1 + 1 / yp(y, params)
    bound = abs(params.gamma - 1) * 2 * A / np.min(y) if approx else 0.0
    return h1, ht, bound


def dslope_field_1(x, y_prev, params: MapParams):
    """Derivative of the reference-curve slope through a point with preimage height y_prev."""
    return -2 * params.A * np.cos(x) - ypp(y_prev, params) / yp(y_prev, params) ** 3


class BasicPair:
    """Base class: subclasses provide psi, slope, dslope, log_rho_deriv and rho."""

    params: MapParams
    lo: float
    hi: float
    n_nodes: int = 2048

    # -- interface -----------------------------------------------------
    def psi(self, x):
        raise NotImplementedError

    def slope(self, x):
        raise NotImplementedError

    def dslope(self, x):
        raise NotImplementedError

    def log_rho_deriv(self, x):
        raise NotImplementedError

    def rho(self, x):
        raise NotImplementedError

    def dpsi(self, x, x_ref):
        return self.psi(x) - self.psi(x_ref)

    def y_prev(self, x):
        """Height of the preimage of (x, psi(x)) (exact vertical-fiber inversion)."""
        return self.psi(x) - 2 * self.params.A * np.cos(x)

    def slope_gap(self, x):
        """Slope minus the reference-curve slope through (x, psi(x))."""
        h1, _, _ = slope_field_1(x, self.psi(x), self.params, y_prev=self.y_prev(x))
        return self.slope(x) - h1

    # -- derived -------------------------------------------------------
    @property
    def interval(self):
        return (self.lo, self.hi)

    @property
    def width(self):
        return self.hi - self.lo

    def nodes(self, n=None):
        return np.linspace(self.lo, self.hi, n or self.n_nodes)

    def y_min(self):
        return float(self.psi(self.nodes(257)).min())

    def h_tilde(self, x):
        return self.slope(x) + 1 / yp(self.psi(x), self.params)

    def expansion(self, x):
        """Local expansion rate dx'/dx of the image curve."""
        return self.h_tilde(x) * yp(self.psi(x), self.params)

    def mass(self, a, b, panels=4):
        """Probability of [a, b] (vectorized over a, b)."""
        a = np.atleast_1d(np.asarray(a, float))
        b = np.atleast_1d(np.asarray(b, float))
        t, w = panel_nodes(np.linspace(0, 1, panels + 1), 16)
        xs = a[:, None] + (b - a)[:, None] * t[None, :]
        vals = self.rho(xs.ravel()).reshape(xs.shape)
        out = (vals * w[None, :]).sum(axis=1) * (b - a)
        return out if out.size > 1 else float(out[0])

    def image_offset(self, x, x_ref):
        """Lifted x-coordinate of F(x, psi(x)) minus that of F(x_ref, psi(x_ref))."""
        base = self.psi(x_ref)
        return (x - x_ref) + power_diff(base, self.dpsi(x, x_ref), self.params.gamma,
                                        self.params.y_hat_coeff)

    def expectation(self, func, n=4096):
        """Integral of func(x, psi(x)) rho(x) dx by Gauss-Legendre panels."""
        x, w = panel_nodes(np.linspace(self.lo, self.hi, n // 16 + 1), 16)
        return float((func(x, self.psi(x)) * self.rho(x) * w).sum())


class ReferencePair(BasicPair):
    """psi(x) = 2A cos x + Y^{-1}(c + x) with uniform density, through an anchor point."""

    def __init__(self, params: MapParams, lo, hi, anchor_x, anchor_y, n_nodes=2048):
        self.params = params
        self.lo, self.hi = float(lo), float(hi)
        self.anchor_x = float(anchor_x)
        self.anchor_y = float(anchor_y)
        self.v_anchor = self.anchor_y - 2 * params.A * np.cos(self.anchor_x)
        if self.v_anchor <= params.L:
            raise ValueError("reference curve below the cutoff L")
        self.n_nodes = n_nodes

    @property
    def c(self):
        """Constant of the curve: Y(psi(x) - 2A cos x) = c + x."""
        return float(big_y(self.v_anchor, self.params) - self.anchor_x)

    def v_shift(self, x):
        return inverse_shift(self.v_anchor, x - self.anchor_x, self.params.gamma, self.params.y_hat_coeff)

    def vertical_height(self, x):
        return self.v_anchor + self.v_shift(x)

    def psi(self, x):
        return 2 * self.params.A * np.cos(x) + self.vertical_height(x)

    def dpsi(self, x, x_ref):
        return 2 * self.params.A * cos_diff(x, x_ref) + (self.v_shift(x) - self.v_shift(x_ref))

    def y_prev(self, x):
        return self.vertical_height(x)

    def slope(self, x):
        return -2 * self.params.A * np.sin(x) + 1 / yp(self.vertical_height(x), self.params)

    def dslope(self, x):
        return dslope_field_1(x, self.vertical_height(x), self.params)

    def slope_gap(self, x):
        return np.zeros_like(np.asarray(x, float))

    def log_rho_deriv(self, x):
        return np.zeros_like(np.asarray(x, float))

    def rho(self, x):
        return np.full_like(np.asarray(x, float), 1.0 / self.width)

    def mass(self, a, b, panels=4):
        out = (np.asarray(b, float) - np.asarray(a, float)) / self.width
        return out if np.ndim(out) else float(out)

    def restrict(self, lo, hi):
        return ReferencePair(self.params, lo, hi, self.anchor_x, self.anchor_y, self.n_nodes)


class PerturbedPair(BasicPair):
    """A reference curve plus an explicit small perturbation, with density exp(g).

    ``eps(x, k)`` returns the k-th derivative (k = 0, 1, 2) of the perturbation and
    ``log_density(x, k)`` the k-th derivative (k = 0, 1) of g.
    """

    def __init__(self, base: ReferencePair, eps: Callable, log_density: Callable, n_nodes=2048):
        self.base = base
        self.params = base.params
        self.lo, self.hi = base.lo, base.hi
        self.eps = eps
        self.log_density = log_density
        self.n_nodes = n_nodes
        x, w = panel_nodes(np.linspace(self.lo, self.hi, 33), 16)
        self._norm = float((np.exp(log_density(x, 0)) * w).sum())

    def psi(self, x):
        return self.base.psi(x) + self.eps(x, 0)

    def dpsi(self, x, x_ref):
        return self.base.dpsi(x, x_ref) + (self.eps(x, 0) - self.eps(x_ref, 0))

    def y_prev(self, x):
        return self.base.vertical_height(x) + self.eps(x, 0)

    def slope(self, x):
        return self.base.slope(x) + self.eps(x, 1)

    def slope_gap(self, x):
        # eps' plus the change of 1/Y' between the base and perturbed preimage heights,
        # free of the cancellation in slope(x) - h1 once eps' drops below ulp(slope)
        p = self.params
        v = self.base.vertical_height(x)
        e = self.eps(x, 0)
        g = p.gamma
        ratio_term = -np.expm1((1 - g) * np.log1p(e / v))  # 1 - (1 + e/v)^(1-g)
        return self.eps(x, 1) + ratio_term / yp(v, p)

    def dslope(self, x):
        return self.base.dslope(x) + self.eps(x, 2)

    def log_rho_deriv(self, x):
        return self.log_density(x, 1)

    def rho(self, x):
        return np.exp(self.log_density(x, 0)) / self._norm


class ImagePair(BasicPair):
    """Pushforward of ``parent`` restricted to the parent subinterval [a, b].

    Image coordinates are lifted: t = u(x) with u(a) = (a + Y(psi(a))) mod 2pi.
    Slope, its derivative and the log-density derivative follow the closed-form
    one-step recursion; values at t are obtained through the preimage x(t).
    """

    def __init__(self, parent: BasicPair, a, b, n_nodes=2048, tol=1e-12, base_phase=None):
        self.parent = parent
        self.params = parent.params
        self.a, self.b = float(a), float(b)
        self.n_nodes = n_nodes
        xs = np.linspace(self.a, self.b, 513)
        L = parent.expansion(xs)
        if np.min(np.abs(L)) < tol or (L.max() > 0 and L.min() < 0):
            raise DegenerateImageError("expansion rate vanishes on the subinterval")
        self.sign = 1.0 if L[0] > 0 else -1.0
        self.u_ref = phase_mod(parent.psi(self.a), self.params, self.a) if base_phase is None else base_phase
        us = self.u_ref + parent.image_offset(xs, self.a)
        self._grid_x = xs if self.sign > 0 else xs[::-1]
        self._grid_u = us if self.sign > 0 else us[::-1]
        if np.any(np.diff(self._grid_u) <= 0):
            raise DegenerateImageError("image grid not resolved in float64 at this coordinate")
        self.lo, self.hi = float(self._grid_u[0]), float(self._grid_u[-1])
        self.parent_mass = float(parent.mass(self.a, self.b))

    def preimage(self, t):
        """Parent coordinate x with u(x) = t (vectorized safeguarded Newton)."""
        t = np.asarray(t)
        if t.dtype != np.longdouble:
            t = t.astype(float)
        j = np.clip(np.searchsorted(self._grid_u, t) - 1, 0, len(self._grid_u) - 2)
        u0, u1 = self._grid_u[j], self._grid_u[j + 1]
        x = self._grid_x[j] + (t - u0) * ((self._grid_x[j + 1] - self._grid_x[j]) / (u1 - u0))
        for _ in range(30):
            f = self.u_ref + self.parent.image_offset(x, self.a) - t
            dx = f / self.parent.expansion(x)
            x = np.clip(x - dx, self.a, self.b)
            if np.all(np.abs(dx) <= 4 * np.finfo(x.dtype).eps * (1 + np.abs(x))):
                break
        return x

    def psi(self, t):
        return self.parent.psi(self.preimage(t)) + 2 * self.params.A * np.cos(t)

    def dpsi(self, t, t_ref):
        x = self.preimage(t)
        xr = self.preimage(t_ref)
        return self.parent.dpsi(x, xr) + 2 * self.params.A * cos_diff(t, t_ref)

    def y_prev(self, t):
        return self.parent.psi(self.preimage(t))

    def _fields(self, t):
        x = self.preimage(t)
        p = self.parent
        y0 = p.psi(x)
        d1, d2 = yp(y0, self.params), ypp(y0, self.params)
        h = p.slope(x)
        L = (h + 1 / d1) * d1
        return x, y0, d1, d2, h, L

    def slope(self, t):
        x, y0, d1, d2, h, L = self._fields(t)
        return -2 * self.params.A * np.sin(t) + (1 - 1 / L) / d1

    def dslope(self, t):
        x, y0, d1, d2, h, L = self._fields(t)
        hd = self.parent.dslope(x)
        return -2 * self.params.A * np.cos(t) + hd / L ** 3 - d2 / d1 ** 3 * (1 - 1 / L) ** 3

    def log_rho_deriv(self, t):
        x, y0, d1, d2, h, L = self._fields(t)
        hd = self.parent.dslope(x)
        r = self.parent.log_rho_deriv(x)
        return r / L - (hd * d1 + d2 * h * h) / L ** 2

    def rho(self, t):
        x = self.preimage(t)
        return self.parent.rho(x) / np.abs(self.parent.expansion(x)) / self.parent_mass

    def mass(self, t1, t2, panels=4):
        x1, x2 = self.preimage(t1), self.preimage(t2)
        m = self.parent.mass(np.minimum(x1, x2), np.maximum(x1, x2), panels)
        return m / self.parent_mass

    def recursion_check(self, n=33, window=0.2, center=None):
        """Relative discrepancy between closed-form and finite-difference (h, h', r).

        Evaluated in extended precision on ``n`` nodes over a window of the image
        of width at most ``window`` (images can be millions of radians long, far
        beyond what a fixed node count resolves). Finite differences use
        cancellation-free psi differences and skip the two nodes at each end.
        """
        w = min(window, self.width)
        c = 0.5 * (self.lo + self.hi) if center is None else center
        c = min(max(c, self.lo + w / 2), self.hi - w / 2)
        t = np.linspace(np.longdouble(c - w / 2), np.longdouble(c + w / 2), n)
        step = t[1] - t[0]
        mid = t[n // 2]
        dp = self.dpsi(t, mid)
        logr = np.log(self.rho(t))
        out = {}
        for name, fd, cf in (("slope", fd_first(dp, step), self.slope(t)),
                             ("dslope", fd_second(dp, step), self.dslope(t)),
                             ("log_rho_deriv", fd_first(logr, step), self.log_rho_deriv(t))):
            inner = slice(2, -2)
            scale = max(float(np.max(np.abs(cf[inner]))), 1e-300)
            out[name] = float(np.max(np.abs(fd[inner] - cf[inner])) / scale)
        return out


class GridPair(BasicPair):
    """Pair given by samples of psi and rho (cubic interpolation); used for replay."""

    def __init__(self, params: MapParams, lo, hi, psi_samples, rho_samples):
        self.params = params
        self.lo, self.hi = float(lo), float(hi)
        x = np.linspace(self.lo, self.hi, len(psi_samples))
        self._psi_ref = float(psi_samples[len(psi_samples) // 2])
        self._spl = CubicSpline(x, np.asarray(psi_samples) - self._psi_ref)
        self._lr = CubicSpline(x, np.log(rho_samples))
        xs, w = panel_nodes(np.linspace(self.lo, self.hi, 33), 16)
        self._norm = float((np.exp(self._lr(xs)) * w).sum())
        self.n_nodes = len(psi_samples)

    def psi(self, x):
        return self._psi_ref + self._spl(x)

    def dpsi(self, x, x_ref):
        return self._spl(x) - self._spl(x_ref)

    def slope(self, x):
        return self._spl(x, 1)

    def dslope(self, x):
        return self._spl(x, 2)

    def log_rho_deriv(self, x):
        return self._lr(x, 1)

    def rho(self, x):
        return np.exp(self._lr(x)) / self._norm


# ---------------------------------------------------------------------------
# operations

def expansion_rate(pair: BasicPair, x):
    return pair.expansion(x)


def pushforward_pair(pair: BasicPair, lo, hi, tol=1e-9, n_nodes=2048) -> ImagePair:
    """Image of the restriction of ``pair`` to [lo, hi]; raises DegenerateImageError."""
    return ImagePair(pair, lo, hi, n_nodes=n_nodes, tol=tol)


def make_reference_pair(alpha_interval, anchor: Point, params: MapParams, delta=0.5,
                        check_width=True) -> ReferencePair:
    """Reference pair over ``alpha_interval`` through ``anchor``."""
    lo, hi = alpha_interval
    if check_width and not (delta / 4 < hi - lo < delta):
        raise IntervalWidthError("interval width must lie in (delta/4, delta)")
    ax = lo + np.mod(anchor.x - lo, TWO_PI)
    if ax > hi:
        raise ValueError("anchor outside interval")
    return ReferencePair(params, lo, hi, ax, anchor.y)


@dataclass
class StandardnessReport:
    is_standard: bool
    max_delta_slope: float
    max_slope_ratio: float          # max |Dh| D Y'^{3/2}; < 1 required
    max_delta_dslope: float
    max_abs_r: float
    width_ok: bool
    D: float
    violating_x: Optional[float] = None


def check_standard(pair: BasicPair, params: MapParams, cp: CriticalParams, n=None) -> StandardnessReport:
    """Compare the pair with reference curves through each of its points."""
    x = pair.nodes(n or min(pair.n_nodes, 1025))
    psi = pair.psi(x)
    yprev = pair.y_prev(x)
    dh = np.abs(pair.slope_gap(x))
    ratio = dh * cp.D * yp(psi, params) ** 1.5
    ddh = np.abs(pair.dslope(x) - dslope_field_1(x, yprev, params))
    r = np.abs(pair.log_rho_deriv(x))
    width_ok = cp.delta / 4 < pair.width < cp.delta
    # written so that NaN counts as a violation
    bad = ~((ratio < 1) & (ddh < params.A / 10) & (r < 1))
    ok = bool(width_ok and not bad.any())
    vx = float(x[np.argmax(bad)]) if bad.any() else None
    return StandardnessReport(ok, float(dh.max()), float(ratio.max()), float(ddh.max()),
                              float(r.max()), bool(width_ok), cp.D, vx)


def gronwall_constants(delta):
    return np.exp(-delta) / delta, 4 * np.exp(delta) / delta


def gronwall_bounds(pair: BasicPair, delta=0.5, n=1025):
    """Check delta^{-1} e^{-delta} < rho < 4 delta^{-1} e^{delta} pointwise.

    Returns (lower_ok, upper_ok, witness_x or None).
    """
    mu1, mu2 = gronwall_constants(delta)
    x = pair.nodes(n)
    r = pair.rho(x)
    lo_bad = r <= mu1
    hi_bad = r >= mu2
    wit = None
    if lo_bad.any() or hi_bad.any():
        wit = float(x[np.argmax(lo_bad | hi_bad)])
    return bool(not lo_bad.any()), bool(not hi_bad.any()), wit


def random_standard_pair(params: MapParams, cp: CriticalParams, y_hat, rng, interval=None,
                         strength=0.8, density_strength=0.9) -> PerturbedPair:
    """A random standard pair near height y_hat.

    The curve is a reference curve plus eps with |eps'| below strength/D times
    Y'^{-3/2} at the top of the pair; the log-density has derivative below
    density_strength in absolute value.
    """
    A = params.A
    if interval is None:
        w = rng.uniform(0.3, 0.9) * cp.delta
        lo = rng.uniform(0, TWO_PI)
        interval = (lo, lo + w)
    lo, hi = interval
    ax = rng.uniform(lo, hi)
    base = ReferencePair(params, lo, hi, ax, y_hat + 2 * A * np.cos(ax) + 2 * A + 1e-9 * y_hat)
    top = y_hat + 8 * A
    amp = rng.uniform(0.1, strength) / cp.D * yp(top, params) ** -1.5
    om = rng.uniform(1, 6)
    ph = rng.uniform(0, TWO_PI)
    ddmax = params.A / 20

    def eps(x, k):
        arg = om * (x - lo) + ph
        if k == 0:
            return amp / om * np.sin(arg)
        if k == 1:
            return amp * np.cos(arg)
        return -amp * om * np.sin(arg)

    a = rng.uniform(-1, 1) * density_strength * 0.6
    bw = rng.uniform(1, 4)
    b = rng.uniform(-1, 1) * density_strength * 0.4 / bw
    mid = 0.5 * (lo + hi)

    def log_density(x, k):
        if k == 0:
            return a * (x - mid) + b * np.sin(bw * (x - mid))
        return a + b * bw * np.cos(bw * (x - mid))

    assert amp * om < ddmax
    return PerturbedPair(base, eps, log_density)


# ---------------------------------------------------------------------------
# shadowing by a reference curve

@dataclass
class ShadowResult:
    reference: ReferencePair
    max_vertical_gap: float
    excluded_mass: float
    refclose_ok: bool
    x_bar: float


def _c1_mask(pair, x, params, cp):
    psi = pair.psi(x)
    _, ht, _ = slope_field_1(x, psi, params, y_prev=pair.y_prev(x))
    return np.abs(ht) < cp.K1 * yp(psi, params) ** -0.5


def _argmin_abs_sin(lo, hi):
    k = np.ceil(lo / np.pi)
    if k * np.pi <= hi:
        return float(k * np.pi)
    return lo if abs(np.sin(lo)) <= abs(np.sin(hi)) else hi


def shadow_reference(pair: BasicPair, params: MapParams, cp: CriticalParams, n=2049) -> ShadowResult:
    """Reference pair through the point of least |phi''| outside C1 and the shadowing gap.

    For each retained point p0 the image F(p0) is compared with the point of the
    image of the reference curve sharing its x-coordinate; the gap is the vertical
    distance. Computation is cancellation free for reference and perturbed pairs.
    """
    x = pair.nodes(n)
    c1 = _c1_mask(pair, x, params, cp)
    out = np.flatnonzero(~c1)
    if len(out) == 0:
        raise NotCleanError("pair lies inside C1")
    if np.any(np.diff(out) != 1):
        raise NotCleanError("part outside C1 is not connected")
    s_lo, s_hi = x[out[0]], x[out[-1]]
    xb = _argmin_abs_sin(s_lo, s_hi)
    A = params.A
    g, cy = params.gamma, params.y_hat_coeff
    if isinstance(pair, ReferencePair):
        base, eps = pair, (lambda z, k: np.zeros_like(np.asarray(z, float)))
    elif isinstance(pair, PerturbedPair):
        base, eps = pair.base, pair.eps
    else:
        base, eps = None, None
    ref = ReferencePair(params, pair.lo, pair.hi, xb, float(pair.psi(xb)))
    xs = x[out]
    if base is None:
        delta_fn = lambda z: ref.psi(z) - pair.psi(z)
    else:
        e_bar = float(eps(xb, 0))
        dc = power_diff(base.vertical_height(xb), e_bar, g, cy)

        def delta_fn(z):
            w = base.vertical_height(z)
            return inverse_shift(w, dc, g, cy) - eps(z, 0)

    dlt = delta_fn(xs)
    y0 = pair.psi(xs)
    vb = ref.vertical_height(xs)

    def ref_incr(d):
        return 2 * A * cos_diff(xs + d, xs) + inverse_shift(vb, d, g, cy)

    Lb = ref.expansion(xs)
    d = -yp(y0, params) * dlt / Lb
    for _ in range(6):
        gval = dlt + ref_incr(d)
        G = d + power_diff(y0, gval, g, cy)
        dG = 1 + yp(y0 + gval, params) * ref.slope(xs + d)
        d = d - G / dG
    gap = np.abs(dlt + ref_incr(d))
    retained = (xs + d >= pair.lo) & (xs + d <= pair.hi)
    max_gap = float(gap[retained].max()) if retained.any() else 0.0
    excl = 0.0
    rho = pair.rho(xs)
    step = x[1] - x[0]
    lost = ~retained
    if lost.any():
        excl = float(rho[lost].sum() * step)
    # end corrections below grid resolution
    if retained[0] and xs[0] == pair.lo and d[0] < 0:
        excl += float(rho[0] * -d[0])
    if retained[-1] and xs[-1] == pair.hi and d[-1] > 0:
        excl += float(rho[-1] * d[-1])
    if base is None:
        dh = np.abs(pair.slope(xs) - ref.slope(xs)).max()
    else:
        dh = float(np.abs(eps(x, 1)).max())
    # rounding floor of the two terms differenced in delta_fn
    scale = np.abs(y0) if base is None else np.abs(eps(xs, 0)) + abs(e_bar)
    floor = 8 * np.finfo(float).eps * scale
    refclose = bool(np.all(np.abs(dlt) <= 2 * dh * np.abs(xs - xb) + floor))
    return ShadowResult(ref, max_gap, excl, refclose, xb)


# ---------------------------------------------------------------------------
# adapted coordinates

class AdaptedChart:
    """kappa(xi, eta) = (xi + x_bar, psi_eta(xi + x_bar)), psi_eta the reference curve through (x_bar, eta)."""

    def __init__(self, strip_interval, x_bar, K_floor, params: MapParams):
        lo, hi = strip_interval
        if not lo <= x_bar <= hi:
            raise ValueError("x_bar outside strip interval")
        self.lo, self.hi = lo, hi
        self.x_bar = float(x_bar)
        self.K_floor = float(K_floor)
        self.params = params

    def forward(self, xi, eta):
        p = self.params
        x = xi + self.x_bar
        v = eta - 2 * p.A * np.cos(self.x_bar)
        return x, 2 * p.A * np.cos(x) + v + inverse_shift(v, xi, p.gamma, p.y_hat_coeff)

    def inverse(self, x, y):
        p = self.params
        xi = x - self.x_bar
        w = y - 2 * p.A * np.cos(x)
        return xi, 2 * p.A * np.cos(self.x_bar) + w + inverse_shift(w, -xi, p.gamma, p.y_hat_coeff)

    def inverse_rootfind(self, x, y):
        """Oracle: solve psi_eta(x) = y for eta by bracketing."""
        f = lambda eta: self.forward(x - self.x_bar, eta)[1] - y
        return x - self.x_bar, brentq(f, y - 8 * self.params.A - 1, y + 8 * self.params.A + 1, xtol=1e-14, rtol=1e-15)


def adapted_coords(strip_interval, x_bar, K_floor, params: MapParams) -> AdaptedChart:
    return AdaptedChart(strip_interval, x_bar, K_floor, params)


# ---------------------------------------------------------------------------
# serialization

def pair_to_json(pair: BasicPair, n=257) -> str:
    x = pair.nodes(n)
    return json.dumps({"interval": [pair.lo, pair.hi],
                       "psi_samples": [float(v) for v in pair.psi(x)],
                       "rho_samples": [float(v) for v in pair.rho(x)],
                       "params_digest": pair.params.digest()})


def pair_from_json(text: str, params: MapParams) -> GridPair:
    d = json.loads(text)
    if d["params_digest"] != params.digest():
        raise ValueError("parameter digest mismatch")
    lo, hi = d["interval"]
    return GridPair(params, lo, hi, np.array(d["psi_samples"]), np.array(d["rho_samples"]))
