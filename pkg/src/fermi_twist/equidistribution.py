"""Equidistribution diagnostics: expectations of observables along standard pairs
after one or two iterates, the functions Psi_{alpha,k}, their periodicity and
Fourier content, the one-step error scan and a checker for the E0 inequality.

Expectations after k <= 2 iterates are computed by an oscillatory quadrature:
the k-step angle T_k(s) along the pair winds many times, so the integral of
rho(s) exp(i l T_k(s)) is split into short windows around stationary points of
T_k (Gauss-Legendre with phase-resolving panels) and the monotone stretches in
between, where the integration-by-parts series in 1 / (i l T_k') is summed
exactly to three terms. The window size is set by the local ratio
|T_k''| / T_k'^2, which is also the ratio of consecutive series terms.
"""

from dataclasses import dataclass, field
import math
from typing import Callable, Dict, List, Optional, Union

import numpy as np
from scipy.optimize import brentq

from .core_map import MapParams, big_y, map_arrays, yp
from .critical_sets import CriticalParams, classify_arrays, default_critical_params
from .numerics import TWO_PI, cos_diff, gauss_legendre, inverse_shift, linear_fit, loglog_fit, panel_nodes, power_diff
from .standard_pairs import BasicPair, ImagePair, ReferencePair, phase_mod


class QuadratureError(RuntimeError):
    """The oscillatory quadrature could not be set up or did not converge."""


class InsufficientSpanError(ValueError):
    """A Psi table does not cover two periods of Y mod 2 pi."""


# ---------------------------------------------------------------------------
# observables

@dataclass
class Observable:
    """Trigonometric polynomial A(theta) = sum_l a_l exp(i l theta), real valued."""
    coeffs: Dict[int, complex]

    def __post_init__(self):
        c = {int(l): complex(v) for l, v in self.coeffs.items() if v != 0}
        for l, v in list(c.items()):
            if -l not in c:
                c[-l] = np.conj(v)
            elif abs(c[-l] - np.conj(v)) > 1e-12 * max(1.0, abs(v)):
                raise ValueError("coefficients do not define a real observable")
        self.coeffs = c

    @classmethod
    def cos(cls, l=1, amplitude=1.0):
        return cls({l: amplitude / 2, -l: amplitude / 2})

    @classmethod
    def sin(cls, l=1, amplitude=1.0):
        return cls({l: -0.5j * amplitude, -l: 0.5j * amplitude})

    @classmethod
    def constant(cls, value=1.0):
        return cls({0: value})

    @classmethod
    def from_callable(cls, func: Callable, n=256, tol=1e-13):
        theta = np.arange(n) * TWO_PI / n
        c = np.fft.fft(func(theta)) / n
        out = {}
        for l in range(-n // 2 + 1, n // 2):
            if abs(c[l]) > tol:
                out[l] = c[l]
        return cls(out)

    def __call__(self, theta):
        theta = np.asarray(theta, float)
        out = np.zeros(theta.shape, complex)
        for l, v in self.coeffs.items():
            out += v * np.exp(1j * l * theta)
        return out.real

    @property
    def mean(self):
        """Normalized average a_0 (Lebesgue probability on the circle)."""
        return self.coeffs.get(0, 0.0).real

    @property
    def average_integral(self):
        """Integral over [0, 2 pi], i.e. 2 pi a_0."""
        return TWO_PI * self.mean

    def zero_average(self):
        return Observable({l: v for l, v in self.coeffs.items() if l != 0})

    @property
    def sup_norm(self):
        theta = np.linspace(0, TWO_PI, 4097)
        return float(np.max(np.abs(self(theta))))

    @property
    def c1_norm(self):
        theta = np.linspace(0, TWO_PI, 4097)
        d = np.zeros(theta.shape, complex)
        for l, v in self.coeffs.items():
            d += 1j * l * v * np.exp(1j * l * theta)
        return self.sup_norm + float(np.max(np.abs(d.real)))

    @property
    def prime_norm(self):
        return float(sum(l * l * abs(v) for l, v in self.coeffs.items()))

    @property
    def max_mode(self):
        return max((abs(l) for l in self.coeffs), default=0)


ObservableLike = Union[Observable, Callable]


def as_observable(obs: ObservableLike) -> Observable:
    return obs if isinstance(obs, Observable) else Observable.from_callable(obs)


# ---------------------------------------------------------------------------
# k-step phase along a pair

class _PhaseModel:
    """Lifted angle T_k(s) - T_k(s_ref) after k = 1 or 2 steps and its derivative."""

    def __init__(self, pair: BasicPair, k: int):
        if k not in (1, 2):
            raise ValueError("phase model implemented for k = 1, 2")
        self.pair, self.k = pair, k
        p = self.params = pair.params
        self.A = p.A
        if isinstance(pair, ReferencePair):
            self.s_ref = pair.anchor_x
            y_ref = getattr(pair, "anchor_y_exact", pair.anchor_y)
        else:
            self.s_ref = 0.5 * (pair.lo + pair.hi)
            y_ref = float(pair.psi(self.s_ref))
        two_pi = 2 * np.arccos(np.longdouble(-1))
        ld = np.longdouble
        th1 = np.mod(ld(self.s_ref) + p.y_hat_coeff * ld(y_ref) ** p.gamma, two_pi)
        self.theta1 = float(th1)
        if k == 2:
            y1 = ld(y_ref) + 2 * p.A * np.cos(th1)
            self.y1_ref = float(y1)
            self.frame = float(np.mod(th1 + p.y_hat_coeff * y1 ** p.gamma, two_pi))
        else:
            self.frame = self.theta1

    def T1(self, s):
        return self.pair.image_offset(s, self.s_ref)

    def L1(self, s):
        return self.pair.expansion(s)

    def T(self, s):
        t1 = self.T1(s)
        if self.k == 1:
            return t1
        A = self.A
        X1 = self.theta1 + t1
        dy1 = self.pair.dpsi(s, self.s_ref) + 2 * A * cos_diff(X1, self.theta1)
        return t1 + power_diff(self.y1_ref, dy1, self.params.gamma, self.params.y_hat_coeff)

    def dT(self, s):
        L1 = self.L1(s)
        if self.k == 1:
            return L1
        X1 = self.theta1 + self.T1(s)
        y1 = self.pair.psi(s) + 2 * self.A * np.cos(X1)
        return L1 + yp(y1, self.params) * (self.pair.slope(s) - 2 * self.A * np.sin(X1) * L1)

    def second_rate(self, s):
        """Expansion rate of the image curve at F(s): dT2/dT1."""
        return self.dT(s) / self.L1(s)


def _d2_fd(f, p, h):
    return (f(p + h) - f(p - h)) / (2 * h)


def _l1_zeros(model: _PhaseModel, a, b, n=257):
    s = np.linspace(a, b, n)
    L = model.L1(s)
    idx = np.flatnonzero(np.sign(L[:-1]) != np.sign(L[1:]))
    return [brentq(model.L1, s[i], s[i + 1], xtol=1e-16, rtol=9e-16) for i in idx]


def _invert_monotone(fun, deriv, targets, a, b, n_grid=2049, newton=6):
    """Solve fun(s) = target on [a, b] where fun is monotone (vectorized)."""
    grid = np.linspace(a, b, n_grid)
    vals = fun(grid)
    if vals[-1] < vals[0]:
        grid, vals = grid[::-1], vals[::-1]
    j = np.clip(np.searchsorted(vals, targets) - 1, 0, n_grid - 2)
    v0, v1 = vals[j], vals[j + 1]
    s = grid[j] + (targets - v0) * (grid[j + 1] - grid[j]) / np.where(v1 != v0, v1 - v0, 1.0)
    lo, hi = min(a, b), max(a, b)
    for _ in range(newton):
        s = np.clip(s - (fun(s) - targets) / deriv(s), lo, hi)
    return s


def _l2_zeros(model: _PhaseModel, a, b, z_list):
    """Stationary points of T2 away from the fold: image angle near m pi."""
    cuts = [a] + [z for z in z_list if a < z < b] + [b]
    out = []
    for u, v in zip(cuts[:-1], cuts[1:]):
        if v - u <= 0:
            continue
        X_u = model.theta1 + model.T1(u)
        X_v = model.theta1 + model.T1(v)
        m0 = math.ceil(min(X_u, X_v) / math.pi)
        m1 = math.floor(max(X_u, X_v) / math.pi)
        if m1 < m0:
            continue
        targets = np.arange(m0, m1 + 1) * math.pi - model.theta1
        s = _invert_monotone(model.T1, model.L1, targets, u, v)
        A = model.A
        for _ in range(5):
            X1 = model.theta1 + model.T1(s)
            y1 = model.pair.psi(s) + 2 * A * np.cos(X1)
            L1 = model.L1(s)
            slope = -2 * A * np.cos(X1) * yp(y1, model.params) * L1 ** 2
            s = np.clip(s - model.dT(s) / slope, u, v)
        out.append(s)
    return np.concatenate(out) if out else np.array([])


@dataclass
class _Layout:
    windows: np.ndarray          # (n, 2)
    fast: np.ndarray             # (m, 2)
    spans: np.ndarray            # phase span per window
    near: np.ndarray             # (m, 2) distance scale for derivative stencils at fast ends
    max_edge_ratio: float
    fallback: int


def _layout(model: _PhaseModel, a, b, eps):
    """Slow windows around stationary points and fast stretches of [a, b]."""
    z = _l1_zeros(model, a, b)
    pts = list(z)
    if model.k == 2:
        pts = list(_l2_zeros(model, a, b, z)) + pts
    pts = np.asarray(sorted(pts), float)
    wins = []
    if len(pts):
        # curvature estimate, then a refined central difference on the window scale
        b_est = np.abs(_d2_fd(model.dT, pts, 1e-9 * (1 + np.abs(pts))))
        hw_est = 1 / np.sqrt(eps * np.maximum(b_est, 1e-300))
        h = np.maximum(0.01 * hw_est, 1e-12 * (1 + np.abs(pts)))
        a0 = model.dT(pts)
        b0 = _d2_fd(model.dT, pts, h)
        thr = np.sqrt(np.abs(b0) / eps)
        d0 = -a0 / b0
        ok = np.abs(d0) < 2 * thr / np.abs(b0)
        lo_w = pts + d0 - thr / np.abs(b0)
        hi_w = pts + d0 + thr / np.abs(b0)
        wins = [(l, r) for l, r, o in zip(lo_w, hi_w, ok) if o]
    # ends where the phase is not yet fast
    for e, sig in ((a, 1.0), (b, -1.0)):
        a0 = float(model.dT(e))
        hh = 1e-7 * max(b - a, 1e-12)
        b1 = float((model.dT(e + sig * hh) - a0) / (sig * hh))
        if b1 != 0 and abs(b1) / a0 ** 2 > eps:
            thr = math.sqrt(abs(b1) / eps)
            ds = [(t - a0) / b1 for t in (thr, -thr)]
            ds = [d for d in ds if sig * d > 0]
            ext = max((abs(d) for d in ds), default=b - a)
            wins.append((e, e + sig * ext) if sig > 0 else (e - ext, e))
    wins = sorted((max(a, l), min(b, r)) for l, r in wins if r > a and l < b)
    merged = []
    for l, r in wins:
        if merged and l <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], r)
        else:
            merged.append([l, r])
    W = np.array(merged, float).reshape(-1, 2)
    # fast stretches
    edges = [a] + W.ravel().tolist() + [b]
    F = np.array([(edges[i], edges[i + 1]) for i in range(0, len(edges), 2)
                  if edges[i + 1] > edges[i]], float).reshape(-1, 2)
    # stretches where the phase derivative changes sign go to the windows
    fallback = 0
    if len(F):
        mid = 0.5 * (F[:, 0] + F[:, 1])
        sg = np.sign(model.dT(np.stack([F[:, 0], mid, F[:, 1]])))
        bad = (sg[0] != sg[1]) | (sg[1] != sg[2])
        if bad.any():
            fallback = int(bad.sum())
            W = np.vstack([W, F[bad]])
            W = W[np.argsort(W[:, 0])]
            F = F[~bad]
    # phase span of each window through its interior stationary points
    if len(W):
        T_lo, T_hi = model.T(W[:, 0]), model.T(W[:, 1])
        spans = np.abs(T_hi - T_lo)
        if len(pts):
            inside = np.searchsorted(W[:, 0], pts, side="right") - 1
            valid = (inside >= 0) & (pts <= W[np.clip(inside, 0, None), 1])
            if valid.any():
                ip, pp = inside[valid], pts[valid]
                Tp = model.T(pp)
                extra = np.abs(Tp - T_lo[ip]) + np.abs(T_hi[ip] - Tp) - np.abs(T_hi[ip] - T_lo[ip])
                np.add.at(spans, ip, extra)
    else:
        spans = np.zeros(0)
    # distance scales at fast ends: to the nearest stationary point, at most a quarter stretch
    if len(F):
        ref = np.concatenate([pts, [np.inf, -np.inf]])
        ref.sort()
        near = np.empty_like(F)
        for c in (0, 1):
            x = F[:, c]
            j = np.searchsorted(ref, x)
            dist = np.minimum(np.abs(ref[np.clip(j, 0, len(ref) - 1)] - x),
                              np.abs(ref[np.clip(j - 1, 0, len(ref) - 1)] - x))
            near[:, c] = np.minimum(dist, 0.25 * (F[:, 1] - F[:, 0]))
        ratio = np.abs(_d2_fd(model.dT, F.ravel(), 1e-3 * near.ravel() + 1e-15)) / model.dT(F.ravel()) ** 2
        max_ratio = float(ratio.max())
    else:
        near = np.zeros((0, 2))
        max_ratio = 0.0
    return _Layout(W, F, spans, near, max_ratio, fallback)


_STENCIL = np.arange(5.0)


def _one_sided_weights(order):
    """Weights for derivatives 0..2 at offset 0 from samples at offsets 0..4."""
    V = np.vander(_STENCIL, 5, increasing=True).T
    rhs = np.zeros(5)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(V, rhs)


_W1 = _one_sided_weights(1)
_W2 = _one_sided_weights(2)


def _fast_terms(model, pair, x, direction, h, modes):
    """Integration-by-parts series terms at points x (sum of boundary contributions).

    Returns per mode the array of sum_j (-1)^j exp(i l T) G_j / (i l)^{j+1}
    and the magnitude of the last term (error proxy).
    """
    offs = x[:, None] + (direction * h)[:, None] * _STENCIL[None, :]
    flat = offs.ravel()
    dT = model.dT(flat).reshape(offs.shape)
    H = (pair.rho(flat).reshape(offs.shape)) / dT
    step = direction * h
    H1 = (H @ _W1) / step
    H2 = (H @ _W2) / step ** 2
    T1 = (dT @ _W1) / step
    g0 = H[:, 0]
    d = dT[:, 0]
    g1 = H1 / d
    g2 = (H2 - H1 * T1 / d) / d ** 2
    T = model.T(x)
    out = {}
    err = 0.0
    for l in modes:
        il = 1j * l
        ph = np.exp(il * T)
        out[l] = ph * (g0 / il - g1 / il ** 2 + g2 / il ** 3)
        err = max(err, float(np.sum(np.abs(g2) / abs(l) ** 3)))
    return out, err


def _window_integrals(model, pair, W, spans, lmax, order=12):
    if len(W) == 0:
        return None, None, None
    npan = np.ceil(spans * lmax / 3.0).astype(np.int64) + 1
    wid = (W[:, 1] - W[:, 0]) / npan
    seg = np.repeat(np.arange(len(W)), npan)
    first = np.repeat(np.cumsum(npan) - npan, npan)
    k = np.arange(len(seg)) - first
    p_lo = W[seg, 0] + k * wid[seg]
    t, w = gauss_legendre(order)
    half = 0.5 * wid[seg][:, None]
    s = (p_lo[:, None] + half + half * t[None, :]).ravel()
    wt = (half * w[None, :]).ravel()
    return s, wt * pair.rho(s), model.T(s)


@dataclass
class QuadratureReport:
    value: float
    error_estimate: float
    mass: float
    n_windows: int
    n_fast: int
    max_edge_ratio: float
    fallback_stretches: int
    mode_integrals: dict = field(default_factory=dict)


DEFAULT_EPS = {1: 0.005, 2: 0.01}


def oscillatory_expectation(pair: BasicPair, observable: Observable, k: int, domain=None,
                            eps=None) -> QuadratureReport:
    """E over ``pair`` (restricted to ``domain`` intervals) of A(x_k) by oscillatory quadrature.

    ``eps`` bounds |T''| / T'^2 on the fast stretches; the series truncation error scales as eps^3.
    """
    obs = observable
    eps = eps or DEFAULT_EPS[k]
    model = _PhaseModel(pair, k)
    domain = [(pair.lo, pair.hi)] if domain is None else domain
    modes = [l for l in obs.coeffs if l != 0]
    lmax = max((abs(l) for l in modes), default=1)
    totals = {l: 0j for l in modes}
    mass = 0.0
    err = 0.0
    nw = nf = fb = 0
    ratio = 0.0
    for a, b in domain:
        if b <= a:
            continue
        m = pair.mass(a, b)
        mass += m
        if not modes:
            continue
        lay = _layout(model, a, b, eps)
        nw += len(lay.windows)
        nf += len(lay.fast)
        fb += lay.fallback
        ratio = max(ratio, lay.max_edge_ratio)
        s, wr, T = _window_integrals(model, pair, lay.windows, lay.spans, lmax)
        if s is not None:
            for l in modes:
                totals[l] += np.sum(wr * np.exp(1j * l * T))
        if len(lay.fast):
            h_lo = 0.02 * lay.near[:, 0]
            h_hi = 0.02 * lay.near[:, 1]
            up, e1 = _fast_terms(model, pair, lay.fast[:, 1], -np.ones(len(lay.fast)), h_hi, modes)
            dn, e2 = _fast_terms(model, pair, lay.fast[:, 0], np.ones(len(lay.fast)), h_lo, modes)
            err += e1 + e2
            for l in modes:
                totals[l] += np.sum(up[l]) - np.sum(dn[l])
    val = obs.coeffs.get(0, 0.0) * mass
    for l in modes:
        val += obs.coeffs[l] * np.exp(1j * l * model.frame) * totals[l]
    err *= max((abs(v) for v in obs.coeffs.values()), default=0.0)
    return QuadratureReport(float(np.real(val)), float(err), float(mass), nw, nf, ratio, fb,
                            {l: complex(np.exp(1j * l * model.frame) * totals[l]) for l in modes})


def brute_force_expectation(pair: BasicPair, observable: Observable, k: int, domain=None,
                            rad_per_panel=2.0, order=12, max_nodes=4 * 10 ** 8, chunk=2 * 10 ** 5):
    """Reference quadrature with phase-resolving Gauss-Legendre panels (moderate heights only)."""
    model = _PhaseModel(pair, k)
    domain = [(pair.lo, pair.hi)] if domain is None else domain
    lmax = max(observable.max_mode, 1)
    t, w = gauss_legendre(order)
    total = 0j
    for a, b in domain:
        grid = np.linspace(a, b, 8193)
        rate = np.abs(model.dT(grid))
        local = np.maximum(rate[:-1], rate[1:]) * np.diff(grid) * lmax
        npan = np.ceil(1.5 * local / rad_per_panel).astype(np.int64) + 1
        if npan.sum() * order > max_nodes:
            raise QuadratureError("brute-force quadrature too large")
        seg = np.repeat(np.arange(len(npan)), npan)
        first = np.repeat(np.cumsum(npan) - npan, npan)
        kk = np.arange(len(seg)) - first
        width = np.diff(grid)[seg] / npan[seg]
        p_lo = grid[seg] + kk * width
        for c0 in range(0, len(p_lo), chunk):
            half = 0.5 * width[c0:c0 + chunk, None]
            s = (p_lo[c0:c0 + chunk, None] + half + half * t[None, :]).ravel()
            wt = (half * w[None, :]).ravel()
            theta = model.frame + model.T(s)
            vals = np.zeros(len(s), complex)
            for l, v in observable.coeffs.items():
                vals += v * np.exp(1j * l * theta)
            total += np.sum(wt * pair.rho(s) * vals)
    return float(total.real)


# ---------------------------------------------------------------------------
# expectations along pairs

def _orbit_points(x, y, n, params):
    for _ in range(n):
        x, y, _ = map_arrays(x, y, params)
    return x, y


def montecarlo_expectation(pair: BasicPair, observable: ObservableLike, n: int, gate_tau=False,
                           n_samples=10 ** 5, seed=0, cp=None):
    """Stratified estimate of E(A o F^n [1_{tau >= n-1}]); returns (value, standard error)."""
    from .decomposition import critical_time
    rng = np.random.default_rng(seed)
    edges = np.linspace(pair.lo, pair.hi, n_samples + 1)
    s = edges[:-1] + rng.random(n_samples) * np.diff(edges)
    wts = pair.rho(s) * np.diff(edges)
    x, y = _orbit_points(s, pair.psi(s), n, pair.params)
    f = (observable if callable(observable) else as_observable(observable))(x)
    if gate_tau and n >= 2:
        cp = cp or default_critical_params(pair.params)
        tau, term = critical_time(pair, s, pair.params, cp, max_iter=n)
        f = f * ((tau >= n - 1) | (term == -1))
    contrib = f * wts
    val = float(contrib.sum())
    # variance from pairing neighbouring strata
    m = n_samples // 2 * 2
    d = contrib[:m:2] - contrib[1:m:2]
    se = float(np.sqrt(np.sum(d ** 2) / 2)) if m else float("nan")
    return val, se


def pair_expectation(pair: BasicPair, observable: ObservableLike, n: int = 0, gate_tau=False,
                     cp: Optional[CriticalParams] = None, eps=None, method="auto", **mc):
    """E_pair(A o F^n), optionally gated by tau >= n - 1.

    n = 0, 1, 2 use quadrature (for n = 2 the gate removes the invalid set of the
    first decomposition); larger n and ``method='montecarlo'`` use stratified
    sampling with gating by the critical time.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    obs = as_observable(observable)
    if method == "montecarlo" or (method == "auto" and n > 2):
        return montecarlo_expectation(pair, obs, n, gate_tau, cp=cp, **mc)[0]
    if n == 0:
        x, w = panel_nodes(np.linspace(pair.lo, pair.hi, 65), 16)
        return float(np.sum(obs(x) * pair.rho(x) * w))
    domain = None
    if gate_tau and n == 2:
        domain = gated_domain(pair, cp or default_critical_params(pair.params))
    return oscillatory_expectation(pair, obs, n, domain, eps).value


def gated_domain(pair: BasicPair, cp: CriticalParams):
    """Parts of the pair whose first image is not in the invalid set (tau >= 1)."""
    from .decomposition import decompose_image, make_standard_partition
    res = decompose_image(pair, make_standard_partition(cp.delta), pair.params, cp)
    dom, cur = [], pair.lo
    for a, b in sorted(res.z_intervals):
        if a > cur:
            dom.append((cur, a))
        cur = max(cur, b)
    if cur < pair.hi:
        dom.append((cur, pair.hi))
    return dom


# ---------------------------------------------------------------------------
# one-step error

def c1_probability(pair: BasicPair, cp: CriticalParams, n=4097):
    x, w = panel_nodes(np.linspace(pair.lo, pair.hi, n // 16 + 1), 16)
    f = classify_arrays(np.mod(x, TWO_PI), pair.psi(x), pair.params, cp)
    return float(np.sum(w * pair.rho(x) * f["in_C1"]))


def l_hat(pair: BasicPair, cp: CriticalParams, n=4097):
    """Infimum of the expansion rate off C1."""
    x = pair.nodes(n)
    f = classify_arrays(np.mod(x, TWO_PI), pair.psi(x), pair.params, cp)
    L = np.abs(pair.expansion(x))
    off = ~f["in_C1"]
    return float(L[off].min()) if off.any() else np.inf


def bar_point(lo, hi):
    """Point of [lo, hi] where |sin| is smallest (minimum of the base slope)."""
    k = np.round(np.array([lo, hi]) / np.pi)
    cands = [lo, hi] + [m * np.pi for m in range(int(k[0]) - 1, int(k[1]) + 2) if lo <= m * np.pi <= hi]
    return float(min(cands, key=lambda x: abs(math.sin(x))))


def cell_reference_pair(params: MapParams, partition, alpha, eta):
    """Reference pair over cell ``alpha`` through (x_bar, eta).

    An extended-precision ``eta`` is kept for the phase frame: at large heights the
    float64 rounding of eta alone moves Y(eta) by a sizeable fraction of a radian.
    """
    lo = alpha * partition.width
    hi = lo + partition.width
    xb = bar_point(lo, hi)
    pr = ReferencePair(params, lo, hi, xb, float(eta))
    pr.anchor_y_exact = np.longdouble(eta)
    return pr


@dataclass
class OneStepScan:
    y_grid: np.ndarray
    error: np.ndarray
    bound: np.ndarray
    quad_error: np.ndarray
    slope: float
    stderr: float
    r2: float


def one_step_error_scan(gamma, A, y_grid, observable: ObservableLike = None, y_hat_coeff=1.0,
                        phases=4, eps=None) -> OneStepScan:
    """Largest one-step error |E(A o F) - <A>| over the partition cells and a few
    heights within one period of Y, for reference pairs at each height.

    The bound column is ||A|| (P(C1) + 1/L_hat) taken at the worst cell, i.e. the
    envelope with unit constant.
    """
    from .decomposition import make_standard_partition
    params = MapParams(A=A, gamma=gamma, y_hat_coeff=y_hat_coeff)
    cp = default_critical_params(params)
    part = make_standard_partition(cp.delta)
    obs = as_observable(observable if observable is not None else Observable.cos(1))
    errs, bounds, qerr = [], [], []
    for y in y_grid:
        if y < params.y_star:
            raise ValueError("heights must lie above y*")
        worst, wb, we = 0.0, 0.0, 0.0
        for j in range(phases):
            eta = y + inverse_shift(y, TWO_PI * j / phases, gamma, y_hat_coeff)
            for alpha in range(part.count):
                pr = cell_reference_pair(params, part, alpha, eta)
                rep = oscillatory_expectation(pr, obs, 1, eps=eps)
                e = abs(rep.value - obs.mean)
                if e >= worst:
                    worst, we = e, rep.error_estimate
                    wb = obs.sup_norm * (c1_probability(pr, cp) + 1 / l_hat(pr, cp))
        errs.append(worst)
        bounds.append(wb)
        qerr.append(we)
    errs = np.array(errs)
    if np.all(errs == 0):
        slope = stderr = float("nan")
        r2 = 1.0
    else:
        slope, stderr, _, r2 = loglog_fit(y_grid, errs)
    return OneStepScan(np.asarray(y_grid, float), errs, np.array(bounds), np.array(qerr), slope, stderr, r2)


# ---------------------------------------------------------------------------
# Lemma E0

@dataclass
class E0Verdict:
    status: str                   # 'pass', 'hypothesis_violation', 'conclusion_failure'
    hypothesis_ok: bool
    conclusion_ok: Optional[bool]
    lhs: float
    bound: float
    slack: float
    worst_z: Optional[float]
    reason: str = ""


def e0_bound(total, lam, C, alpha):
    if alpha < 1:
        return total * (C + 1) * lam ** alpha / (1 - alpha)
    return total * (C + 1) * lam * abs(math.log(lam))


def e0_minimal_constant(weights, f_values, lam, alpha):
    """Smallest C for which the tail hypothesis holds (exact, over all jump points)."""
    w = np.asarray(weights, float)
    f = np.asarray(f_values, float)
    total = w.sum()
    order = np.argsort(f)[::-1]
    fs, cw = f[order], np.cumsum(w[order])
    # mu{f > z lam} at z just below f_i / lam equals the mass of values >= f_i
    z = fs / lam
    mask = (z > 1) & (z <= 1 / lam * (1 + 1e-15))
    cands = [cw[mask] * z[mask] ** alpha / total] if mask.any() else []
    at_one = w[f > lam].sum() / total
    return float(max([at_one] + [c.max() for c in cands]))


def lemma_e0_check(weights, f_values, lam, C, alpha) -> E0Verdict:
    """Check the hypothesis of the E0 inequality exactly and, if it holds, the conclusion.

    The tail function z -> mu{f > z lam} is a step function, so the hypothesis is
    checked at z = 1 and at the left limits of every jump in [1, 1/lam]. For
    alpha = 1 the stated bound requires lam <= 1/e (it is smaller than the bound
    the argument actually gives otherwise); larger lam is reported as a
    hypothesis violation with that reason.
    """
    w = np.asarray(weights, float)
    f = np.asarray(f_values, float)
    if not (0 < lam < 1 and 0 < alpha <= 1 and C > 0):
        raise ValueError("need 0 < lambda < 1, 0 < alpha <= 1, C > 0")
    if np.any(w < 0) or np.any((f < 0) | (f > 1)):
        raise ValueError("weights must be non-negative and f must take values in [0, 1]")
    total = float(w.sum())
    lhs = float(np.dot(w, f))
    bound = e0_bound(total, lam, C, alpha)
    if alpha == 1 and lam > math.exp(-1):
        return E0Verdict("hypothesis_violation", False, None, lhs, bound, bound - lhs, None,
                         "lambda above 1/e with alpha = 1")
    needed = e0_minimal_constant(w, f, lam, alpha)
    if needed > C * (1 + 1e-12):
        order = np.argsort(f)[::-1]
        fs, cw = f[order], np.cumsum(w[order])
        z = fs / lam
        viol = (z > 1) & (z <= 1 / lam) & (cw > total * C * z ** -alpha)
        wz = float(z[viol][0]) if viol.any() else 1.0
        return E0Verdict("hypothesis_violation", False, None, lhs, bound, bound - lhs, wz,
                         f"tail hypothesis needs C >= {needed:.6g}")
    ok = lhs <= bound * (1 + 1e-12)
    return E0Verdict("pass" if ok else "conclusion_failure", True, ok, lhs, bound, bound - lhs, None)


@dataclass
class E0Dataset:
    weights: np.ndarray
    f_values: np.ndarray
    lam: float
    label: str
    C: float = float("nan")

    def check(self, alpha=1.0) -> "E0Verdict":
        return lemma_e0_check(self.weights, self.f_values, self.lam, self.C, alpha)


def e0_dataset_from_pair(pair: BasicPair, label="") -> E0Dataset:
    """Intervals J_k between consecutive zeros of the image angle mod 2 pi, off the slow set.

    With Theta = image angle along the pair and L = sup |Theta'|, the slow set is
    D = {|Theta'| < L^{1/2}}, L_hat = inf of |Theta'| off D, and L_hat_k the
    infimum over J_k. Item weights are the masses of J_k, values L_hat / L_hat_k,
    and lambda = L_hat / L.
    """
    model = _PhaseModel(pair, 1)
    x = pair.nodes(8193)
    rate = np.abs(model.dT(x))
    L = float(rate.max())
    slow = rate < math.sqrt(L)
    # cut points: Theta = 0 mod 2 pi, on monotone branches
    z = _l1_zeros(model, pair.lo, pair.hi)
    cuts = [pair.lo] + z + [pair.hi]
    pts = []
    for u, v in zip(cuts[:-1], cuts[1:]):
        Tu, Tv = model.frame + model.T(u), model.frame + model.T(v)
        m0, m1 = math.ceil(min(Tu, Tv) / TWO_PI), math.floor(max(Tu, Tv) / TWO_PI)
        if m1 >= m0:
            tg = np.arange(m0, m1 + 1) * TWO_PI - model.frame
            pts.append(_invert_monotone(model.T, model.dT, tg, u, v))
    pts = np.sort(np.concatenate(pts)) if pts else np.array([])
    a, b = pts[:-1], pts[1:]
    # drop intervals touching the slow set: rate at both ends and the middle must be fast
    thr = math.sqrt(L)
    mid = 0.5 * (a + b)
    ra, rb, rm = (np.abs(model.dT(t)) for t in (a, b, mid))
    keep = (ra >= thr) & (rb >= thr) & (rm >= thr)
    for zz in z:
        keep &= ~((a <= zz) & (zz <= b))
    a, b = a[keep], b[keep]
    lk = np.minimum(np.minimum(np.abs(model.dT(a)), np.abs(model.dT(b))), np.abs(model.dT(0.5 * (a + b))))
    off = ~slow
    l_hat_val = float(rate[off].min()) if off.any() else thr
    l_hat_val = min(l_hat_val, float(lk.min())) if len(lk) else l_hat_val
    weights = np.atleast_1d(pair.mass(a, b) if len(a) else np.zeros(0))
    f = l_hat_val / lk
    lam = l_hat_val / L
    C = e0_minimal_constant(weights, f, lam, 1.0) if len(f) and 0 < lam < 1 else float("nan")
    return E0Dataset(weights, f, lam, label, C)


def critical_cells(partition) -> List[int]:
    """Cells with an endpoint at a multiple of pi, where the image angle has a critical point."""
    cells = []
    for j in range(partition.count):
        lo, hi = partition.edges[j], partition.edges[j + 1]
        if any(abs(t - m * math.pi) < 1e-9 for t in (lo, hi) for m in range(3)):
            cells.append(j)
    return cells


def shipped_e0_datasets(gammas=(2.5, 3.0), y_hats=(1e3, 1e4), A=1.0, partition=None) -> List[E0Dataset]:
    """E0 datasets from reference pairs over the critical cells.

    Cells away from kpi carry no slow set (L_hat is comparable with L), and the
    argument never invokes the inequality there, so they are not shipped.
    """
    from .decomposition import make_standard_partition
    partition = partition or make_standard_partition()
    out = []
    for g in gammas:
        params = MapParams(A=A, gamma=g)
        for yh in y_hats:
            for j in critical_cells(partition):
                pr = cell_reference_pair(params, partition, j, yh)
                out.append(e0_dataset_from_pair(pr, f"gamma={g} y_hat={yh:g} cell={j}"))
    return out


# ---------------------------------------------------------------------------
# Psi tables

def nu_min(beta) -> int:
    """Smallest integer strictly greater than 1 / (2 (beta - 1/2))."""
    if beta <= 0.5:
        raise ValueError("nu(beta) is defined for beta > 1/2 only")
    return int(math.floor(0.5 / (beta - 0.5))) + 1


@dataclass
class PsiTable:
    alpha: int
    k: int
    y_hat: float
    eta_grid: np.ndarray
    y_mod: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    periods: int
    points_per_period: int
    params: MapParams = None
    diagnostics: dict = field(default_factory=dict)

    def to_rows(self):
        return [(self.alpha, self.k, repr(float(e)), float(m), float(v), float(s))
                for e, m, v, s in zip(self.eta_grid, self.y_mod, self.values, self.stderr)]


def psi_band(y_hat, A, n):
    """S = [y_hat - 2A(n+1), y_hat + 2A(n+2)]."""
    return y_hat - 2 * A * (n + 1), y_hat + 2 * A * (n + 2)


def psi_eta_grid(y_hat, params: MapParams, periods=2, points_per_period=16):
    """Heights (extended precision) whose Y values are equally spaced over ``periods``
    periods of 2 pi starting from Y(y_hat)."""
    n = periods * points_per_period
    two_pi = 2 * np.arccos(np.longdouble(-1))
    shifts = two_pi * np.arange(n, dtype=np.longdouble) / points_per_period
    base = np.longdouble(y_hat)
    return base + inverse_shift(base, shifts, params.gamma, np.longdouble(params.y_hat_coeff))


def psi_compute(alpha, k, eta_grid, observable: ObservableLike, params: MapParams,
                cp: Optional[CriticalParams] = None, partition=None, n=None, method="quadrature",
                periods=2, eps=None, mc_samples=10 ** 5, seed=0) -> PsiTable:
    """Psi_{alpha,k}(eta) = E over the cell reference pair through (x_bar, eta) of A o F^k 1_{tau >= k-1}."""
    from .decomposition import make_standard_partition
    cp = cp or default_critical_params(params)
    partition = partition or make_standard_partition(cp.delta)
    beta = params.beta()
    n = n if n is not None else max(k, nu_min(beta) if beta > 0.5 else k)
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    eta = np.asarray(eta_grid)
    if eta.dtype != np.longdouble:
        eta = eta.astype(float)
    if np.any(np.diff(eta) <= 0):
        raise ValueError("eta grid must be strictly increasing")
    y_hat = float(eta[0])
    S = psi_band(y_hat, params.A, n)
    if eta[-1] > S[1] or S[0] < params.y_star:
        raise ValueError("eta grid must lie in S and S above y*")
    obs = as_observable(observable)
    vals, errs = [], []
    diag = {"n_windows": 0, "fallback": 0, "max_edge_ratio": 0.0}
    for j, e in enumerate(eta):
        pr = cell_reference_pair(params, partition, alpha, e)
        if method == "montecarlo" or k > 2:
            v, se = montecarlo_expectation(pr, obs, k, gate_tau=True, n_samples=mc_samples,
                                           seed=seed + j, cp=cp)
        else:
            dom = gated_domain(pr, cp) if k == 2 else None
            rep = oscillatory_expectation(pr, obs, k, dom, eps)
            v, se = rep.value, rep.error_estimate
            diag["n_windows"] += rep.n_windows
            diag["fallback"] += rep.fallback_stretches
            diag["max_edge_ratio"] = max(diag["max_edge_ratio"], rep.max_edge_ratio)
        vals.append(v)
        errs.append(se)
    ym = np.array([phase_mod(e, params) for e in eta])
    ppp = len(eta) // periods
    return PsiTable(alpha, k, y_hat, eta, ym, np.array(vals), np.array(errs), periods, ppp, params, diag)


@dataclass
class PeriodicityReport:
    discrepancy: float
    relative: float
    y_hat: float


def psi_periodicity_check(table: PsiTable) -> PeriodicityReport:
    """max |Psi(eta_1) - Psi(eta_0)| over grid pairs with equal Y mod 2 pi."""
    if table.periods < 2 or len(table.values) < 2 * table.points_per_period:
        raise InsufficientSpanError("table must span at least two periods of Y")
    m = table.points_per_period
    v = table.values
    d = float(np.max(np.abs(v[m:] - v[:-m])))
    scale = float(np.max(np.abs(v)))
    return PeriodicityReport(d, d / scale if scale > 0 else 0.0, table.y_hat)


def periodicity_decay(reports: List[PeriodicityReport]):
    """Fitted decay factor of the discrepancy per decade of y_hat."""
    y = np.array([r.y_hat for r in reports])
    d = np.array([r.discrepancy for r in reports])
    slope, se, _, r2 = loglog_fit(y, d)
    return {"slope": slope, "stderr": se, "factor_per_decade": 10 ** (-slope), "r2": r2}


@dataclass
class PsiFourier:
    modes: np.ndarray
    coeffs: np.ndarray
    magnitudes: np.ndarray
    residual: float
    aliasing_bound: float
    aliasing_warning: bool
    y_hat: float


def psi_fourier(table: PsiTable, alias_tol=1e-3) -> PsiFourier:
    """Fourier coefficients of Psi as a function of Y(eta), with Psi = sum_l c_l exp(-i l Y).

    The grid covers ``periods`` periods of Y, so only every ``periods``-th DFT bin is a
    harmonic of Y; the other bins measure the non-periodic part and bound the
    reconstruction error.
    """
    if table.periods < 2:
        raise InsufficientSpanError("table must span at least two periods of Y")
    v = table.values
    N = len(v)
    P = table.periods
    # Y_j = y0 + 2 pi j / points_per_period, so exp(-i l Y_j) sits in FFT bin -P l
    y0 = table.y_mod[0]
    spec = np.fft.fft(v) / N
    bins = np.fft.fftfreq(N, 1.0 / N).astype(int)
    harm = bins % P == 0
    modes = np.sort(-bins[harm] // P)
    coeffs_l = np.array([spec[(-P * l) % N] * np.exp(1j * l * y0) for l in modes])
    recon = np.zeros(N, complex)
    j = np.arange(N)
    for l, c in zip(modes, coeffs_l):
        recon += c * np.exp(-1j * l * (y0 + TWO_PI * j / table.points_per_period))
    residual = float(np.max(np.abs(recon.real - v)))
    bound = float(np.sum(np.abs(spec[~harm])))
    top = np.abs(coeffs_l[np.abs(modes) == np.abs(modes).max()]).max() if len(modes) else 0.0
    warn = bool(top > alias_tol * max(np.abs(coeffs_l).max(), 1e-300))
    return PsiFourier(modes, coeffs_l, np.abs(coeffs_l), residual, bound + 1e-15 * N * np.abs(v).max(),
                      warn, table.y_hat)


def fourier_decay(fouriers: List[PsiFourier], observable: Observable, mode=1):
    """Log-log fit of |Psi_hat^{(mode)}| / |A_mode| against y_hat."""
    a = abs(observable.coeffs.get(mode, 0))
    if a == 0:
        raise ValueError("observable has no such mode")
    y = np.array([f.y_hat for f in fouriers])
    m = np.array([f.magnitudes[list(f.modes).index(mode)] / a for f in fouriers])
    slope, se, icpt, r2 = loglog_fit(y, m)
    return {"slope": slope, "stderr": se, "gate": slope + 2 * se, "r2": r2,
            "y_hat": y.tolist(), "magnitude": m.tolist()}
