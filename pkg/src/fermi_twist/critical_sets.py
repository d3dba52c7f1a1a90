"""Critical sets C1, C2, the core, the augmented sets and their Lebesgue measure.

A point is critical when the adapted slope h~_1 (one step) or the product of
two consecutive adapted slopes is too small for the map to expand curves.
"""

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional

import numpy as np

from .core_map import MapParams, big_y_inverse, big_y_prime, big_y
from .numerics import TWO_PI, loglog_fit


class SampleSizeError(RuntimeError):
    """Monte Carlo estimate too noisy for the requested use."""


class EmptyCellError(ValueError):
    """The requested cell lies outside the studied region."""


@dataclass(frozen=True)
class CriticalParams:
    """Constants governing critical sets, partitions and standardness.

    K1_hat and K2_hat default to 4*K1 and 4*K2.
    """

    K1: float = 10.0
    K2: float = 512.0
    K2_bar: float = 8.0
    K1_hat: Optional[float] = None
    K2_hat: Optional[float] = None
    Delta1: float = 1.0
    Delta2: float = 1.0
    delta: float = 0.5
    D: float = 5.0
    eps_confuse: float = 0.1

    def __post_init__(self):
        if self.K1_hat is None:
            object.__setattr__(self, "K1_hat", 4.0 * self.K1)
        if self.K2_hat is None:
            object.__setattr__(self, "K2_hat", 4.0 * self.K2)
        if not self.K1_hat > self.K1:
            raise ValueError("K1_hat must exceed K1")
        if not self.K2_hat > self.K2:
            raise ValueError("K2_hat must exceed K2")
        if not self.K2_bar > 4:
            raise ValueError("K2_bar must exceed 4")
        if not 0 < self.delta < np.pi / 4:
            raise ValueError("delta must lie in (0, pi/4)")

    def to_dict(self):
        return {k: getattr(self, k) for k in ("K1", "K2", "K2_bar", "K1_hat", "K2_hat",
                                               "Delta1", "Delta2", "delta", "D", "eps_confuse")}


@dataclass
class CriticalClass:
    in_C1: bool
    in_C2: bool
    in_core_C2: bool
    in_C1_hat: bool
    in_C2_hat: bool
    in_C2_star: bool
    h_tilde_here: float
    h_tilde_next: float
    mode: str


def image_angle(x, y, params: MapParams):
    """x + Y(y) reduced mod 2pi, evaluated in extended precision."""
    x = np.asarray(x, dtype=np.longdouble)
    y = np.asarray(y, dtype=np.longdouble)
    v = x + params.y_hat_coeff * y ** params.gamma
    two_pi = 2 * np.arccos(np.longdouble(-1))
    return np.asarray(np.mod(v, two_pi), dtype=float)


def classify_arrays(x, y, params: MapParams, cp: CriticalParams, mode="exact", x1=None):
    """Vectorized classification; returns a dict of flag arrays and slopes.

    ``x1`` may supply the image angle when it is known exactly (cell sampling).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = params.A
    if x1 is None:
        x1 = image_angle(x, y, params)
    y1 = y + 2 * A * np.cos(x1)
    d0 = big_y_prime(y, params)
    d1 = big_y_prime(y1, params)
    if mode == "exact":
        yprev = y - 2 * A * np.cos(x)
        h0 = -2 * A * np.sin(x) + 1 / big_y_prime(yprev, params) + 1 / d0
        h1 = -2 * A * np.sin(x1) + 1 / d0 + 1 / d1
    elif mode == "approximate":
        h0 = -2 * A * np.sin(x) + 2 / d0
        h1 = -2 * A * np.sin(x1) + 2 / d1
    else:
        raise ValueError("mode must be 'exact' or 'approximate'")
    a0 = np.abs(h0)
    prod = a0 * np.abs(h1) * d0
    rs = d0 ** -0.5
    c1 = a0 < cp.K1 * rs
    c1h = a0 < cp.K1_hat * rs
    return {
        "h0": h0, "h1": h1, "y1": y1, "x1": x1,
        "in_C1": c1,
        "in_C2": c1 & (prod < cp.K2),
        "in_core_C2": a0 * d0 < cp.K2_bar,
        "in_C1_hat": c1h,
        "in_C2_star": c1h & (prod < cp.K2),
        "in_C2_hat": c1h & (prod < cp.K2_hat),
    }


def classify(x, y, params: MapParams, cp: CriticalParams, mode="exact") -> CriticalClass:
    """Classify a single point (x, y) with y >= y*."""
    f = classify_arrays(np.array([x]), np.array([y]), params, cp, mode)
    return CriticalClass(
        in_C1=bool(f["in_C1"][0]), in_C2=bool(f["in_C2"][0]), in_core_C2=bool(f["in_core_C2"][0]),
        in_C1_hat=bool(f["in_C1_hat"][0]), in_C2_hat=bool(f["in_C2_hat"][0]),
        in_C2_star=bool(f["in_C2_star"][0]),
        h_tilde_here=float(f["h0"][0]), h_tilde_next=float(f["h1"][0]), mode=mode)


def strip_halfwidth(y_lo, params: MapParams, K):
    """Half-width of an x-window around 0 and pi containing {|h~_1| < K Y'^{-1/2}} for y >= y_lo.

    Returns None when the window would cover the whole circle.
    """
    A = params.A
    if A <= 0:
        return None
    ylow = max(y_lo - 2 * A, params.L)
    s = (K * big_y_prime(y_lo, params) ** -0.5 + 2 / big_y_prime(ylow, params)) / (2 * A)
    s *= 1.25
    if s >= 1:
        return None
    return float(np.arcsin(s))


def _window_samples(rng, n, w, centers):
    """Uniform x in the union of (c - w, c + w); returns (x, total_width)."""
    if w is None:
        return rng.uniform(0, TWO_PI, n), TWO_PI
    c = rng.choice(np.asarray(centers), size=n)
    return c + rng.uniform(-w, w, n), 2 * w * len(centers)


# ---------------------------------------------------------------------------
# K2 search and configuration audit

def _witness_samples(params: MapParams, K1, K1_hat, n_samples, rng):
    """Points in the augmented C1 strips, half of them with image angle in the C1 window.

    Heights are log-uniform on [y*, 100 y*]. The targeted half is built from
    (x, x1) with x + Y(y) = x1 + 2 pi m, which keeps the image angle exact.
    """
    w = strip_halfwidth(params.y_star, params, K1_hat)
    half = n_samples // 2
    ys = params.y_star * 10 ** rng.uniform(0, 2, half)
    xa, _ = _window_samples(rng, half, w, [0.0, np.pi])
    x1a = image_angle(xa, ys, params)
    y_t = params.y_star * 10 ** rng.uniform(0, 2, n_samples - half)
    xb, _ = _window_samples(rng, n_samples - half, w, [0.0, np.pi])
    w1 = strip_halfwidth(params.y_star, params, K1)
    x1b, _ = _window_samples(rng, n_samples - half, w1, [0.0, np.pi])
    x1b = np.mod(x1b, TWO_PI)
    m = np.ceil((big_y(y_t, params) + xb - x1b) / TWO_PI)
    yb = big_y_inverse(x1b + TWO_PI * m - xb, params)
    return (np.concatenate([xa, xb]), np.concatenate([ys, yb]), np.concatenate([x1a, x1b]))


def required_k2(params: MapParams, K1=10.0, K2_bar=8.0, K1_hat=None, n_samples=10 ** 6, seed=0):
    """Largest product |h~_0 h~_1| Y'(y_0) over sampled points that must lie in C2.

    Points sampled in the core and in F^{-1}C1 intersected with C1_hat.
    """
    K1_hat = 4 * K1 if K1_hat is None else K1_hat
    rng = np.random.default_rng(seed)
    x, ys, x1 = _witness_samples(params, K1, K1_hat, n_samples, rng)
    probe = CriticalParams(K1=K1, K2=1e300 / 4, K2_bar=K2_bar, K1_hat=K1_hat, K2_hat=1e300)
    f = classify_arrays(x, ys, params, probe, x1=x1)
    d0 = big_y_prime(ys, params)
    prod = np.abs(f["h0"] * f["h1"]) * d0
    core = f["in_core_C2"]
    img_c1 = np.abs(f["h1"]) < K1 * big_y_prime(f["y1"], params) ** -0.5
    needed = core | (img_c1 & f["in_C1_hat"])
    return float(prod[needed].max()) if np.any(needed) else 0.0


@lru_cache(maxsize=32)
def default_critical_params(params: MapParams, n_samples=10 ** 6, seed=0) -> CriticalParams:
    """Shipped constants: K1 = 10, K2_bar = 8, K2 = smallest power of two above the sampled requirement."""
    need = required_k2(params, n_samples=n_samples, seed=seed)
    k = 1
    while 2.0 ** k <= need:
        k += 1
    return CriticalParams(K2=2.0 ** k)


def audit_configuration(params: MapParams, cp: CriticalParams, n_samples=10 ** 6, seed=1):
    """Check C2bar in C2, C1 & F^{-1}C1 in C2, F^{-1}C1 & C1_hat in C2* on sampled witnesses."""
    rng = np.random.default_rng(seed)
    x, ys, x1 = _witness_samples(params, cp.K1, cp.K1_hat, n_samples, rng)
    f = classify_arrays(x, ys, params, cp, x1=x1)
    img_c1 = np.abs(f["h1"]) < cp.K1 * big_y_prime(f["y1"], params) ** -0.5
    checks = {
        "core_in_C2": f["in_core_C2"] & ~f["in_C2"],
        "C1_and_preimage_C1_in_C2": f["in_C1"] & img_c1 & ~f["in_C2"],
        "preimage_C1_and_C1_hat_in_C2_star": f["in_C1_hat"] & img_c1 & ~f["in_C2_star"],
    }
    report = {}
    for name, bad in checks.items():
        idx = np.flatnonzero(bad)
        report[name] = {"violations": int(len(idx)),
                        "witness": None if len(idx) == 0 else (float(x[idx[0]]), float(ys[idx[0]]))}
    report["ok"] = all(v["violations"] == 0 for v in report.values() if isinstance(v, dict))
    return report


# ---------------------------------------------------------------------------
# Monte Carlo measures

def strip_measure_c1(n, params: MapParams, cp: CriticalParams, n_samples=10 ** 5, seed=0,
                     which="in_C1_hat", strict=True):
    """Lebesgue measure of the augmented C1 inside the band y in [n, n+1].

    Returns (measure, std_error).
    """
    if n < params.y_star:
        raise EmptyCellError("band below y*")
    rng = np.random.default_rng([seed, int(n)])
    K = cp.K1_hat if which == "in_C1_hat" else cp.K1
    w = strip_halfwidth(n, params, K)
    x, width = _window_samples(rng, n_samples, w, [0.0, np.pi])
    y = rng.uniform(n, n + 1, n_samples)
    f = classify_arrays(x, y, params, cp)
    hit = f[which]
    p = hit.mean()
    m = width * p
    se = width * np.sqrt(p * (1 - p) / n_samples)
    if strict and (p == 0 or se / m > 0.1):
        raise SampleSizeError(f"relative error too large at band {n}")
    return float(m), float(se)


@dataclass
class CellMeasure:
    i: int
    n: int
    y_hat_n: float
    measure: float
    std_error: float
    n_samples: int
    seed: int
    parts: dict = field(default_factory=dict)


def cell_index_at(y, params: MapParams):
    """Index n of the first half-turn cell x + Y(y) in [n pi, (n+1) pi] at or above height y."""
    return int(np.ceil(big_y(y, params) / np.pi))


def cell_measure_c2(i, n, params: MapParams, cp: CriticalParams, n_samples=10 ** 5, seed=0,
                    split=False, strict=True) -> CellMeasure:
    """Measure of the augmented C2 inside cell (i, n).

    The cell is the part of the strip around x = i*pi with x + Y(y) in
    [n pi, (n+1) pi]. Sampling uses coordinates (x, u) with x + Y(y) = (n+u) pi,
    so the image angle is exact and dA = pi / Y'(y) dx du.
    """
    rng = np.random.default_rng([seed, int(i), int(n)])
    c = i * np.pi
    y_guess = big_y_inverse(max(n * np.pi - c, 1e-300), params)
    if y_guess < params.y_star:
        raise EmptyCellError("cell below y*")
    w = strip_halfwidth(y_guess, params, cp.K1_hat)
    if w is None:
        w = np.pi / 2
    x = c + rng.uniform(-w, w, n_samples)
    u = rng.uniform(0, 1, n_samples)
    y = big_y_inverse(n * np.pi + np.pi * u - x, params)
    x1 = np.mod(n, 2) * np.pi + np.pi * u
    f = classify_arrays(x, y, params, cp, x1=x1)
    hit = f["in_C2_hat"]
    jac = np.pi / big_y_prime(y, params)
    vals = hit * jac
    area = 2 * w
    m = area * vals.mean()
    se = area * vals.std(ddof=1) / np.sqrt(n_samples)
    if not np.any(hit):
        if strict:
            raise SampleSizeError(f"no samples hit cell ({i}, {n})")
        return CellMeasure(i, n, float(y.min()), 0.0, float(se), n_samples, seed)
    if strict and se / m > 0.1:
        raise SampleSizeError(f"relative error too large in cell ({i}, {n})")
    parts = {}
    if split:
        a1 = np.abs(f["h1"])
        p1 = hit & (a1 < cp.K2_hat / cp.K1_hat * big_y_prime(f["y1"], params) ** -0.5)
        p2 = hit & ~p1 & (a1 < params.A)
        p3 = hit & ~p1 & ~p2
        for name, mask in (("C2_prime", p1), ("C2_second", p2), ("C2_third", p3)):
            parts[name] = float(area * (mask * jac).mean())
    return CellMeasure(i, n, float(y[hit].min()), float(m), float(se), n_samples, seed, parts)


@dataclass
class PartialSums:
    kind: str
    n_values: np.ndarray
    terms: np.ndarray
    partial_sums: np.ndarray
    tail_exponent: float
    tail_stderr: float
    verdict: str


def _verdict(p, se):
    if p - 2 * se > 1:
        return "convergent"
    if p + 2 * se < 1:
        return "divergent"
    return "inconclusive"


def total_measure_partial_sum(params: MapParams, cp: CriticalParams, n_max, kind="C2_hat",
                              n_samples=10 ** 5, seed=0, n_eval=24) -> PartialSums:
    """Partial sums of per-cell (or per-band) measures of the augmented critical sets.

    ``kind='C2_hat'`` sums cells (both strips) starting at the first cell above y*;
    ``kind='C1_hat'`` sums unit bands y in [n, n+1] from y* up to n_max. When the
    range is long, terms are evaluated at geometric indices and summed via the
    piecewise power-law interpolant. The tail is tagged by a fitted decay exponent
    p (convergent iff p - 2 se > 1).
    """
    if n_max < 10:
        raise ValueError("n_max must be at least 10")
    if kind == "C2_hat":
        n0 = int(np.ceil(big_y(params.y_star, params) / np.pi)) + 1
        n_last = n0 + n_max - 1

        def term(n):
            return sum(cell_measure_c2(i, n, params, cp, n_samples, seed, strict=False).measure
                       for i in (0, 1))
    elif kind == "C1_hat":
        n0 = int(np.ceil(params.y_star))
        n_last = int(n_max)

        def term(n):
            return strip_measure_c1(n, params, cp, n_samples, seed, strict=False)[0]
    else:
        raise ValueError("kind must be 'C2_hat' or 'C1_hat'")

    count = n_last - n0 + 1
    if count <= 64:
        ns = np.arange(n0, n_last + 1)
        terms = np.array([term(n) for n in ns])
        sums = np.cumsum(terms)
    else:
        ns = np.unique(np.round(np.geomspace(n0, n_last, n_eval)).astype(np.int64))
        terms = np.array([term(n) for n in ns])
        sums = np.empty(len(ns))
        sums[0] = terms[0]
        for j in range(1, len(ns)):
            a, b = ns[j - 1], ns[j]
            ta, tb = max(terms[j - 1], 1e-300), max(terms[j], 1e-300)
            s = np.log(tb / ta) / np.log(b / a)
            # sum over a < n <= b of ta (n/a)^s, approximated by the integral
            if abs(s + 1) < 1e-9:
                seg = ta * a * np.log((b + 0.5) / (a + 0.5))
            else:
                seg = ta * a / (s + 1) * (((b + 0.5) / a) ** (s + 1) - ((a + 0.5) / a) ** (s + 1))
            sums[j] = sums[j - 1] + seg
    k = max(3, len(ns) // 3)
    sel = slice(len(ns) - min(len(ns), 2 * k), len(ns))
    pos = terms[sel] > 0
    if pos.sum() >= 3:
        slope, se, _, _ = loglog_fit(ns[sel][pos], terms[sel][pos])
        p = -slope
    else:
        p, se = np.nan, np.inf
    return PartialSums(kind, ns, terms, sums, float(p), float(se), _verdict(p, se))


def measure_slope_c1(params, cp, y_values, n_samples=10 ** 5, seed=0):
    """Fitted log-log slope of augmented-C1 band measure against height."""
    m = np.array([strip_measure_c1(int(y), params, cp, n_samples, seed)[0] for y in y_values])
    slope, se, _, _ = loglog_fit(np.asarray(y_values, float), m)
    return slope, se, m


def measure_slope_c2(params, cp, y_targets, n_samples=10 ** 5, seed=0, i=0):
    """Fitted log-log slope of augmented-C2 cell measure against the cell height y_hat_n."""
    cells = [cell_measure_c2(i, cell_index_at(y, params), params, cp, n_samples, seed)
             for y in y_targets]
    yh = np.array([c.y_hat_n for c in cells])
    m = np.array([c.measure for c in cells])
    slope, se, _, _ = loglog_fit(yh, m)
    return slope, se, cells
