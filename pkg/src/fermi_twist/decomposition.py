"""Decomposition of the image of a standard pair into aligned standard pairs,
boundary pairs, stand-by pairs and the invalid set Z, and the critical time.

Image pieces are kept lazily: a run of aligned cells is stored as one block
(first and last cell index, preimage range, total mass); individual cells are
materialised on demand. Image coordinates are lifted: T(s) is the x-coordinate
of F(s, psi(s)) in a frame where the image of the left end of the pair lies in
[0, 2 pi), and partition cells are [j w, (j + 1) w] for integer j.
"""

from dataclasses import dataclass, field
import json
import math
from typing import List, Optional

import numpy as np
from scipy.optimize import brentq

from . import _engine
from .core_map import MapParams, yp
from .critical_sets import CriticalParams, classify_arrays
from .numerics import TWO_PI, cos_diff, fd_first, power_diff
from .standard_pairs import BasicPair, ImagePair, check_standard, phase_mod


class ResolutionError(RuntimeError):
    """A cut point could not be bracketed."""


class StandardnessViolation(RuntimeError):
    """A resolved stand-by piece failed the standardness check."""


# ---------------------------------------------------------------------------
# partition

@dataclass(frozen=True)
class StandardPartition:
    delta: float
    count: int

    @property
    def width(self):
        return TWO_PI / self.count

    @property
    def edges(self):
        return np.arange(self.count + 1) * self.width

    def intervals(self):
        e = self.edges
        return list(zip(e[:-1], e[1:]))

    def cell_index(self, t):
        """Lifted cell index j with t in [j w, (j + 1) w)."""
        return np.floor(np.asarray(t) / self.width).astype(np.int64)

    def alpha(self, j):
        """Cell label on the circle."""
        return np.mod(j, self.count)


def make_standard_partition(delta=0.5) -> StandardPartition:
    """Equal cells with width in (delta/4, delta/2); count ceil(2 pi / (3 delta / 8))."""
    if not 0 < delta < np.pi / 4:
        raise ValueError("delta must lie in (0, pi/4)")
    m = int(np.ceil(TWO_PI / (3 * delta / 8)))
    while TWO_PI / m >= delta / 2:
        m += 1
    while TWO_PI / m <= delta / 4:
        m -= 1
    return StandardPartition(float(delta), m)


# ---------------------------------------------------------------------------
# result containers

@dataclass
class AlignedBlock:
    """Consecutive aligned cells j_first..j_last of the image of one outside component."""
    j_first: int
    j_last: int
    pre_lo: float
    pre_hi: float
    mass: float
    orientation: int

    @property
    def count(self):
        return self.j_last - self.j_first + 1


@dataclass
class BoundaryPiece:
    side: str               # '-' at the low end of an image range, '+' at the high end
    img_lo: float
    img_hi: float
    pre_lo: float
    pre_hi: float
    mass: float
    merged: bool


@dataclass
class StandbyPiece:
    pre_lo: float
    pre_hi: float
    mass: float


@dataclass
class DecompositionResult:
    pair: BasicPair
    partition: StandardPartition
    aligned: List[AlignedBlock]
    boundary: List[BoundaryPiece]
    standby: List[StandbyPiece]
    z_intervals: list
    invalid_mass: float
    c1_window: Optional[tuple]
    gamma_star: Optional[tuple]
    frame: float
    diagnostics: dict = field(default_factory=dict)

    def total_mass(self):
        return (sum(b.mass for b in self.aligned) + sum(b.mass for b in self.boundary)
                + sum(s.mass for s in self.standby) + self.invalid_mass)

    def image(self, s):
        """Lifted image coordinate T(s)."""
        return self.frame + self.pair.image_offset(s, self.pair.lo)

    def cell_edges_preimage(self, block: AlignedBlock, j=None):
        """Preimages of the edges of the requested cells (all cells when j is None)."""
        js = np.arange(block.j_first, block.j_last + 2) if j is None else np.asarray(j)
        targets = js * self.partition.width
        return _solve_image(self, targets, block.pre_lo, block.pre_hi)

    def cell_masses(self, block: AlignedBlock, limit=10 ** 6):
        if block.count > limit:
            raise ValueError("block too large to enumerate")
        e = np.sort(self.cell_edges_preimage(block))
        return np.asarray(self.pair.mass(e[:-1], e[1:]))

    def cell_pair(self, block: AlignedBlock, j) -> ImagePair:
        e = self.cell_edges_preimage(block, [j, j + 1])
        a, b = min(e), max(e)
        return ImagePair(self.pair, a, b, base_phase=float(self.image(a)))

    def boundary_pair(self, piece: BoundaryPiece) -> ImagePair:
        return ImagePair(self.pair, piece.pre_lo, piece.pre_hi,
                         base_phase=float(self.image(piece.pre_lo)))

    def locate(self, x):
        """Which part of the decomposition the image of (x, psi(x)) falls in.

        Returns (kind, (img_lo, img_hi) or gap preimage) with kind in
        {'aligned', 'boundary', 'standby', 'invalid'}.
        """
        for s in self.standby:
            if s.pre_lo <= x <= s.pre_hi:
                return "standby", (s.pre_lo, s.pre_hi)
        for z in self.z_intervals:
            if z[0] <= x <= z[1]:
                return "invalid", z
        for b in self.boundary:
            if b.pre_lo <= x <= b.pre_hi:
                return "boundary", (b.img_lo, b.img_hi)
        for b in self.aligned:
            if b.pre_lo <= x <= b.pre_hi:
                j = int(self.partition.cell_index(self.image(x)))
                j = min(max(j, b.j_first), b.j_last)
                w = self.partition.width
                return "aligned", (j * w, (j + 1) * w)
        raise ValueError("point not covered by the decomposition")

    def audit_record(self):
        return {"n_aligned_cells": int(sum(b.count for b in self.aligned)),
                "aligned_mass": float(sum(b.mass for b in self.aligned)),
                "boundary_masses": [float(b.mass) for b in self.boundary],
                "standby_masses": [float(s.mass) for s in self.standby],
                "invalid_mass": float(self.invalid_mass),
                "total_mass": float(self.total_mass()),
                "c1_window": self.c1_window, "gamma_star": self.gamma_star,
                **self.diagnostics}


def _solve_image(res, targets, a, b):
    """Solve T(s) = target for s in [a, b] (T monotone there), vectorized Newton-bisection."""
    pair = res.pair
    targets = np.atleast_1d(np.asarray(targets, float))
    lo = np.full(targets.shape, a)
    hi = np.full(targets.shape, b)
    Ta, Tb = res.image(a), res.image(b)
    inc = Tb > Ta
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        Tm = res.image(mid)
        go_right = (Tm < targets) == inc
        lo = np.where(go_right, mid, lo)
        hi = np.where(go_right, hi, mid)
        if np.all(hi - lo <= 4e-16 * (1 + np.abs(mid))):
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# geometry along the pair

class _Curve:
    """Point classification quantities along a pair, in a fixed image frame."""

    def __init__(self, pair: BasicPair, params: MapParams, cp: CriticalParams):
        self.pair, self.params, self.cp = pair, params, cp
        self.A = params.A
        self.frame = phase_mod(pair.psi(pair.lo), params, pair.lo)

    def T(self, s):
        return self.frame + self.pair.image_offset(s, self.pair.lo)

    def h0(self, s):
        ps = self.pair.psi(s)
        yprev = self.pair.y_prev(s)
        return -2 * self.A * np.sin(s) + 1 / yp(yprev, self.params) + 1 / yp(ps, self.params)

    def g1(self, s, K):
        ps = self.pair.psi(s)
        return np.abs(self.h0(s)) * np.sqrt(yp(ps, self.params)) - K

    def product(self, s):
        ps = self.pair.psi(s)
        X1 = self.T(s)
        y1 = ps + 2 * self.A * np.cos(X1)
        d0 = yp(ps, self.params)
        h0 = self.h0(s)
        h1 = -2 * self.A * np.sin(X1) + 1 / d0 + 1 / yp(y1, self.params)
        return np.abs(h0 * h1) * d0, np.abs(h0) * np.sqrt(d0)

    def in_c2_star(self, s):
        P, q = self.product(s)
        return (P < self.cp.K2) & (q < self.cp.K1_hat)


def _root(f, a, b):
    fa, fb = f(a), f(b)
    if fa == 0:
        return a
    if fb == 0:
        return b
    if np.sign(fa) == np.sign(fb):
        raise ResolutionError("cut point not bracketed")
    return brentq(f, a, b, xtol=1e-16, rtol=9e-16, maxiter=500)


def _c1_window(cv: _Curve, lo, hi, K):
    """{|h0| Y'^{1/2} < K} within [lo, hi] near the nearest multiple of pi, or None."""
    kpi = (math.floor((lo - 0.3) / math.pi) + 1) * math.pi
    if kpi > hi + 0.3:
        return None, None
    zl, zh = max(lo, kpi - 0.1), min(hi, kpi + 0.1)
    if zl > zh:
        zc = lo if kpi < lo else hi
        z = None
    else:
        if np.sign(cv.h0(zl)) != np.sign(cv.h0(zh)):
            z = _root(cv.h0, zl, zh)
            zc = z
        else:
            z = None
            zc = zl if abs(cv.h0(zl)) < abs(cv.h0(zh)) else zh
    g = lambda s: float(cv.g1(s, K))
    if g(zc) >= 0:
        return None, z
    left = lo if g(lo) < 0 else _root(g, max(lo, zc - 0.7), zc)
    right = hi if g(hi) < 0 else _root(g, zc, min(hi, zc + 0.7))
    return (left, right), z


def _cut_structure(a, b, w, delta):
    """Cut [a, b] at multiples of w with short end pieces merged into their neighbours.

    Returns (low_piece_end, high_piece_start, m_lo, m_hi): the low boundary piece is
    [a, low_piece_end], the high one [high_piece_start, b] and aligned cells fill the
    middle. A single piece has low_piece_end = b.
    """
    ja = math.floor(a / w)
    jb = max(math.ceil(b / w) - 1, ja)
    n = jb - ja + 1
    if n == 1:
        return b, b, False, False
    first_len = (ja + 1) * w - a
    last_len = b - jb * w
    m_lo = first_len <= 0.25 * delta
    m_hi = last_len <= 0.25 * delta and (n - int(m_lo)) >= 2
    e_lo = (ja + 1 + int(m_lo)) * w
    e_hi = (jb - int(m_hi)) * w
    if e_lo >= b or e_hi <= a:
        return b, b, m_lo, m_hi
    return e_lo, max(e_hi, e_lo), m_lo, m_hi


def _is_edge(t, w):
    return abs(t / w - round(t / w)) < 1e-12 * max(1.0, abs(t / w))


def _decompose_range(frame, cv, pre_a, pre_b, img_a, img_b, partition, out_aligned, out_boundary):
    """Cut the image of [pre_a, pre_b], whose image ends are img_a = T(pre_a), img_b = T(pre_b)."""
    w, delta = partition.width, partition.delta
    lo_img, hi_img = min(img_a, img_b), max(img_a, img_b)
    inc = img_b > img_a
    p_lo, p_hi = min(pre_a, pre_b), max(pre_a, pre_b)
    pre_of_lo = pre_a if inc else pre_b
    pre_of_hi = pre_b if inc else pre_a
    e_lo, e_hi, m_lo, m_hi = _cut_structure(lo_img, hi_img, w, delta)
    cuts = [c for c in (e_lo, e_hi) if lo_img < c < hi_img]
    sol = dict(zip(cuts, _solve_image(frame, np.array(cuts), p_lo, p_hi))) if cuts else {}
    pre = lambda t: pre_of_lo if t == lo_img else pre_of_hi if t == hi_img else sol[t]
    pieces = []     # (img_a, img_b, merged, side)
    if e_lo >= hi_img:
        pieces.append((lo_img, hi_img, False, "-"))
    else:
        pieces.append((lo_img, e_lo, m_lo, "-"))
        if e_hi > e_lo:
            pieces.append((e_lo, e_hi, False, "aligned"))
        pieces.append((e_hi, hi_img, m_hi, "+"))
    for ia, ib, merged, side in pieces:
        pa, pb = sorted((pre(ia), pre(ib)))
        full_cell = _is_edge(ia, w) and _is_edge(ib, w)
        if side == "aligned" or (full_cell and abs((ib - ia) - w) < 1e-9 * w):
            j0 = int(round(ia / w))
            j1 = int(round(ib / w)) - 1
            out_aligned.append(AlignedBlock(j0, j1, pa, pb, float(cv.pair.mass(pa, pb)),
                                            1 if inc else -1))
        else:
            out_boundary.append(BoundaryPiece(side, ia, ib, pa, pb,
                                              float(cv.pair.mass(pa, pb)), bool(merged)))


class _Frame:
    def __init__(self, cv):
        self.pair = cv.pair
        self.frame = cv.frame

    def image(self, s):
        return self.frame + self.pair.image_offset(s, self.pair.lo)


def _gap_components(cv: _Curve, g_lo, g_hi, z):
    """Components of Gamma* minus C2*, located between consecutive product zeros."""
    markers = []
    sides = []
    if z is not None and g_lo < z < g_hi:
        markers.append(z)
        sides = [(g_lo, z), (z, g_hi)]
    else:
        sides = [(g_lo, g_hi)]
    fr = _Frame(cv)
    for a, b in sides:
        Ta, Tb = cv.T(a), cv.T(b)
        m0 = math.ceil(min(Ta, Tb) / math.pi)
        m1 = math.floor(max(Ta, Tb) / math.pi)
        if m1 >= m0:
            targets = np.arange(m0, m1 + 1) * math.pi
            markers.extend(_solve_image(fr, targets, a, b).tolist())
    pts = sorted(set([g_lo, g_hi] + markers))
    gaps = []
    star = [bool(cv.in_c2_star(s)) for s in pts]
    for k in range(len(pts) - 1):
        a, b = pts[k], pts[k + 1]
        if b <= a:
            continue
        # scan the product on the sub-interval for the part above K2
        s = np.linspace(a, b, 65)
        inside = cv.in_c2_star(s)
        if inside.all():
            continue
        out = np.flatnonzero(~inside)
        ga = a if not star[k] and out[0] == 0 else None
        gb = b if not star[k + 1] and out[-1] == len(s) - 1 else None
        f = lambda u: float(cv.product(u)[0] - cv.cp.K2)
        if ga is None:
            ga = _root(f, s[out[0] - 1], s[out[0]])
        if gb is None:
            gb = _root(f, s[out[-1]], s[out[-1] + 1])
        gaps.append((ga, gb))
    # merge gaps touching across a non-C2* marker
    merged = []
    for ga, gb in gaps:
        if merged and abs(ga - merged[-1][1]) <= 1e-15 * (1 + abs(ga)):
            merged[-1] = (merged[-1][0], gb)
        else:
            merged.append((ga, gb))
    return merged


def decompose_image(pair: BasicPair, partition: StandardPartition, params: MapParams,
                    cp: CriticalParams) -> DecompositionResult:
    """Split F(pair) following the cutting rules of the invariance argument."""
    lo, hi = pair.lo, pair.hi
    cv = _Curve(pair, params, cp)
    fr = _Frame(cv)
    y_hat = pair.y_min()
    d_hat = float(yp(y_hat, params))
    short = 4 * np.pi / cp.K1 * d_hat ** -0.5
    w = partition.width
    aligned, boundary = [], []
    window, z = _c1_window(cv, lo, hi, cp.K1)
    diag = {"y_hat": y_hat, "short_components_absorbed": 0, "near_leftovers": 0}
    if window is None:
        _decompose_range(fr, cv, lo, hi, cv.T(lo), cv.T(hi), partition, aligned, boundary)
        res = DecompositionResult(pair, partition, aligned, boundary, [], [], 0.0, None, None,
                                  cv.frame, diag)
        diag["n_standby"] = 0
        return res
    cl, cr = window
    g_lo, g_hi = cl, cr
    for side in ("left", "right"):
        far, near = (lo, cl) if side == "left" else (hi, cr)
        if near == far:
            continue
        if abs(near - far) <= short:
            diag["short_components_absorbed"] += 1
            if side == "left":
                g_lo = lo
            else:
                g_hi = hi
            continue
        Tf, Tn = cv.T(far), cv.T(near)
        e = math.floor(Tn / w) * w if Tn > Tf else math.ceil(Tn / w) * w
        if (Tn > Tf and e <= Tf) or (Tn < Tf and e >= Tf):
            if side == "left":
                g_lo = lo
            else:
                g_hi = hi
            continue
        s_e = float(_solve_image(fr, [e], min(far, near), max(far, near))[0])
        diag["near_leftovers"] += 1
        if side == "left":
            g_lo = s_e
            _decompose_range(fr, cv, lo, s_e, Tf, e, partition, aligned, boundary)
        else:
            g_hi = s_e
            _decompose_range(fr, cv, s_e, hi, e, Tf, partition, aligned, boundary)
    gaps = _gap_components(cv, g_lo, g_hi, z)
    thr = 2.0 / (cp.K2 * d_hat)
    standby = [StandbyPiece(a, b, float(pair.mass(a, b))) for a, b in gaps if b - a > thr]
    # Z = Gamma* minus the stand-by preimages
    z_iv = []
    cur = g_lo
    for s in standby:
        if s.pre_lo > cur:
            z_iv.append((cur, s.pre_lo))
        cur = s.pre_hi
    if cur < g_hi:
        z_iv.append((cur, g_hi))
    inv = float(sum(pair.mass(a, b) for a, b in z_iv))
    diag["n_standby"] = len(standby)
    diag["n_short_gaps"] = len(gaps) - len(standby)
    return DecompositionResult(pair, partition, aligned, boundary, standby, z_iv, inv,
                               (cl, cr), (g_lo, g_hi), cv.frame, diag)


# ---------------------------------------------------------------------------
# audits

def _witness_points(pair, params, cp, n_uniform, n_window, rng):
    x = [rng.uniform(pair.lo, pair.hi, n_uniform)]
    cv = _Curve(pair, params, cp)
    win, _ = _c1_window(cv, pair.lo, pair.hi, cp.K1_hat)
    if win is not None:
        x.append(rng.uniform(win[0], win[1], n_window))
    return np.concatenate(x)


def inclusion_check(res: DecompositionResult, params, cp, n_uniform=2000, n_window=4000, seed=0):
    """Sampled check of C1 in Gamma* in C1_hat and C2 in F^{-1}Z in C2_hat along the pair."""
    rng = np.random.default_rng(seed)
    pair = res.pair
    x = _witness_points(pair, params, cp, n_uniform, n_window, rng)
    y = pair.psi(x)
    x1 = np.mod(res.image(x), TWO_PI)
    f = classify_arrays(np.mod(x, TWO_PI), y, params, cp, x1=x1)
    gs = res.gamma_star
    in_star = np.zeros(len(x), bool) if gs is None else (x >= gs[0]) & (x <= gs[1])
    in_z = np.zeros(len(x), bool)
    for a, b in res.z_intervals:
        in_z |= (x >= a) & (x <= b)
    checks = {
        "C1_in_Gamma_star": f["in_C1"] & ~in_star,
        "Gamma_star_in_C1_hat": in_star & ~f["in_C1_hat"],
        "C2_in_Z": f["in_C2"] & ~in_z,
        "Z_in_C2_hat": in_z & ~f["in_C2_hat"],
    }
    out = {}
    for k, bad in checks.items():
        idx = np.flatnonzero(bad)
        out[k] = {"violations": int(len(idx)), "witness": None if len(idx) == 0 else float(x[idx[0]])}
    out["ok"] = all(v["violations"] == 0 for v in out.values())
    out["n_samples"] = int(len(x))
    return out


@dataclass
class ExpansionAudit:
    violations_a1: int
    violations_a2: int
    violations_a3: int
    min_ratio_a1: float
    min_ratio_a2: float
    min_ratio_a3: float
    chain_rule_discrepancy: float
    witnesses: dict


def _second_offset(pair, params, s, s_ref, x1_ref):
    """x2(s) - x2(s_ref) along the pair, cancellation free (relative to s_ref).

    ``x1_ref`` is the image angle of s_ref on the lifted curve; recomputing it from
    the rounded height psi(s_ref) would be off by Y' ulp(psi), a sizeable angle at
    large heights.
    """
    A = params.A
    g, c = params.gamma, params.y_hat_coeff
    y0 = pair.psi(s_ref)
    x1r = x1_ref
    dy0 = pair.dpsi(s, s_ref)
    dx1 = pair.image_offset(s, s_ref)
    y1r = y0 + 2 * A * np.cos(x1r)
    dy1 = dy0 + 2 * A * cos_diff(x1r + dx1, x1r)
    return dx1 + power_diff(y1r, dy1, g, c)


def expansion_bounds_audit(pair: BasicPair, params: MapParams, cp: CriticalParams, n=2049,
                           fd_points=16) -> ExpansionAudit:
    """Check the one- and two-step expansion bounds along the pair.

    Nodes: a uniform grid plus a dense grid on the augmented C1 window. The
    two-step rate is the chain-rule product of the closed-form rates; it is
    compared with finite differences of x2 at a few nodes.
    """
    A = params.A
    x = [pair.nodes(n)]
    cv = _Curve(pair, params, cp)
    win, _ = _c1_window(cv, pair.lo, pair.hi, cp.K1_hat)
    if win is not None:
        x.append(np.linspace(win[0], win[1], n))
    x = np.unique(np.concatenate(x))
    y = pair.psi(x)
    d_hat = float(yp(pair.y_min(), params))
    # image angle in extended precision: the lifted offset reaches Y'(y) |I|
    two_pi = 2 * np.arccos(np.longdouble(-1))
    T = np.asarray(np.mod(cv.frame + pair.image_offset(x.astype(np.longdouble), pair.lo), two_pi), float)
    f = classify_arrays(np.mod(x, TWO_PI), y, params, cp, x1=T)
    L1 = pair.expansion(x)
    a1 = ~f["in_C1"]
    a2 = ~f["in_C2"]
    a3 = f["in_C1_hat"] & ~f["in_C2_star"]
    r1 = np.abs(L1) / (0.5 * cp.K1 * np.sqrt(d_hat))
    r2 = np.abs(L1) / (0.5 * cp.K2_bar)
    # next-step rate from the closed-form recursion
    d0 = yp(y, params)
    y1 = y + 2 * A * np.cos(T)
    h_next = -2 * A * np.sin(T) + (1 - 1 / L1) / d0
    L2 = (h_next + 1 / yp(y1, params)) * yp(y1, params)
    r3 = np.abs(L1 * L2) / (0.5 * cp.K2 * d_hat)
    wit = {}
    out = []
    for name, mask, r in (("a1", a1, r1), ("a2", a2, r2), ("a3", a3, r3)):
        bad = mask & (r <= 1)
        out.append(int(bad.sum()))
        out.append(float(r[mask].min()) if mask.any() else np.inf)
        if bad.any():
            wit[name] = float(x[np.argmax(bad)])
    # chain-rule oracle at nodes in the a3 domain, else where the second rate is O(Y')
    pool = np.flatnonzero(a3) if a3.any() else np.flatnonzero(np.abs(h_next) > 0.5 * A)
    idx = np.unique(np.linspace(0, len(pool) - 1, min(fd_points, len(pool))).astype(int))
    disc = 0.0
    for k in idx if len(pool) else []:
        j = pool[k]
        s0 = x[j]
        rate = float(abs(L1[j] * L2[j]))
        # power-of-two step of at least 64 ulp(s0) keeps the grid exact
        hstep = 2.0 ** round(math.log2(1e-4 / max(rate, 1.0) ** 0.5))
        hstep = max(hstep, 64 * np.spacing(abs(s0)))
        grid = s0 + hstep * np.arange(-4, 5)
        if grid[0] < pair.lo or grid[-1] > pair.hi:
            continue
        vals = _second_offset(pair, params, grid, s0, float(T[j]))
        fd = fd_first(vals, hstep)[4]
        disc = max(disc, abs(abs(fd) - rate) / rate)
    a1v, a1m, a2v, a2m, a3v, a3m = out
    return ExpansionAudit(a1v, a2v, a3v, a1m, a2m, a3m, disc, wit)


@dataclass
class StandbyResolution:
    n_pieces: int
    masses_total: float
    checked: int
    all_standard: bool
    min_two_step_ratio: float
    violating: Optional[float] = None


def standby_resolution(res: DecompositionResult, params: MapParams, cp: CriticalParams,
                       n_check=6, seed=0, strict=False) -> List[StandbyResolution]:
    """Push each stand-by piece forward once more and cut its image into standard pairs.

    Pieces are enumerated lazily; ``n_check`` of them (ends plus random interior
    ones) are materialised and checked for standardness, and the two-step rate
    on the preimage is compared with K2 Y'/2.
    """
    rng = np.random.default_rng(seed)
    partition = res.partition
    out = []
    d_hat = float(yp(res.pair.y_min(), params))
    for sb in res.standby:
        # image frame reduced mod 2 pi (a whole number of cells) so that the image
        # coordinate keeps enough float64 resolution for a second pushforward
        two_pi = 2 * np.arccos(np.longdouble(-1))
        t0 = res.frame + res.pair.image_offset(np.longdouble(sb.pre_lo), res.pair.lo)
        mid_pair = ImagePair(res.pair, sb.pre_lo, sb.pre_hi, base_phase=float(np.mod(t0, two_pi)))
        sub = DecompositionResult(mid_pair, partition, [], [], [], [], 0.0, None, None,
                                  phase_mod(mid_pair.psi(mid_pair.lo), params, mid_pair.lo))
        cvm = _Curve(mid_pair, params, cp)
        aligned, boundary = [], []
        _decompose_range(_Frame(cvm), cvm, mid_pair.lo, mid_pair.hi, cvm.T(mid_pair.lo),
                         cvm.T(mid_pair.hi), partition, aligned, boundary)
        sub.aligned, sub.boundary, sub.frame = aligned, boundary, cvm.frame
        npieces = sum(b.count for b in aligned) + len(boundary)
        total = sum(b.mass for b in aligned) + sum(b.mass for b in boundary)
        pairs = [sub.boundary_pair(b) for b in boundary]
        for blk in aligned:
            js = {blk.j_first, blk.j_last}
            if blk.count > 2:
                js |= set(rng.integers(blk.j_first, blk.j_last + 1, max(0, n_check - 2)).tolist())
            pairs += [sub.cell_pair(blk, j) for j in sorted(js)]
        ok = True
        viol = None
        for p in pairs:
            rep = check_standard(p, params, cp, n=129)
            if not rep.is_standard:
                ok = False
                viol = rep.violating_x
                if strict:
                    raise StandardnessViolation(f"resolved piece not standard at x={viol}")
        s = np.linspace(sb.pre_lo, sb.pre_hi, 33)
        L1 = res.pair.expansion(s)
        L2 = mid_pair.expansion(mid_pair.nodes(33)) if mid_pair.width > 0 else L1
        xm = mid_pair.preimage(mid_pair.nodes(33))
        L1m = res.pair.expansion(xm)
        ratio = float(np.min(np.abs(L1m * L2)) / (0.5 * cp.K2 * d_hat))
        out.append(StandbyResolution(int(npieces), float(total / mid_pair.parent_mass * sb.mass
                                                         if mid_pair.parent_mass > 0 else 0.0),
                                     len(pairs), ok, ratio, viol))
    return out


# ---------------------------------------------------------------------------
# critical time

def _pack(params, cp, partition, tol):
    return params.packed(), _engine.pack_critical(cp, partition.width, tol)


def critical_time(pair: BasicPair, x, params: MapParams, cp: CriticalParams,
                  partition: Optional[StandardPartition] = None, max_iter=10 ** 6, tol=4e-16):
    """Critical time of the points (x, psi(x)) of ``pair``; ``max_iter`` is the truncation sentinel.

    Returns (tau, terminal) with terminal 2 for Z, 3 for falling below y*, -1 when truncated.
    """
    partition = partition or make_standard_partition(cp.delta)
    x = np.atleast_1d(np.asarray(x, float))
    ys = pair.psi(x)
    mp, cpk = _pack(params, cp, partition, tol)
    lo = np.full(len(x), pair.lo)
    hi = np.full(len(x), pair.hi)
    return _engine.critical_time_kernel(x, np.asarray(ys, float), lo, hi, int(max_iter), mp, cpk,
                                        params.y_star)


def engine_first_step(pair: BasicPair, x, params: MapParams, cp: CriticalParams,
                      partition: Optional[StandardPartition] = None):
    """Classification of the first step by the compiled engine (for cross-checks)."""
    partition = partition or make_standard_partition(cp.delta)
    mp, cpk = _pack(params, cp, partition, 4e-16)
    out = []
    for s in np.atleast_1d(x):
        code, ga, gb, ia, ib = _engine.classify_step(float(s), float(pair.psi(s)), pair.lo, pair.hi, mp, cpk)
        if code == _engine.STANDARD:
            x1 = math.fmod(float(s) + params.y_hat_coeff * float(pair.psi(s)) ** params.gamma, TWO_PI)
            lo_, hi_, *_ = _engine.cut_piece(x1, ia, ib, partition.width, partition.delta)
            out.append(("standard", (lo_, hi_), x1))
        elif code == _engine.STANDBY:
            out.append(("standby", (ga, gb), None))
        else:
            out.append(("invalid", None, None))
    return out


def write_audit_log(results, path):
    """JSON lines, one record per decomposition."""
    with open(path, "w") as fh:
        for r in results:
            fh.write(json.dumps(r.audit_record() if hasattr(r, "audit_record") else r) + "\n")
