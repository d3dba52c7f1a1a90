"""Level scheme, stopped times, level outcomes and escape-regime experiments.

Heights are compared with the geometric ladder R_k = 2^k y_master. A sample on a
pair close to R_k is followed by the compiled engine until its pair leaves the
compatibility band [R_{k-1}, R_{k+1}] (the stopped time tau^[k]) or it is stopped
by the critical set Z. The outcome xi^[k] is +1 when the pair reached at tau^[k]
is close to R_{k+1} and the critical time was not yet reached, -1 otherwise.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from numba import njit

from . import _engine
from .core_map import MapParams, _step
from .critical_sets import CriticalParams
from .decomposition import StandardPartition, _pack, make_standard_partition
from .equidistribution import cell_reference_pair, nu_min
from .numerics import linear_fit, wilson_interval
from .standard_pairs import BasicPair

STATUS_NAMES = {0: "entered_C2_hat", 1: "truncated", 2: "left_domain"}


class InsufficientSamplesWarning(UserWarning):
    """Too few samples survive to the requested tail depth."""


# ---------------------------------------------------------------------------
# level scheme

@dataclass(frozen=True)
class LevelScheme:
    """Geometric heights R_k = 2^k y_master with closeness half-width 2 A nu."""

    y_master: float
    nu: int
    A: float
    k_min: int = -4
    k_max: int = 8

    def R(self, k) -> float:
        return self.y_master * 2.0 ** k

    def levels(self) -> np.ndarray:
        return np.array([self.R(k) for k in range(self.k_min, self.k_max + 1)])

    def close_band(self, k):
        r = self.R(k)
        return r - 2 * self.A * self.nu, r + 2 * self.A * self.nu

    def compat_band(self, k):
        return self.R(k - 1), self.R(k + 1)

    def _range(self, pair: BasicPair, n=257):
        y = pair.psi(pair.nodes(n))
        return float(y.min()), float(y.max())

    def is_close(self, pair: BasicPair, k) -> bool:
        lo, hi = self.close_band(k)
        a, b = self._range(pair)
        return lo <= a and b <= hi

    def is_compatible(self, pair: BasicPair, k) -> bool:
        lo, hi = self.compat_band(k)
        a, b = self._range(pair)
        return lo <= a and b <= hi


def make_level_scheme(params: MapParams, y_master, k_min=-4, k_max=8) -> LevelScheme:
    """Scheme with nu = nu_min(beta) for the parameters' gamma."""
    return LevelScheme(float(y_master), nu_min(params.beta()), params.A, k_min, k_max)


def master_pair(params: MapParams, partition: StandardPartition, y_hat, alpha=5):
    """Reference pair over a partition cell through height y_hat (close to R_0 = y_hat)."""
    return cell_reference_pair(params, partition, alpha, y_hat)


def _arrays(pair: BasicPair, x):
    x = np.atleast_1d(np.asarray(x, float))
    return (x, np.asarray(pair.psi(x), float), np.full(len(x), pair.lo), np.full(len(x), pair.hi))


# ---------------------------------------------------------------------------
# stopped times and outcomes

@dataclass
class LevelSamples:
    """Joint evaluation of tau^[k], tau and xi^[k] on a set of samples."""

    x: np.ndarray
    tau_k: np.ndarray
    tau: np.ndarray
    xi: np.ndarray
    truncated: np.ndarray
    y_hat: float
    k: int
    max_iter: int

    def drift(self, include_truncated=False):
        """P(xi = -1) with a Wilson interval; truncated samples excluded by default."""
        keep = np.ones(len(self.xi), bool) if include_truncated else ~self.truncated
        n = int(keep.sum())
        down = int((self.xi[keep] == -1).sum())
        lo, hi = wilson_interval(down, n)
        return (down / n if n else float("nan")), lo, hi, n


def level_samples(pair: BasicPair, x, k, scheme: LevelScheme, params: MapParams, cp: CriticalParams,
                  partition: Optional[StandardPartition] = None, max_iter=10 ** 7) -> LevelSamples:
    partition = partition or make_standard_partition(cp.delta)
    xs, ys, los, his = _arrays(pair, x)
    mp, cpk = _pack(params, cp, partition, 4e-16)
    tk, tt, xi, tr = _engine.level_kernel(xs, ys, los, his, scheme.y_master, int(k), int(scheme.nu),
                                          int(max_iter), mp, cpk, params.y_star)
    return LevelSamples(xs, tk, tt, xi, tr, float(pair.anchor_y), int(k), int(max_iter))


def tau_level(pair: BasicPair, x, k, scheme: LevelScheme, params: MapParams, cp: CriticalParams,
              max_iter=10 ** 7, partition=None):
    """Stopped time tau^[k] of each sample; max_iter is the truncation sentinel."""
    res = level_samples(pair, x, k, scheme, params, cp, partition, max_iter)
    return res.tau_k if np.ndim(x) else int(res.tau_k[0])


def xi_level(pair: BasicPair, x, k, scheme: LevelScheme, params: MapParams, cp: CriticalParams,
             max_iter=10 ** 7, partition=None):
    """Outcome xi^[k] (+1/-1) and truncation flag of each sample."""
    res = level_samples(pair, x, k, scheme, params, cp, partition, max_iter)
    if np.ndim(x):
        return res.xi, res.truncated
    return int(res.xi[0]), bool(res.truncated[0])


def drift_estimate(params: MapParams, cp: CriticalParams, y_hat, n_samples=10 ** 4, seed=0,
                   alpha=5, max_iter=10 ** 8, partition=None) -> LevelSamples:
    """Outcomes on a master pair at y_hat (k = 0, so the pair is close to R_0)."""
    partition = partition or make_standard_partition(cp.delta)
    pair = master_pair(params, partition, y_hat, alpha)
    scheme = make_level_scheme(params, y_hat)
    rng = np.random.default_rng(seed)
    x = rng.uniform(pair.lo, pair.hi, int(n_samples))
    return level_samples(pair, x, 0, scheme, params, cp, partition, max_iter)


@dataclass
class TailFit:
    s_grid: np.ndarray
    tail: np.ndarray
    counts: np.ndarray
    slope: float
    stderr: float
    r2: float
    theta: float
    y_hat: float
    n_samples: int


def tau_tail(samples: LevelSamples, s_grid=None, min_count=20) -> TailFit:
    """Empirical P(tau^[k] >= s) and a fit of log P against s / y_hat^2.

    The default grid spans s = 0 to the depth where ``min_count`` samples remain;
    theta = exp(slope) is the fitted base of P ~ C theta^(s / y_hat^2).
    """
    t = np.sort(samples.tau_k[~samples.truncated])
    n = len(t)
    if n < 10 * min_count:
        raise ValueError("not enough untruncated samples for a tail fit")
    if s_grid is None:
        s_max = t[n - min_count]
        s_grid = np.linspace(0, s_max, 25)
    s_grid = np.asarray(s_grid, float)
    counts = n - np.searchsorted(t, s_grid, side="left")
    tail = counts / n
    use = counts >= min_count
    if use.sum() < 3:
        import warnings
        warnings.warn("fewer than three tail points above the sample floor", InsufficientSamplesWarning)
    u = s_grid[use] / samples.y_hat ** 2
    slope, se, _, r2 = linear_fit(u, np.log(tail[use]))
    return TailFit(s_grid, tail, counts, slope, se, r2, float(math.exp(slope)), samples.y_hat, n)


# ---------------------------------------------------------------------------
# walk records

@dataclass
class WalkRecord:
    sample: int
    taus: np.ndarray
    chis: np.ndarray
    status: str

    @property
    def xis(self) -> np.ndarray:
        return np.diff(self.chis)

    def rows(self):
        xi = np.concatenate([self.xis, [0]])
        for m, (t, c, e) in enumerate(zip(self.taus, self.chis, xi)):
            yield self.sample, m, int(t), int(c), int(e), self.status


@dataclass
class WalkEnsemble:
    records: List[WalkRecord]
    y_master: float
    horizon: int
    up_fraction: float
    up_by_level: dict
    frac_returned: float
    status_counts: dict


def walk_run(pair: BasicPair, params: MapParams, cp: CriticalParams, n_samples=1000, horizon=4,
             max_steps=10 ** 8, max_records=256, seed=0, partition=None) -> WalkEnsemble:
    """Level-crossing walks (tau_m, chi_m) of samples on a master pair."""
    partition = partition or make_standard_partition(cp.delta)
    y_master = float(pair.anchor_y)
    rng = np.random.default_rng(seed)
    x = rng.uniform(pair.lo, pair.hi, int(n_samples))
    xs, ys, los, his = _arrays(pair, x)
    mp, cpk = _pack(params, cp, partition, 4e-16)
    nu = nu_min(params.beta())
    taus, chis, nrec, status = _engine.walk_kernel(xs, ys, los, his, y_master, nu, int(horizon),
                                                   int(max_steps), int(max_records), mp, cpk, params.y_star)
    records = []
    ups = {}
    tot = {}
    for i in range(len(xs)):
        r = int(nrec[i])
        rec = WalkRecord(i, taus[i, :r].copy(), chis[i, :r].copy(), STATUS_NAMES[int(status[i])])
        records.append(rec)
        for c0, d in zip(rec.chis[:-1], rec.xis):
            tot[int(c0)] = tot.get(int(c0), 0) + 1
            ups[int(c0)] = ups.get(int(c0), 0) + int(d > 0)
    n_steps = sum(tot.values())
    up_frac = sum(ups.values()) / n_steps if n_steps else float("nan")
    returned = np.mean([bool((r.chis < 0).any()) for r in records])
    counts = {name: int((status == code).sum()) for code, name in STATUS_NAMES.items()}
    by_level = {k: ups[k] / tot[k] for k in sorted(tot)}
    return WalkEnsemble(records, y_master, int(horizon), float(up_frac), by_level, float(returned), counts)


def write_walk_csv(ensemble: WalkEnsemble, path, digest=""):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "step", "tau_k", "chi_k", "xi", "status", "digest"])
        for rec in ensemble.records:
            for row in rec.rows():
                w.writerow([*row, digest])


# ---------------------------------------------------------------------------
# reference biased walk

@njit(cache=True)
def _control_kernel(seed, m, n, p_up, horizon):
    np.random.seed(seed)
    out = np.empty(m, np.int64)
    for i in range(m):
        pos = 0
        res = 0
        for j in range(n):
            pos += 1 if np.random.random() < p_up else -1
            if pos < 0:
                res = -1
                break
            if pos >= horizon:
                res = 1
                break
        out[i] = res
    return out


def gamblers_ruin_return(p_up, horizon) -> float:
    """Probability that a walk from 0 with up-probability p_up hits -1 before +horizon."""
    q = 1 - p_up
    if p_up == q:
        return horizon / (horizon + 1)
    r = q / p_up
    return 1 - (r - 1) / (r ** (horizon + 1) - 1)


@dataclass
class ControlWalk:
    p_up: float
    horizon: int
    n: int
    frac_returned: float
    stderr: float
    exact: float
    unresolved: int

    @property
    def z_score(self) -> float:
        return abs(self.frac_returned - self.exact) / max(self.stderr, 1e-12)


def control_walk(p_up=0.4, horizon=8, n=10 ** 5, max_steps=4096, seed=0) -> ControlWalk:
    """Simulated return probability of the biased walk against the closed form."""
    res = _control_kernel(int(seed), int(n), int(max_steps), p_up, int(horizon))
    f = float(np.mean(res == -1))
    se = math.sqrt(max(f * (1 - f), 1.0 / n) / n)
    return ControlWalk(p_up, horizon, n, f, se, gamblers_ruin_return(p_up, horizon), int((res == 0).sum()))


# ---------------------------------------------------------------------------
# escape regimes

@njit(cache=True)
def _escape_kernel(x0s, y0s, T, n_windows, mp, cons, track_c2):
    """Iterate orbits; window minima, final height, first C2_hat entry and first return to y0.

    cons = (K1_hat, K2_hat) for the exact-mode C2_hat test.
    """
    A = mp[0]
    g = mp[1]
    c = mp[2]
    m = len(x0s)
    wmin = np.full((m, n_windows), np.inf)
    y_end = np.empty(m)
    first_c2 = np.full(m, -1, np.int64)
    returns = np.zeros(m, np.int64)
    left = np.zeros(m, np.bool_)
    wlen = max(T // n_windows, 1)
    for i in range(m):
        x, y = x0s[i], y0s[i]
        y0 = y
        for t in range(1, T + 1):
            x_old, y_old = x, y
            x, y = _step(x, y, mp)
            if y <= 0.0:
                left[i] = True
                break
            wi = min((t - 1) // wlen, n_windows - 1)
            if y < wmin[i, wi]:
                wmin[i, wi] = y
            if t > T // 2 and y <= y0:
                returns[i] += 1
            if track_c2 and first_c2[i] < 0 and y > mp[3]:
                # flags at the new point: h0 uses the previous height, h1 the next image
                d0 = g * c * y ** (g - 1)
                yprev = y - 2 * A * math.cos(x)
                h0 = -2 * A * math.sin(x) + 1 / (g * c * yprev ** (g - 1)) + 1 / d0
                x1 = x + c * y ** g
                x1 = x1 - 2 * math.pi * math.floor(x1 / (2 * math.pi))
                y1 = y + 2 * A * math.cos(x1)
                d1 = g * c * y1 ** (g - 1)
                h1 = -2 * A * math.sin(x1) + 1 / d0 + 1 / d1
                a0 = abs(h0)
                if a0 < cons[0] / math.sqrt(d0) and a0 * abs(h1) * d0 < cons[1]:
                    first_c2[i] = t
        y_end[i] = y
    return wmin, y_end, first_c2, returns, left


@dataclass
class EscapeSummary:
    gamma: float
    A: float
    y0: float
    T: int
    n: int
    frac_bounded: float
    frac_returned: float
    frac_growth: float
    ci_lo: float
    ci_hi: float
    frac_c2hat: float
    growth_rate_max: float
    per_orbit: dict = field(repr=False, default_factory=dict)

    def row(self):
        return [self.gamma, self.A, self.y0, self.T, self.frac_bounded, self.frac_returned,
                self.frac_growth, self.ci_lo, self.ci_hi, self.frac_c2hat]


ESCAPE_HEADER = ["gamma", "A", "y0", "T", "frac_bounded", "frac_returned", "frac_growth",
                 "ci_lo", "ci_hi", "frac_c2hat"]


def escape_scan(params: MapParams, cp: CriticalParams, y0, T, n_orbits=100, seed=0,
                n_windows=20, growth_factor=4.0, track_c2=True) -> EscapeSummary:
    """Classify orbits started at height y0 with random angles.

    growth-candidate: y_T > growth_factor * y0 and the window minima (window T/20)
    are nondecreasing over the last T/2. returned: not a growth candidate and the
    orbit visits heights <= y0 during the last T/2. bounded: everything else.
    The confidence interval is the Wilson interval of the growth fraction.
    """
    if T > 10 ** 8:
        raise ValueError("T must not exceed 1e8")
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(0, 2 * np.pi, int(n_orbits))
    y0s = np.full(int(n_orbits), float(y0))
    cons = np.array([cp.K1_hat, cp.K2_hat])
    wmin, y_end, first_c2, returns, left = _escape_kernel(x0, y0s, int(T), int(n_windows), params.packed(),
                                                         cons, bool(track_c2))
    half = wmin[:, n_windows // 2:]
    monotone = np.all(np.diff(half, axis=1) >= 0, axis=1)
    growth = (y_end > growth_factor * y0) & monotone & ~left
    returned = ~growth & (returns > 0)
    bounded = ~growth & ~returned
    n = int(n_orbits)
    lo, hi = map(float, wilson_interval(int(growth.sum()), n))
    return EscapeSummary(params.gamma, params.A, float(y0), int(T), n, float(bounded.mean()),
                         float(returned.mean()), float(growth.mean()), lo, hi,
                         float((first_c2 > 0).mean()), float(np.max((y_end - y0) / T)),
                         {"y_end": y_end, "first_c2": first_c2, "monotone": monotone, "left": left})


def acceleration_diagnostic(A_grid: Sequence[float], gamma=1.0, y0=50.0, T=10 ** 5, n_orbits=64, seed=0,
                            rate_floor=0.05):
    """Largest drift rate (y_T - y0)/T per A; rates above ``rate_floor`` flag linear acceleration.

    Non-failing diagnostic: returns a list of (A, max_rate, flagged).
    """
    out = []
    for A in A_grid:
        params = MapParams(A=float(A), gamma=gamma)
        rng = np.random.default_rng(seed)
        x0 = rng.uniform(0, 2 * np.pi, n_orbits)
        y_start = y0 + rng.uniform(0, 2 * np.pi, n_orbits)
        _, y_end, _, _, _ = _escape_kernel(x0, y_start, int(T), 1, params.packed(), np.zeros(2), False)
        rate = float(np.max(np.abs(y_end - y_start)) / T)
        out.append((float(A), rate, rate > rate_floor))
    return out


def write_escape_csv(summaries: List[EscapeSummary], path, digest=""):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ESCAPE_HEADER + ["digest"])
        for s in summaries:
            w.writerow(s.row() + [digest])
