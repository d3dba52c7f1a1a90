"""Acceptance suite: one function per criterion, each returning a CriterionResult.

Every criterion runs at its stated sample sizes and tolerances; a failing check is
reported as a failure, never relaxed.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np

from .core_map import MapParams, jacobian_det
from .critical_sets import default_critical_params, measure_slope_c2, total_measure_partial_sum
from .decomposition import (decompose_image, expansion_bounds_audit, inclusion_check,
                            make_standard_partition)
from .equidistribution import (Observable, fourier_decay, lemma_e0_check, nu_min,
                               one_step_error_scan, periodicity_decay, psi_compute, psi_eta_grid,
                               psi_fourier, psi_periodicity_check, shipped_e0_datasets)
from .standard_pairs import (DegenerateImageError, ReferencePair, gronwall_bounds, pushforward_pair,
                             random_standard_pair)
from .walk_escape import drift_estimate, escape_scan, tau_tail


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    value: str
    threshold: str
    seconds: float
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"criterion {self.number:2d} {flag}  {self.name}: {self.value} "
                f"(required {self.threshold}) [{self.seconds:.1f} s]")


def _log_uniform(rng, lo, hi, n=None):
    return np.exp(rng.uniform(math.log(lo), math.log(hi), n))


def _random_interval(rng, delta, near_critical):
    w = rng.uniform(0.3, 0.9) * delta
    c = np.pi * rng.integers(0, 2) + rng.uniform(-0.3, 0.3) if near_critical else rng.uniform(0, 2 * np.pi)
    return c - w / 2, c + w / 2


# ---------------------------------------------------------------------------

def criterion_01(seed=0):
    rng = np.random.default_rng(seed)
    worst = {}
    for g in (1.0, 2.5, 3.0, 4.0):
        p = MapParams(A=1.0, gamma=g)
        x = rng.uniform(0, 2 * np.pi, 10 ** 6)
        y = _log_uniform(rng, 10.0, 1e6, 10 ** 6)
        worst[g] = float(np.max(np.abs(jacobian_det(x, y, p) - 1)))
    m = max(worst.values())
    return m <= 1e-12, f"max |det DF - 1| = {m:.2e}", "<= 1e-12", {"per_gamma": worst}


def criterion_02(seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    skipped = 0
    per = {}
    for g in (2.5, 3.0):
        p = MapParams(A=1.0, gamma=g)
        cp = default_critical_params(p)
        done = 0
        gw = 0.0
        while done < 100:
            pair = random_standard_pair(p, cp, float(_log_uniform(rng, 1e3, 1e5)), rng)
            try:
                img = pushforward_pair(pair, pair.lo, pair.hi)
            except DegenerateImageError:
                skipped += 1
                continue
            rc = img.recursion_check()
            gw = max(gw, max(rc.values()))
            done += 1
        per[g] = gw
        worst = max(worst, gw)
    return worst <= 1e-4, f"max relative discrepancy = {worst:.2e}", "<= 1e-4", \
        {"per_gamma": per, "degenerate_redrawn": skipped}


def criterion_03(seed=0):
    rng = np.random.default_rng(seed)
    viol = 0
    for i in range(1000):
        g = 2.5 if i % 2 else 3.0
        p = MapParams(A=1.0, gamma=g)
        cp = default_critical_params(p)
        pair = random_standard_pair(p, cp, float(_log_uniform(rng, 1e3, 1e5)), rng, density_strength=0.999)
        lo_ok, hi_ok, _ = gronwall_bounds(pair, cp.delta)
        viol += (not lo_ok) + (not hi_ok)
    return viol == 0, f"{viol} violations over 1000 densities", "0 violations", {}


def criterion_04(seed=0):
    rng = np.random.default_rng(seed)
    p = MapParams(A=1.0, gamma=3.0)
    cp = default_critical_params(p)
    counts = np.zeros(3, int)
    ratios = np.full(3, np.inf)
    for i in range(1000):
        lo, hi = _random_interval(rng, cp.delta, near_critical=i % 2 == 0)
        ax = rng.uniform(lo, hi)
        yh = float(_log_uniform(rng, 1e3, 1e5))
        pair = ReferencePair(p, lo, hi, ax, yh + 2 * p.A * (np.cos(ax) + 1))
        a = expansion_bounds_audit(pair, p, cp)
        counts += (a.violations_a1, a.violations_a2, a.violations_a3)
        ratios = np.minimum(ratios, (a.min_ratio_a1, a.min_ratio_a2, a.min_ratio_a3))
    total = int(counts.sum())
    return total == 0, f"violations (a1, a2, a3) = {tuple(int(c) for c in counts)}", "0 violations", \
        {"min_ratios": ratios.tolist()}


def criterion_05(seed=0):
    rng = np.random.default_rng(seed)
    worst_mass = 0.0
    viol = 0
    for i in range(1000):
        g = 2.5 if i % 2 else 3.0
        p = MapParams(A=1.0, gamma=g)
        cp = default_critical_params(p)
        part = make_standard_partition(cp.delta)
        interval = _random_interval(rng, cp.delta, near_critical=i % 4 < 2)
        pair = random_standard_pair(p, cp, float(_log_uniform(rng, 1e3, 1e4)), rng, interval=interval)
        res = decompose_image(pair, part, p, cp)
        worst_mass = max(worst_mass, abs(res.total_mass() - pair.mass(pair.lo, pair.hi)))
        chk = inclusion_check(res, p, cp, n_uniform=500, n_window=1000, seed=seed + i)
        viol += sum(v["violations"] for k, v in chk.items() if isinstance(v, dict))
    ok = worst_mass <= 1e-8 and viol == 0
    return ok, f"mass error {worst_mass:.1e}, inclusion violations {viol}", "mass <= 1e-8, 0 violations", {}


def criterion_06(seed=0):
    out = {}
    ok = True
    for g in (2.5, 3.0):
        p = MapParams(A=1.0, gamma=g)
        cp = default_critical_params(p)
        target = -4 * p.beta()
        ys = np.geomspace(max(1e2, 1.2 * p.y_star), 1e4, 7)
        slope, se, _ = measure_slope_c2(p, cp, ys, n_samples=10 ** 5, seed=seed)
        out[g] = (slope, se, target)
        ok &= abs(slope - target) <= 0.4
    val = ", ".join(f"gamma={g}: {s:.2f} (target {t:.0f})" for g, (s, _, t) in out.items())
    return ok, val, "within +-0.4 of -4 beta", {"fits": out}


def criterion_07(seed=0):
    out = {}
    for g in (4.0, 2.5):
        p = MapParams(A=1.0, gamma=g)
        cp = default_critical_params(p)
        ps = total_measure_partial_sum(p, cp, 10 ** 6, kind="C1_hat", n_samples=10 ** 5, seed=seed)
        out[g] = (ps.verdict, ps.tail_exponent, ps.tail_stderr)
    ok = out[4.0][0] == "convergent" and out[2.5][0] != "convergent"
    val = ", ".join(f"gamma={g}: {v} (p={e:.2f}+-{s:.2f})" for g, (v, e, s) in out.items())
    return ok, val, "gamma=4 convergent, gamma=2.5 not", {}


def criterion_08(seed=0):
    sc = one_step_error_scan(3.0, 1.0, np.logspace(2.1, 5, 10), Observable.cos(1))
    return sc.slope <= -0.8, f"exponent {sc.slope:.3f} +- {sc.stderr:.3f} (R2 {sc.r2:.3f})", "<= -0.8", \
        {"errors": sc.error.tolist()}


PSI_HEIGHTS = {(3.0, 1): (1.2e2, 1e3, 1e4, 1e5), (2.5, 2): (1.5e2, 1e3, 3e3, 1e4)}


def _psi_tables(g, k, heights, points_per_period=8):
    p = MapParams(A=1.0, gamma=g)
    cp = default_critical_params(p)
    part = make_standard_partition(cp.delta)
    obs = Observable.cos(1)
    return [psi_compute(0, k, psi_eta_grid(yh, p, 2, points_per_period), obs, p, cp, part)
            for yh in heights], obs


def criterion_09(seed=0):
    gates = {(3.0, 1): -0.8, (2.5, 2): -0.85}
    out = {}
    ok = True
    for key, gate in gates.items():
        tables, obs = _psi_tables(*key, PSI_HEIGHTS[key])
        fd = fourier_decay([psi_fourier(t) for t in tables], obs)
        out[key] = fd
        ok &= fd["gate"] <= gate
    val = ", ".join(f"(gamma={g}, k={k}): slope {d['slope']:.3f}, slope+2se {d['gate']:.3f}"
                    for (g, k), d in out.items())
    return ok, val, "<= -0.8 (k=1), <= -0.85 (k=2)", {"fits": {str(k): v for k, v in out.items()}}


def criterion_10(seed=0):
    tables, _ = _psi_tables(3.0, 1, (1e3, 1e4), points_per_period=16)
    reps = [psi_periodicity_check(t) for t in tables]
    dec = periodicity_decay(reps)
    f = dec["factor_per_decade"]
    return f >= 5, f"factor per decade {f:.1f} (discrepancies {[f'{r.discrepancy:.1e}' for r in reps]})", \
        ">= 5", dec


def criterion_11(seed=0):
    verdicts = [(d.label, d.check()) for d in shipped_e0_datasets()]
    all_pass = all(v.status == "pass" for _, v in verdicts)
    bad = lemma_e0_check([1.0], [1.0], 1e-6, 1e-3, 1.0)
    ok = all_pass and bad.status == "hypothesis_violation"
    val = f"{sum(v.status == 'pass' for _, v in verdicts)}/{len(verdicts)} datasets pass; " \
          f"constructed input -> {bad.status}"
    return ok, val, "all pass, violation detected", {}


def criterion_12(seed=0):
    p = MapParams(A=1.0, gamma=2.5)
    cp = default_critical_params(p)
    out = {}
    for yh in (1e3, 1e4):
        s = drift_estimate(p, cp, yh, n_samples=10 ** 4, seed=seed)
        out[yh] = s.drift() + (int(s.truncated.sum()),)
    ok = all(v[0] >= 0.55 for v in out.values())
    val = ", ".join(f"y_hat={yh:g}: {v[0]:.3f} [{v[1]:.3f}, {v[2]:.3f}], truncated {v[4]}" for yh, v in out.items())
    return ok, val, "P(xi=-1) >= 0.55", {}


def criterion_13(seed=0):
    p = MapParams(A=1.0, gamma=2.5)
    cp = default_critical_params(p)
    s = drift_estimate(p, cp, 1e3, n_samples=10 ** 4, seed=seed + 1)
    tf = tau_tail(s)
    ok = tf.r2 >= 0.9 and tf.theta < 1
    return ok, f"R2 {tf.r2:.4f}, log theta {tf.slope:.1f} (theta {tf.theta:.3g})", "R2 >= 0.9, theta < 1", {}


def criterion_14(seed=0):
    kam = escape_scan(MapParams(A=1.0, gamma=0.5), default_critical_params(MapParams(A=1.0, gamma=3.0)),
                      50.0, 10 ** 6, 100, seed=seed)
    p = MapParams(A=1.0, gamma=2.5)
    rec = escape_scan(p, default_critical_params(p), 1e3, 10 ** 7, 100, seed=seed)
    ok = kam.frac_growth == 0 and rec.frac_c2hat >= 0.99
    return ok, f"gamma=0.5 growth fraction {kam.frac_growth:.2f}; gamma=2.5 C2_hat re-entry {rec.frac_c2hat:.2f}", \
        "0 and >= 0.99", {}


def criterion_15(seed=0):
    a, b = nu_min(1.0), nu_min(0.75)
    return (a, b) == (2, 3), f"nu_min(1) = {a}, nu_min(0.75) = {b}", "2 and 3", {}


CRITERIA: Dict[int, tuple] = {
    1: ("area preservation", criterion_01),
    2: ("pushforward recursion", criterion_02),
    3: ("Gronwall density bounds", criterion_03),
    4: ("invariance lemma bounds", criterion_04),
    5: ("decomposition mass and inclusions", criterion_05),
    6: ("C2_hat cell measure scaling", criterion_06),
    7: ("C1 finiteness threshold", criterion_07),
    8: ("one-step equidistribution decay", criterion_08),
    9: ("Psi Fourier decay", criterion_09),
    10: ("Psi periodicity", criterion_10),
    11: ("E0 checker", criterion_11),
    12: ("random-walk drift", criterion_12),
    13: ("stopped-time tail", criterion_13),
    14: ("regime sanity", criterion_14),
    15: ("nu(beta) values", criterion_15),
}


def run_criterion(number: int, seed=0) -> CriterionResult:
    name, fn = CRITERIA[number]
    t0 = time.perf_counter()
    passed, value, threshold, details = fn(seed)
    return CriterionResult(number, name, bool(passed), value, threshold, time.perf_counter() - t0, details)


def run_acceptance(numbers: Optional[Iterable[int]] = None, seed=0,
                   report: Optional[Callable[[CriterionResult], None]] = None) -> List[CriterionResult]:
    out = []
    for n in numbers or sorted(CRITERIA):
        r = run_criterion(n, seed)
        if report:
            report(r)
        out.append(r)
    return out
