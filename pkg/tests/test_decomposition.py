import json

import numpy as np
import pytest

from fermi_twist.core_map import MapParams
from fermi_twist.critical_sets import CriticalParams, classify_arrays
from fermi_twist.decomposition import (critical_time, decompose_image, engine_first_step,
                                       expansion_bounds_audit, inclusion_check, make_standard_partition,
                                       standby_resolution, write_audit_log)
from fermi_twist.standard_pairs import ReferencePair, check_standard, random_standard_pair

P3 = MapParams(A=1.0, gamma=3.0)
P25 = MapParams(A=1.0, gamma=2.5)
CP = CriticalParams()
PART = make_standard_partition(0.5)


def _ref(p, lo, hi, y_hat, ax=None):
    ax = 0.5 * (lo + hi) if ax is None else ax
    return ReferencePair(p, lo, hi, ax, y_hat + 2 * p.A * (np.cos(ax) + 1))


@pytest.mark.parametrize("delta", [0.1, 0.3, 0.5, 0.7])
def test_partition(delta):
    part = make_standard_partition(delta)
    assert delta / 4 < part.width < delta / 2
    assert part.count * part.width == pytest.approx(2 * np.pi, abs=1e-12)
    assert sum(b - a for a, b in part.intervals()) == pytest.approx(2 * np.pi, abs=1e-12)
    with pytest.raises(ValueError):
        make_standard_partition(1.0)


def test_partition_shipped_count():
    assert PART.count == 34


def test_clean_pair_has_no_standby_or_invalid():
    res = decompose_image(_ref(P3, 1.2, 1.6, 1e3), PART, P3, CP)
    assert res.c1_window is None and res.standby == [] and res.invalid_mass == 0
    assert res.total_mass() == pytest.approx(1.0, abs=1e-8)


def test_pair_through_c1_strip():
    pair = _ref(P3, -0.2, 0.2, 1e3)
    res = decompose_image(pair, PART, P3, CP)
    assert res.c1_window is not None
    chk = inclusion_check(res, P3, CP)
    assert chk["ok"]
    # invalid mass is at most the C2_hat probability measured on the same curve
    x = np.linspace(pair.lo, pair.hi, 200001)
    f = classify_arrays(np.mod(x, 2 * np.pi), pair.psi(x), P3, CP, x1=np.mod(res.image(x), 2 * np.pi))
    assert res.invalid_mass <= f["in_C2_hat"].mean() + 1e-5


def test_mass_conservation_random_pairs():
    rng = np.random.default_rng(0)
    for i in range(100):
        p = P3 if i % 2 else P25
        c = np.pi * rng.integers(0, 2) + rng.uniform(-0.2, 0.2)
        w = rng.uniform(0.3, 0.9) * 0.5
        pair = random_standard_pair(p, CP, float(np.exp(rng.uniform(np.log(1e3), np.log(1e4)))), rng,
                                    interval=(c - w / 2, c + w / 2))
        res = decompose_image(pair, PART, p, CP)
        assert abs(res.total_mass() - pair.mass(pair.lo, pair.hi)) <= 1e-8


def test_aligned_cells_are_partition_cells_and_standard():
    pair = _ref(P3, 1.2, 1.6, 1e3)
    res = decompose_image(pair, PART, P3, CP)
    blk = res.aligned[0]
    # edges are located through their preimages, one ulp of which moves the image by the expansion rate
    tol = 4 * np.abs(pair.expansion(pair.nodes(257))).max() * np.spacing(pair.hi)
    for j in (blk.j_first, (blk.j_first + blk.j_last) // 2, blk.j_last):
        cell = res.cell_pair(blk, j)
        assert abs(cell.lo - j * PART.width) <= tol
        assert abs(cell.hi - (j + 1) * PART.width) <= tol
        assert check_standard(cell, P3, CP, n=129).is_standard


def test_expansion_bounds_reference_pairs():
    rng = np.random.default_rng(1)
    for y_hat in (1e3, 1e4, 1e5):
        for c in (0.0, np.pi, 1.0):
            a = expansion_bounds_audit(_ref(P3, c - 0.2, c + 0.2, y_hat, c + rng.uniform(-0.1, 0.1)), P3, CP)
            assert (a.violations_a1, a.violations_a2, a.violations_a3) == (0, 0, 0)
            assert a.chain_rule_discrepancy < 1e-6


def test_engine_matches_decomposition_on_reference_pair():
    pair = _ref(P3, -0.2, 0.2, 1e3)
    res = decompose_image(pair, PART, P3, CP)
    xs = np.linspace(pair.lo + 1e-6, pair.hi - 1e-6, 2001)
    kinds = [k for k, _, _ in engine_first_step(pair, xs, P3, CP)]
    agree = 0
    for s, k in zip(xs, kinds):
        kind, _ = res.locate(s)
        kind = "standard" if kind in ("aligned", "boundary") else kind
        agree += kind == k
    assert agree / len(xs) >= 0.99


def test_standby_resolution_bounded():
    counts = []
    for y_hat in (1e3, 1e4, 1e5):
        res = decompose_image(_ref(P3, -0.2, 0.2, y_hat, 0.01), PART, P3, CP)
        counts.append(len(res.standby))
        for r in standby_resolution(res, P3, CP, n_check=4):
            assert r.all_standard and r.min_two_step_ratio > 1
    # the count does not grow with the height
    assert max(counts) <= 2 * min(counts)
    assert standby_resolution(decompose_image(_ref(P3, 1.2, 1.6, 1e3), PART, P3, CP), P3, CP) == []


def test_critical_time_terminations():
    pair = _ref(P3, -0.2, 0.2, 1e3)
    res = decompose_image(pair, PART, P3, CP)
    z = res.z_intervals[0]
    tau, term = critical_time(pair, [0.5 * (z[0] + z[1])], P3, CP)
    assert tau[0] == 0 and term[0] == 2


def test_critical_time_finite():
    pair = _ref(P25, -0.2, 0.2, 1e3)
    rng = np.random.default_rng(2)
    tau, term = critical_time(pair, rng.uniform(pair.lo, pair.hi, 1000), P25, CP, max_iter=10 ** 6)
    assert np.mean(term != -1) >= 0.999
    # deterministic
    tau2, _ = critical_time(pair, np.random.default_rng(2).uniform(pair.lo, pair.hi, 1000), P25, CP,
                            max_iter=10 ** 6)
    assert np.array_equal(tau, tau2)


def test_audit_log(tmp_path):
    res = decompose_image(_ref(P3, -0.2, 0.2, 1e3), PART, P3, CP)
    path = tmp_path / "audit.jsonl"
    write_audit_log([res], path)
    rec = json.loads(path.read_text().splitlines()[0])
    assert rec["total_mass"] == pytest.approx(1.0, abs=1e-8)
