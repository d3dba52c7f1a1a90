import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fermi_twist.core_map import MapParams
from fermi_twist.critical_sets import (CriticalParams, EmptyCellError, audit_configuration, cell_index_at,
                                       cell_measure_c2, classify, classify_arrays, default_critical_params,
                                       measure_slope_c1, strip_measure_c1, total_measure_partial_sum)

P3 = MapParams(A=1.0, gamma=3.0)
CP = CriticalParams()


def test_param_invariants():
    assert CP.K1_hat == 40 and CP.K2_hat == 2048
    with pytest.raises(ValueError):
        CriticalParams(K2_bar=4.0)
    with pytest.raises(ValueError):
        CriticalParams(K1=10, K1_hat=5)


def test_flag_implications_million_points():
    rng = np.random.default_rng(0)
    n = 10 ** 6
    # half uniform, half concentrated near the strips at 0 and pi
    x = np.concatenate([rng.uniform(0, 2 * np.pi, n // 2),
                        np.pi * rng.integers(0, 2, n // 2) + rng.normal(0, 1e-3, n // 2)])
    y = np.exp(rng.uniform(np.log(P3.y_star), np.log(1e5), n))
    f = classify_arrays(x, y, P3, CP)
    assert not np.any(f["in_C2"] & ~f["in_C1"])
    assert not np.any(f["in_C1"] & ~f["in_C1_hat"])
    assert not np.any(f["in_C2"] & ~f["in_C2_hat"])
    assert not np.any(f["in_C2_star"] & ~f["in_C2_hat"])


@settings(max_examples=300, deadline=None)
@given(x=st.floats(-0.01, 0.01), logy=st.floats(np.log(100), np.log(1e6)))
def test_core_implies_c2_near_axis(x, logy):
    # the core is contained in C2 for the shipped constants
    c = classify(x, float(np.exp(logy)), P3, CP)
    assert (not c.in_core_C2) or c.in_C2
    assert (not c.in_C2) or (c.in_C1 and c.in_C2_hat)


def test_threshold_examples():
    c = classify(np.pi / 2, 1e4, P3, CP)
    assert abs(c.h_tilde_here + 2) < 1e-6 and not c.in_C1
    c = classify(0.0, 1e4, P3, CP)
    assert c.in_core_C2 and c.in_C2


def test_exact_vs_approximate_mode():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 2 * np.pi, 10 ** 5)
    y = np.exp(rng.uniform(np.log(1e3), np.log(1e5), 10 ** 5))
    a = classify_arrays(x, y, P3, CP, mode="exact")
    b = classify_arrays(x, y, P3, CP, mode="approximate")
    for k in ("in_C1", "in_C2", "in_core_C2", "in_C1_hat", "in_C2_hat", "in_C2_star"):
        assert np.mean(a[k] != b[k]) < 1e-3


def test_shipped_constants_pass_audit():
    cp = default_critical_params(P3)
    assert cp.K2 == 512.0
    assert audit_configuration(P3, cp, n_samples=10 ** 5)["ok"]


def test_strip_measure_slope():
    ys = np.geomspace(100, 1e4, 7).astype(int)
    slope, se, _ = measure_slope_c1(P3, CP, ys, n_samples=10 ** 5)
    assert abs(slope + 1) <= 0.15


def test_strip_measure_errors_and_variance():
    with pytest.raises(EmptyCellError):
        strip_measure_c1(10, P3, CP)
    _, se1 = strip_measure_c1(1000, P3, CP, n_samples=10 ** 5, seed=3)
    _, se2 = strip_measure_c1(1000, P3, CP, n_samples=4 * 10 ** 5, seed=3)
    assert se2 / se1 == pytest.approx(0.5, rel=0.1)


def test_cell_symmetry_and_parts():
    n = cell_index_at(1e3, P3)
    a = cell_measure_c2(0, n, P3, CP, split=True)
    b = cell_measure_c2(1, n, P3, CP)
    assert 0.5 <= a.measure / b.measure <= 2
    assert sum(a.parts.values()) == pytest.approx(a.measure, rel=1e-12)
    assert a.y_hat_n == pytest.approx(1e3, rel=0.01)


def test_partial_sums_monotone():
    ps = total_measure_partial_sum(MapParams(A=1.0, gamma=2.5), CriticalParams(), 10, n_samples=10 ** 4)
    assert len(ps.partial_sums) == 10
    assert np.all(np.diff(ps.partial_sums) >= 0)


def test_a_zero_is_total():
    p = MapParams(A=0.0, gamma=3.0, test_mode=True)
    f = classify_arrays(np.linspace(0, 6, 50), np.full(50, 200.0), p, CP)
    assert f["in_C1"].all()
