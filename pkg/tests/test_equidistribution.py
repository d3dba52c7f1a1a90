import math

import numpy as np
import pytest

from fermi_twist.core_map import MapParams
from fermi_twist.critical_sets import CriticalParams
from fermi_twist.decomposition import make_standard_partition
from fermi_twist.equidistribution import (InsufficientSpanError, Observable, PsiTable, brute_force_expectation,
                                          c1_probability, cell_reference_pair, critical_cells,
                                          e0_dataset_from_pair, l_hat, lemma_e0_check, nu_min,
                                          one_step_error_scan, oscillatory_expectation, pair_expectation,
                                          psi_compute, psi_eta_grid, psi_fourier, psi_periodicity_check)
from fermi_twist.standard_pairs import ReferencePair

P3 = MapParams(A=1.0, gamma=3.0)
P25 = MapParams(A=1.0, gamma=2.5)
CP = CriticalParams()
PART = make_standard_partition(0.5)


def test_observable_norms():
    c = Observable.cos(1)
    assert c.mean == 0 and c.prime_norm == pytest.approx(1.0)
    assert Observable.cos(3).prime_norm == pytest.approx(9.0)
    assert Observable.constant(2.0).average_integral == pytest.approx(4 * np.pi)
    f = Observable.from_callable(lambda t: 1 + np.sin(2 * t))
    assert f(0.3) == pytest.approx(1 + math.sin(0.6), abs=1e-12)
    assert f.zero_average().mean == 0
    with pytest.raises(ValueError):
        Observable({1: 1.0, -1: 2.0})


@pytest.mark.parametrize("beta,expected", [(1.0, 2), (0.75, 3), (0.6, 6)])
def test_nu_min(beta, expected):
    assert nu_min(beta) == expected


def test_nu_min_domain():
    with pytest.raises(ValueError):
        nu_min(0.5)


def test_normalization():
    pr = ReferencePair(P3, 1.0, 1.4, 1.2, 1000.0)
    assert pair_expectation(pr, Observable.constant(1.0), 0) == pytest.approx(1.0, abs=1e-12)
    assert pair_expectation(pr, Observable.constant(1.0), 1) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("k,alpha", [(1, 0), (1, 5), (2, 0), (2, 5)])
def test_oscillatory_matches_brute_force(k, alpha):
    pr = cell_reference_pair(P25, PART, alpha, 150.0)
    obs = Observable({1: 0.5, -1: 0.5, 2: 0.25j, -2: -0.25j})
    fast = oscillatory_expectation(pr, obs, k).value
    ref = brute_force_expectation(pr, obs, k)
    assert fast == pytest.approx(ref, abs=1e-6)


def test_montecarlo_agrees_with_quadrature():
    pr = cell_reference_pair(P3, PART, 5, 200.0)
    obs = Observable.cos(1)
    q = oscillatory_expectation(pr, obs, 1).value
    mc = pair_expectation(pr, obs, 1, method="montecarlo", n_samples=10 ** 5)
    assert mc == pytest.approx(q, abs=5e-3)


def test_one_step_envelope_and_zero_observable():
    for alpha in (0, 5, 16):
        pr = cell_reference_pair(P3, PART, alpha, 1e3)
        e = abs(oscillatory_expectation(pr, Observable.cos(1), 1).value)
        assert e <= c1_probability(pr, CP) + 10 / l_hat(pr, CP)
        assert oscillatory_expectation(pr, Observable({}), 1).value == 0


def test_one_step_norm_scaling():
    s1 = one_step_error_scan(3.0, 1.0, [1e3], Observable.cos(1), phases=2)
    s4 = one_step_error_scan(3.0, 1.0, [1e3], Observable.cos(4), phases=2)
    assert s4.error[0] <= 5 * s1.error[0]


def test_gated_equals_ungated_without_invalid_mass():
    pr = cell_reference_pair(P25, PART, 5, 150.0)  # a cell away from k pi
    obs = Observable.cos(1)
    a = pair_expectation(pr, obs, 2, gate_tau=True, cp=CP)
    b = pair_expectation(pr, obs, 2, gate_tau=False, cp=CP)
    assert a == b


def test_quadrature_refinement():
    pr = cell_reference_pair(P3, PART, 0, 300.0)
    obs = Observable.cos(1)
    a = oscillatory_expectation(pr, obs, 1, eps=0.005).value
    b = oscillatory_expectation(pr, obs, 1, eps=0.0025).value
    assert abs(a - b) < 1e-6


def test_e0_examples():
    w = np.ones(10)
    lam = 0.1
    v = lemma_e0_check(w, np.full(10, lam), lam, 1.0, 0.5)
    assert v.status == "pass"
    v = lemma_e0_check(np.array([1.0]), np.array([1.0]), 1e-3, 1e-3, 1.0)
    assert v.status == "hypothesis_violation"
    with pytest.raises(ValueError):
        lemma_e0_check(w, np.full(10, 2.0), lam, 1.0, 0.5)


def test_e0_from_real_decomposition():
    pr = cell_reference_pair(P3, PART, critical_cells(PART)[0], 1e3)
    ds = e0_dataset_from_pair(pr)
    assert 0 < ds.lam <= math.exp(-1)
    assert ds.check(1.0).status == "pass"


def test_critical_cells():
    assert critical_cells(PART) == [0, 16, 17, 33]


def test_psi_normalization_and_envelope():
    eta = psi_eta_grid(300.0, P3, periods=2, points_per_period=4)
    t = psi_compute(5, 1, eta, Observable.constant(1.0), P3, CP, PART)
    assert np.allclose(t.values, 1.0, atol=1e-12)
    t = psi_compute(5, 1, eta, Observable.cos(1), P3, CP, PART)
    pr = cell_reference_pair(P3, PART, 5, 300.0)
    assert np.max(np.abs(t.values)) <= c1_probability(pr, CP) + 10 / l_hat(pr, CP)


def test_psi_table_validation():
    with pytest.raises(ValueError):
        psi_compute(0, 1, np.array([300.0, 299.0]), Observable.cos(1), P3, CP, PART)
    with pytest.raises(ValueError):
        psi_compute(0, 3, np.array([300.0]), Observable.cos(1), P3, CP, PART, n=2)


def _table(values, periods=2):
    m = len(values) // periods
    return PsiTable(0, 1, 1e3, np.arange(len(values), dtype=float), np.arange(len(values)) * 2 * np.pi / m % (2 * np.pi),
                    np.asarray(values, float), np.zeros(len(values)), periods, m)


def test_periodicity_constant_and_span():
    assert psi_periodicity_check(_table(np.full(16, 0.3))).discrepancy == 0
    with pytest.raises(InsufficientSpanError):
        psi_periodicity_check(_table(np.ones(8), periods=1))


def test_fourier_reconstruction():
    m = 16
    y = np.arange(2 * m) * 2 * np.pi / m
    v = 0.3 * np.cos(y) + 0.1 * np.sin(2 * y)
    t = _table(v)
    fr = psi_fourier(t)
    assert fr.residual <= fr.aliasing_bound + 1e-12
    idx = list(fr.modes).index(1)
    assert fr.magnitudes[idx] == pytest.approx(0.15, abs=1e-12)
    assert fr.magnitudes[list(fr.modes).index(0)] < 1e-15


def test_psi_periodicity_real_table():
    eta = psi_eta_grid(1e3, P3, periods=2, points_per_period=8)
    t = psi_compute(1, 1, eta, Observable.cos(1), P3, CP, PART)
    r = psi_periodicity_check(t)
    assert r.discrepancy < 1e-3 * max(np.max(np.abs(t.values)), 1e-12) + 1e-9
    fr = psi_fourier(t)
    assert fr.magnitudes[list(fr.modes).index(0)] < 1e-3 * fr.magnitudes.max()
