import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fermi_twist.core_map import MapParams
from fermi_twist.critical_sets import CriticalParams
from fermi_twist.decomposition import make_standard_partition
from fermi_twist.walk_escape import (ESCAPE_HEADER, LevelSamples, acceleration_diagnostic, control_walk,
                                     drift_estimate, escape_scan, gamblers_ruin_return, make_level_scheme,
                                     master_pair, tau_tail, walk_run, write_escape_csv, write_walk_csv)

P3 = MapParams(A=1.0, gamma=3.0)
CP = CriticalParams()
PART = make_standard_partition(0.5)


def _ruin_by_linear_solve(p, horizon):
    # absorbing chain on states -1..horizon, unknowns are the interior states 0..horizon-1
    n = horizon
    M = np.eye(n)
    rhs = np.zeros(n)
    for i in range(n):
        if i + 1 < n:
            M[i, i + 1] -= p
        if i - 1 >= 0:
            M[i, i - 1] -= 1 - p
        else:
            rhs[i] += 1 - p
    return np.linalg.solve(M, rhs)[0]


@settings(max_examples=50, deadline=None)
@given(p=st.floats(0.05, 0.95), horizon=st.integers(1, 20))
def test_gamblers_ruin_closed_form(p, horizon):
    assert gamblers_ruin_return(p, horizon) == pytest.approx(_ruin_by_linear_solve(p, horizon), abs=1e-10)


def test_gamblers_ruin_symmetric():
    assert gamblers_ruin_return(0.5, 8) == pytest.approx(_ruin_by_linear_solve(0.5, 8), abs=1e-12)


def test_control_walk_matches_closed_form():
    c = control_walk(p_up=0.4, horizon=8, n=10 ** 5, seed=1)
    assert c.unresolved == 0
    assert c.z_score < 4


def test_level_scheme():
    s = make_level_scheme(P3, 200.0)
    assert s.nu == 2 and s.R(1) == 400.0
    lo, hi = s.close_band(0)
    assert (lo, hi) == (196.0, 204.0)
    pr = master_pair(P3, PART, 200.0)
    assert s.is_close(pr, 0) and s.is_compatible(pr, 0) and not s.is_close(pr, 1)


@pytest.fixture(scope="module")
def samples():
    return drift_estimate(P3, CP, 200.0, n_samples=2000, seed=0, max_iter=10 ** 7)


def test_tau_k_bounded_by_tau(samples):
    assert np.all(samples.tau_k <= samples.tau)
    assert set(np.unique(samples.xi)) <= {-1, 1}
    assert not samples.truncated.any()


def test_drift_is_downward(samples):
    p, lo, hi, n = samples.drift()
    assert n == 2000 and lo <= p <= hi and p > 0.5


def test_deterministic(samples):
    again = drift_estimate(P3, CP, 200.0, n_samples=2000, seed=0, max_iter=10 ** 7)
    assert np.array_equal(again.tau_k, samples.tau_k) and np.array_equal(again.xi, samples.xi)


def test_truncation_sentinel():
    s = drift_estimate(P3, CP, 200.0, n_samples=200, seed=0, max_iter=5)
    assert np.all(s.tau_k[s.truncated] == 5)
    assert s.truncated.any()


def test_tau_tail(samples):
    fit = tau_tail(samples)
    assert fit.tail[0] == 1.0
    assert np.all(np.diff(fit.tail) <= 0)
    assert fit.slope < 0 and 0 < fit.theta < 1


def test_tau_tail_needs_samples():
    s = LevelSamples(np.zeros(5), np.arange(5), np.arange(5), -np.ones(5, int), np.zeros(5, bool), 200.0, 0, 10)
    with pytest.raises(ValueError):
        tau_tail(s)


def test_walk_unit_steps_and_csv(tmp_path):
    pr = master_pair(P3, PART, 200.0)
    e = walk_run(pr, P3, CP, n_samples=200, horizon=3, max_steps=10 ** 7, seed=0)
    for r in e.records:
        assert r.chis[0] == 0
        assert np.all(np.abs(r.xis) == 1)
        assert np.all(np.diff(r.taus) > 0)
    assert sum(e.status_counts.values()) == 200
    path = tmp_path / "walk.csv"
    write_walk_csv(e, path, digest="abc")
    rows = list(csv.reader(open(path)))
    assert rows[0][:4] == ["sample", "step", "tau_k", "chi_k"]
    assert len(rows) - 1 == sum(len(r.taus) for r in e.records)


def test_escape_scan(tmp_path):
    es = escape_scan(P3, CP, 200.0, 10 ** 4, n_orbits=20, seed=0)
    assert es.frac_bounded + es.frac_returned + es.frac_growth == pytest.approx(1.0)
    assert isinstance(es.ci_lo, float) and es.ci_lo <= es.frac_growth <= es.ci_hi
    with pytest.raises(ValueError):
        escape_scan(P3, CP, 200.0, 10 ** 9)
    path = tmp_path / "esc.csv"
    write_escape_csv([es], path)
    assert next(csv.reader(open(path)))[:-1] == ESCAPE_HEADER


def test_acceleration_diagnostic_runs():
    out = acceleration_diagnostic([0.5, 2.0], T=10 ** 3, n_orbits=8)
    assert [a for a, _, _ in out] == [0.5, 2.0]
    assert all(rate >= 0 for _, rate, _ in out)
