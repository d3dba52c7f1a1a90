import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fermi_twist.core_map import (DomainError, MapParams, Point, apply_map, big_y, big_y_inverse, big_y_prime,
                                  big_y_second, ensemble_max_height, forcing, image_phase, inverse_map, iterate,
                                  jacobian, jacobian_arrays, jacobian_det, jacobian_fd)


def test_forcing_values():
    assert forcing(0.0, 1, MapParams(A=1.0)) == 1.0
    assert forcing(math.pi / 2, 2, MapParams(A=2.0)) == -2.0
    assert forcing(0.3, 3, MapParams(A=1.5)) == pytest.approx(-1.5 * math.cos(0.3), rel=1e-15)
    assert forcing(0.3, 0, MapParams(A=1.5)) == pytest.approx(1.5 * math.sin(0.3), rel=1e-15)


def test_power_law_and_inverse():
    p = MapParams(A=1.0, gamma=3.0, y_star=1.5, L=1.0)
    assert big_y(2.0, p) == 8.0
    assert big_y_prime(2.0, p) == 12.0
    assert big_y_second(2.0, p) == 12.0
    assert big_y_inverse(8.0, p) == pytest.approx(2.0, rel=1e-15)
    q = MapParams(A=1.0, gamma=2.5)
    for v in (1e5, 1e7, 1e12):  # above Y(L), on the power-law branch
        assert big_y(big_y_inverse(v, q), q) == pytest.approx(v, rel=1e-12)


def test_domain_errors():
    p = MapParams()
    with pytest.raises(DomainError):
        big_y(-1.0, p)
    with pytest.raises(DomainError):
        MapParams(A=0.0)
    with pytest.raises(DomainError):
        iterate(Point(0.0, 200.0), -1, p)
    MapParams(A=0.0, test_mode=True)


def test_beta():
    assert MapParams(gamma=3.0).beta() == 1.0
    assert MapParams(gamma=2.5).beta() == 0.75


def test_apply_map_closed_forms():
    p = MapParams(A=0.0, gamma=2.0, test_mode=True, y_star=1.5, L=1.0)
    q = apply_map(Point(0.0, 2.0), p)
    assert q.x == pytest.approx(4.0 % (2 * math.pi)) and q.y == 2.0
    p = MapParams(A=1.0, gamma=1.0, y_star=1.0, L=0.5)
    q = apply_map(Point(0.0, math.pi), p)
    assert q.x == pytest.approx(math.pi) and q.y == pytest.approx(math.pi - 2)


def test_round_trip():
    rng = np.random.default_rng(0)
    p = MapParams(A=1.0, gamma=2.5, y_star=10.0, L=5.0)
    for _ in range(1000):
        pt = Point(rng.uniform(0, 2 * math.pi), rng.uniform(10, 100))
        back = inverse_map(apply_map(pt, p), p)
        dx = (back.x - pt.x + math.pi) % (2 * math.pi) - math.pi
        assert abs(dx) < 1e-10 and abs(back.y - pt.y) < 1e-10


@settings(max_examples=200, deadline=None)
@given(x=st.floats(0, 2 * math.pi, exclude_max=True), logy=st.floats(math.log(10), math.log(1e6)),
       gamma=st.sampled_from([1.0, 2.5, 3.0, 4.0]), A=st.floats(0.1, 3.0))
def test_area_preservation_property(x, logy, gamma, A):
    p = MapParams(A=A, gamma=gamma)
    assert abs(jacobian_det(x, math.exp(logy), p) - 1) <= 1e-12


def test_det_many_points():
    rng = np.random.default_rng(1)
    p = MapParams(A=1.0, gamma=4.0)
    x = rng.uniform(0, 2 * np.pi, 10 ** 4)
    y = np.exp(rng.uniform(np.log(10), np.log(1e6), 10 ** 4))
    assert np.max(np.abs(jacobian_det(x, y, p) - 1)) <= 1e-12


def test_jacobian_shear_and_twist():
    p = MapParams(A=0.0, gamma=3.0, test_mode=True)
    J = jacobian(Point(1.0, 200.0), p)
    assert np.allclose(J, [[1, big_y_prime(200.0, p)], [0, 1]])
    q = MapParams(A=1.0, gamma=2.5)
    y = np.geomspace(60, 1e6, 50)
    assert np.all(jacobian_arrays(np.ones_like(y), y, q)[:, 0, 1] > 0)


@pytest.mark.parametrize("gamma", [1.0, 2.5, 3.0, 4.0])
def test_jacobian_matches_finite_differences(gamma):
    p = MapParams(A=1.0, gamma=gamma)
    rng = np.random.default_rng(2)
    for _ in range(200):
        pt = Point(rng.uniform(0, 2 * np.pi), float(np.exp(rng.uniform(np.log(p.L * 1.01), np.log(1e6)))))
        J = jacobian(pt, p)
        F = jacobian_fd(pt, p)
        assert np.all(np.abs(F - J) <= 1e-6 * (np.abs(J) + 1))


def test_image_phase_is_reduced():
    p = MapParams(A=1.0, gamma=3.0)
    v = image_phase(np.array([0.1, 6.0]), np.array([150.0, 2e5]), p)
    assert np.all((0 <= v) & (v < 2 * np.pi))


def test_iterate_basics():
    p = MapParams(A=1.0, gamma=3.0)
    o = iterate(Point(0.5, 300.0), 0, p)
    assert len(o) == 1 and o.point(0) == Point(0.5, 300.0)
    q = MapParams(A=0.0, gamma=1.0, test_mode=True, y_star=2.0, L=1.0)
    y0 = 3.7
    o = iterate(Point(0.2, y0), 20, q)
    k = np.arange(21)
    d = (o.points[:, 0] - (0.2 + k * y0) % (2 * np.pi) + np.pi) % (2 * np.pi) - np.pi
    assert np.max(np.abs(d)) < 1e-12 and np.all(o.points[:, 1] == y0)


def test_iterate_consistent_with_apply_map():
    p = MapParams(A=1.0, gamma=2.5)
    rng = np.random.default_rng(3)
    # one step only: later steps amplify rounding by Y'(y) ~ 1e7
    for x0, y0 in zip(rng.uniform(0, 2 * np.pi, 50), rng.uniform(100, 1e4, 50)):
        o = iterate(Point(x0, y0), 1, p)
        pt = apply_map(Point(x0, y0), p)
        # the phase x + Y(y) is only known to a few ulps of Y(y)
        tol = 2 * p.A * 16 * np.finfo(float).eps * big_y(y0, p)
        assert abs(o.points[1, 1] - pt.y) <= tol


def test_rescaling_reduction():
    p = MapParams(A=1.0, gamma=3.0, y_hat_coeff=2.0)
    q = p.rescaled()
    s = 2.0 ** (1 / 3)
    a = iterate(Point(0.3, 20.0), 100, p).points
    b = iterate(Point(0.3, 20.0 * s), 100, q).points
    # the phases agree while the float64 phase error stays small
    assert np.max(np.abs(a[:, 1] * s - b[:, 1])) / (20 * s) < 1e-9


def test_first_below_markers():
    p = MapParams(A=1.0, gamma=3.0)
    o = iterate(Point(0.0, 90.0), 1, p)
    assert o.first_below_y_star == 0 and o.first_below_L is None


def test_kam_energy_statistic():
    # gamma = 0.5: max height over 1e6 steps stays below 2 y0 for >= 99% of seeds
    p = MapParams(A=1.0, gamma=0.5)
    rng = np.random.default_rng(5)
    ymax, _ = ensemble_max_height(rng.uniform(0, 2 * np.pi, 100), np.full(100, 50.0), 10 ** 6, p)
    assert np.mean(ymax < 100.0) >= 0.99
