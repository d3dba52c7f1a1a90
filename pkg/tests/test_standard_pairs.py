import math

import numpy as np
import pytest

from fermi_twist.core_map import MapParams, Point, apply_map, big_y_prime, inverse_map
from fermi_twist.critical_sets import CriticalParams
from fermi_twist.standard_pairs import (DegenerateImageError, GridPair, IntervalWidthError, ReferencePair,
                                        adapted_coords, check_standard, gronwall_bounds, gronwall_constants,
                                        make_reference_pair, pair_from_json, pair_to_json, pushforward_pair,
                                        random_standard_pair, shadow_reference, slope_field_1)

P3 = MapParams(A=1.0, gamma=3.0)
CP = CriticalParams()


def test_slope_field_direct_formula():
    p = MapParams(A=1.0, gamma=3.0, y_star=1.5, L=1.0)
    _, ht, _ = slope_field_1(math.pi / 2, 10.0, p, y_prev=10.0)
    assert ht == pytest.approx(-2 + 2 / 300, rel=1e-14)
    _, ht, _ = slope_field_1(0.0, 1e8, P3)
    assert abs(ht) < 1e-15


def test_slope_field_exact_vs_approximate():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 2 * np.pi, 1000)
    y = np.exp(rng.uniform(np.log(100), np.log(1e5), 1000))
    yprev = y - 2 * P3.A * np.cos(x)
    _, ht_exact, _ = slope_field_1(x, y, P3, y_prev=yprev)
    _, ht_approx, _ = slope_field_1(x, y, P3)
    # compare the 1/Y' terms, which carry the y_prev dependence
    inv_exact = ht_exact + 2 * np.sin(x)
    inv_approx = ht_approx + 2 * np.sin(x)
    assert np.all(np.abs(inv_exact - inv_approx) / np.abs(inv_exact) < 10 / y)


def test_gronwall_constants_values():
    mu1, mu2 = gronwall_constants(0.5)
    assert mu1 == pytest.approx(2 * math.exp(-0.5), rel=1e-15)
    assert mu2 == pytest.approx(8 * math.exp(0.5), rel=1e-15)
    assert (round(mu1, 4), round(mu2, 4)) == (1.2131, 13.1898)


def test_gronwall_uniform_and_exponential():
    pair = ReferencePair(P3, 1.0, 1.4, 1.2, 500.0)
    assert np.allclose(pair.rho(pair.nodes(9)), 2.5)
    assert gronwall_bounds(pair, 0.5)[:2] == (True, True)
    x = np.linspace(1.0, 1.45, 257)
    g = GridPair(P3, 1.0, 1.45, ReferencePair(P3, 1.0, 1.45, 1.2, 500.0).psi(x), np.exp(0.9 * x))
    assert gronwall_bounds(g, 0.5)[:2] == (True, True)


def test_reference_pair_construction():
    pair = make_reference_pair((0.5, 0.9), Point(0.7, 1000.0), P3)
    assert pair.psi(0.7) == 1000.0
    other = make_reference_pair((0.5, 0.9), Point(0.6, float(pair.psi(0.6))), P3)
    assert other.c == pytest.approx(pair.c, abs=1e-10 * abs(pair.c))
    with pytest.raises(IntervalWidthError):
        make_reference_pair((0.5, 0.55), Point(0.52, 1000.0), P3)


def test_reference_slope_identity():
    pair = make_reference_pair((2.0, 2.4), Point(2.2, 300.0), P3)
    x = pair.nodes(257)
    h1, _, _ = slope_field_1(x, pair.psi(x), P3, y_prev=pair.y_prev(x))
    assert np.max(np.abs(pair.slope(x) - h1)) <= 1e-8
    # y_prev is the exact preimage height along the vertical fiber
    pre = inverse_map(Point(2.2, 300.0), P3)
    assert pair.y_prev(2.2) == pytest.approx(pre.y, rel=1e-13)


def test_reference_pair_is_standard():
    pair = make_reference_pair((2.0, 2.4), Point(2.2, 3000.0), P3)
    rep = check_standard(pair, P3, CP)
    assert rep.is_standard and rep.max_delta_slope == 0


def test_exponential_density_fails_regularity():
    x = np.linspace(0.0, 1.0, 257)
    base = ReferencePair(P3, 0.0, 1.0, 0.5, 1000.0)
    g = GridPair(P3, 0.0, 1.0, base.psi(x), np.exp(2 * x))
    rep = check_standard(g, P3, CP)
    assert not rep.is_standard
    assert rep.max_abs_r == pytest.approx(2.0, rel=1e-6)


def test_expansion_matches_finite_differences():
    pair = make_reference_pair((2.0, 2.4), Point(2.2, 100.0), P3)
    for x0 in np.linspace(2.05, 2.35, 7):
        h = 1e-7
        fd = (pair.image_offset(x0 + h, x0) - pair.image_offset(x0 - h, x0)) / (2 * h)
        assert pair.expansion(x0) == pytest.approx(fd, rel=1e-5)


def test_pushforward_zero_forcing():
    p = MapParams(A=0.0, gamma=3.0, test_mode=True)
    pair = ReferencePair(p, 1.0, 1.4, 1.2, 200.0)
    img = pushforward_pair(pair, 1.0, 1.4)
    t = np.linspace(img.lo, img.hi, 9)[1:-1]
    x = img.preimage(t)
    d1 = big_y_prime(pair.psi(x), p)
    L = pair.expansion(x)
    assert np.allclose(img.slope(t), (1 - 1 / L) / d1, rtol=1e-12, atol=0)


def test_pushforward_recursion_reference_pair():
    pair = make_reference_pair((1.0, 1.4), Point(1.2, 55.0), P3)  # just above L = 50
    img = pushforward_pair(pair, 1.0, 1.4)
    assert max(img.recursion_check().values()) <= 1e-4


def test_pushforward_mass_and_degenerate():
    rng = np.random.default_rng(1)
    pair = random_standard_pair(P3, CP, 2000.0, rng, interval=(1.0, 1.4))
    img = pushforward_pair(pair, 1.1, 1.3)
    assert img.parent_mass == pytest.approx(pair.mass(1.1, 1.3), rel=1e-12)
    assert img.mass(img.lo, img.hi) == pytest.approx(1.0, abs=1e-8)
    # a reference curve through the zero of h~ near x = 0 cannot be pushed forward monotonically
    ref = ReferencePair(P3, -0.2, 0.2, 0.0, 2000.0)
    with pytest.raises(DegenerateImageError):
        pushforward_pair(ref, -0.2, 0.2)


def test_pushforward_expectation_change_of_variables():
    pair = make_reference_pair((1.0, 1.4), Point(1.2, 200.0), P3)
    img = pushforward_pair(pair, 1.0, 1.4)
    obs = lambda x, y: np.cos(x) + 1e-3 * y
    direct = pair.expectation(lambda x, y: obs(*_image(x, y)), n=2 ** 16)
    t = np.linspace(img.lo, img.hi, 2 ** 18 + 1)
    vals = obs(t, img.psi(t)) * img.rho(t)
    pushed = float(np.trapezoid(vals, t))
    assert pushed == pytest.approx(direct, abs=1e-6)


def _image(x, y):
    out = [apply_map(Point(float(a), float(b)), P3) for a, b in zip(np.ravel(x), np.ravel(y))]
    return np.array([q.x for q in out]), np.array([q.y for q in out])


def test_random_pairs_are_standard():
    rng = np.random.default_rng(2)
    for _ in range(50):
        pair = random_standard_pair(P3, CP, float(np.exp(rng.uniform(np.log(1e3), np.log(1e5)))), rng)
        assert check_standard(pair, P3, CP).is_standard


def test_shadow_self_and_refclose():
    ref = ReferencePair(P3, 1.0, 1.4, 1.2, 1000.0)
    s = shadow_reference(ref, P3, CP)
    assert s.max_vertical_gap <= 1e-9 and s.excluded_mass <= 1e-12 and s.refclose_ok
    rng = np.random.default_rng(3)
    for _ in range(10):
        pair = random_standard_pair(P3, CP, 1e4, rng, interval=(2.0, 2.4))
        assert shadow_reference(pair, P3, CP).refclose_ok


def test_adapted_chart_round_trip():
    chart = adapted_coords((2.0, 2.4), 2.2, 1.0, P3)
    assert chart.forward(0.0, 500.0) == pytest.approx((2.2, 500.0), rel=1e-14)
    rng = np.random.default_rng(4)
    xi = rng.uniform(-0.2, 0.2, 1000)
    eta = rng.uniform(400, 600, 1000)
    x, y = chart.forward(xi, eta)
    xi2, eta2 = chart.inverse(x, y)
    assert np.max(np.abs(xi2 - xi)) <= 1e-9 and np.max(np.abs(eta2 - eta)) <= 1e-9
    for j in range(20):
        _, e = chart.inverse_rootfind(x[j], y[j])
        assert e == pytest.approx(eta[j], abs=1e-9)
    # a horizontal line in chart coordinates is a reference curve
    ref = ReferencePair(P3, 2.0, 2.4, 2.2, 500.0)
    x, y = chart.forward(np.linspace(-0.2, 0.2, 11), 500.0)
    assert np.allclose(y, ref.psi(x), rtol=1e-13)


def test_json_round_trip():
    rng = np.random.default_rng(5)
    pair = random_standard_pair(P3, CP, 1e3, rng, interval=(1.0, 1.4))
    back = pair_from_json(pair_to_json(pair), P3)
    x = np.linspace(1.0, 1.4, 31)
    assert np.allclose(back.psi(x), pair.psi(x), rtol=1e-12)
    assert np.allclose(back.rho(x), pair.rho(x), rtol=1e-6)
    with pytest.raises(ValueError):
        pair_from_json(pair_to_json(pair), MapParams(A=1.0, gamma=2.5))
