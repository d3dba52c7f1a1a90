"""The twist map F(x, y) = (x + Y(y), y + 2 A cos(x + Y(y))) on the cylinder.

Angles have period 2*pi. Y(y) = Yhat * y**gamma above the cutoff L; below L a
C^2 quintic blend continues Y to a constant on [0, L/2].
"""

from dataclasses import dataclass, field
import math
from typing import Optional

import numpy as np
from numba import njit

from .numerics import TWO_PI, power_diff, two_product, two_sum, wrap_angle


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of a map operation."""


def _continuation_coeffs(gamma, coeff, L):
    """Coefficients (Y_lo, q0, q1, q2) of the blend on [L/2, L].

    With u = (y - L/2)/(L/2), Y = Y_lo + P(u), P' = u^2 Q(u) and Q quadratic,
    matching Y, Y', Y'' at y = L; Q >= 0 keeps the blend monotone.
    """
    h = 0.5 * L
    d1 = coeff * gamma * L ** (gamma - 1) * h
    d2 = coeff * gamma * (gamma - 1) * L ** (gamma - 2) * h * h
    kappa = max(0.0, d2 - 3 * d1)
    u = np.linspace(0, 1, 201)
    for _ in range(200):
        q = d1 + (d2 - 2 * d1) * (u - 1) + kappa * (u - 1) ** 2
        if q.min() >= 0:
            break
        kappa = 2 * kappa + d1
    q0 = d1 - (d2 - 2 * d1) + kappa
    q1 = (d2 - 2 * d1) - 2 * kappa
    q2 = kappa
    p1 = q0 / 3 + q1 / 4 + q2 / 5
    y_lo = coeff * L ** gamma - p1
    return y_lo, q0, q1, q2


def _conditions_hold(A, gamma, coeff, y, eps=0.1):
    """Sampled check of the y* requirements at height y (and a decade above)."""
    if A <= 0:
        return False
    ys = np.geomspace(y, 10 * y, 64)
    yp = coeff * gamma * ys ** (gamma - 1)
    # sup |h_1| = 2A + 1/Y' < 3A and sup |h~_1| = 2A + 2/Y' < 3A
    if np.any(2.0 / yp >= A):
        return False
    lo = np.maximum(ys - 4 * A, 1e-300)
    for yk in (lo, ys + 4 * A):
        ratio = (yk / ys) ** (gamma - 1)
        if np.any(np.abs(ratio - 1) >= eps):
            return False
    return True


def default_y_star(A, gamma, coeff=1.0, eps=0.1):
    """Smallest power of ten (>= 10) where the slope and confusion-margin conditions hold.

    Falls back to 10 when no decade up to 1e8 qualifies (e.g. gamma <= 1).
    """
    for k in range(1, 9):
        if _conditions_hold(A, gamma, coeff, 10.0 ** k, eps):
            return 10.0 ** k
    return 10.0


@dataclass(frozen=True)
class MapParams:
    """Parameters (A, gamma, Yhat) and cutoffs (L, y_star) of the map."""

    A: float = 1.0
    gamma: float = 3.0
    y_hat_coeff: float = 1.0
    L: Optional[float] = None
    y_star: Optional[float] = None
    test_mode: bool = False
    _cont: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if self.gamma <= 0:
            raise DomainError("gamma must be positive")
        if self.y_hat_coeff <= 0:
            raise DomainError("y_hat_coeff must be positive")
        if self.A < 0 or (self.A == 0 and not self.test_mode):
            raise DomainError("A must be positive (A = 0 only in test mode)")
        y_star = self.y_star
        if y_star is None:
            y_star = default_y_star(self.A, self.gamma, self.y_hat_coeff)
            object.__setattr__(self, "y_star", float(y_star))
        L = self.L
        if L is None:
            L = 0.5 * self.y_star
            object.__setattr__(self, "L", float(L))
        if not (self.y_star > self.L > 0):
            raise DomainError("need y_star > L > 0")
        object.__setattr__(self, "_cont", _continuation_coeffs(self.gamma, self.y_hat_coeff, self.L))

    def beta(self) -> float:
        return (self.gamma - 1) / 2

    def packed(self) -> np.ndarray:
        """Flat float array consumed by the compiled kernels."""
        return np.array([self.A, self.gamma, self.y_hat_coeff, self.L, *self._cont], dtype=np.float64)

    def rescaled(self) -> "MapParams":
        """Equivalent parameters with Yhat = 1 under y -> Yhat^(1/gamma) y."""
        s = self.y_hat_coeff ** (1 / self.gamma)
        return MapParams(A=s * self.A, gamma=self.gamma, y_hat_coeff=1.0, L=s * self.L,
                         y_star=s * self.y_star, test_mode=self.test_mode)

    def to_dict(self) -> dict:
        return {"A": self.A, "gamma": self.gamma, "y_hat_coeff": self.y_hat_coeff,
                "L": self.L, "y_star": self.y_star}

    def digest(self) -> str:
        import hashlib
        import json
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(wrap_angle(self.x)))
        if not self.y > 0:
            raise DomainError("y must be positive")


@dataclass
class Orbit:
    points: np.ndarray          # shape (n+1, 2): columns x, y
    params: MapParams
    seed_point: Point
    first_below_y_star: Optional[int] = None
    first_below_L: Optional[int] = None
    truncated: bool = False

    def __len__(self):
        return len(self.points)

    def point(self, k) -> Point:
        return Point(*self.points[k])


# ---------------------------------------------------------------------------
# forcing and twist function

def forcing(x, order, params: MapParams):
    """Derivative of the given order (0..3) of A*sin at x."""
    A = params.A
    if order == 0:
        return A * np.sin(x)
    if order == 1:
        return A * np.cos(x)
    if order == 2:
        return -A * np.sin(x)
    if order == 3:
        return -A * np.cos(x)
    raise DomainError("order must be in 0..3")


def _check_positive(y):
    if np.any(np.asarray(y) <= 0):
        raise DomainError("argument must be positive")


def _blend(y, params, deriv):
    L = params.L
    y_lo, q0, q1, q2 = params._cont
    h = 0.5 * L
    u = np.clip((y - h) / h, 0.0, None)
    if deriv == 0:
        return y_lo + u ** 3 * (q0 / 3 + q1 * u / 4 + q2 * u * u / 5)
    if deriv == 1:
        return u * u * (q0 + q1 * u + q2 * u * u) / h
    return (2 * u * (q0 + q1 * u + q2 * u * u) + u * u * (q1 + 2 * q2 * u)) / (h * h)


def big_y(y, params: MapParams):
    """Y(y) = Yhat * y**gamma (continued below L)."""
    _check_positive(y)
    y = np.asarray(y, dtype=float)
    out = np.where(y > params.L, params.y_hat_coeff * np.maximum(y, params.L) ** params.gamma,
                   _blend(np.minimum(y, params.L), params, 0))
    return out if out.ndim else float(out)


def big_y_prime(y, params: MapParams):
    _check_positive(y)
    y = np.asarray(y, dtype=float)
    g, c = params.gamma, params.y_hat_coeff
    out = np.where(y > params.L, c * g * np.maximum(y, params.L) ** (g - 1),
                   _blend(np.minimum(y, params.L), params, 1))
    return out if out.ndim else float(out)


def big_y_second(y, params: MapParams):
    _check_positive(y)
    y = np.asarray(y, dtype=float)
    g, c = params.gamma, params.y_hat_coeff
    out = np.where(y > params.L, c * g * (g - 1) * np.maximum(y, params.L) ** (g - 2),
                   _blend(np.minimum(y, params.L), params, 2))
    return out if out.ndim else float(out)


def big_y_inverse(v, params: MapParams):
    """Inverse of the power law Yhat * y**gamma (principal branch)."""
    _check_positive(v)
    out = (np.asarray(v, dtype=float) / params.y_hat_coeff) ** (1.0 / params.gamma)
    return out if out.ndim else float(out)


# fast variants on the power-law branch, no validation (y > L assumed)

def yp(y, params):
    return params.y_hat_coeff * params.gamma * y ** (params.gamma - 1)


def ypp(y, params):
    g = params.gamma
    return params.y_hat_coeff * g * (g - 1) * y ** (g - 2)


# ---------------------------------------------------------------------------
# map, inverse, jacobian

def map_arrays(x, y, params: MapParams):
    """Vectorized F; returns (x1, y1, continuation_flag)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_positive(y)
    x1 = wrap_angle(x + big_y(y, params))
    y1 = y + 2 * params.A * np.cos(x1)
    return x1, y1, y <= params.L


def inverse_arrays(x1, y1, params: MapParams):
    """Vectorized F^{-1}."""
    y0 = np.asarray(y1, dtype=float) - 2 * params.A * np.cos(x1)
    if np.any(y0 <= 0):
        raise DomainError("preimage height is non-positive")
    x0 = wrap_angle(np.asarray(x1) - big_y(y0, params))
    return x0, y0


def apply_map(p: Point, params: MapParams) -> Point:
    """One step of F; points with y <= L use the continuation (see ``continuation_flag``)."""
    x1, y1, _ = map_arrays(p.x, p.y, params)
    return Point(float(x1), float(y1))


def continuation_flag(p: Point, params: MapParams) -> bool:
    return p.y <= params.L


def inverse_map(p: Point, params: MapParams) -> Point:
    x0, y0 = inverse_arrays(p.x, p.y, params)
    return Point(float(x0), float(y0))


def image_phase(x, y, params: MapParams):
    """x + Y(y) reduced mod 2pi; the power branch is evaluated in extended precision."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    yl = y.astype(np.longdouble)
    two_pi = 2 * np.arccos(np.longdouble(-1))
    lifted = np.where(y > params.L, params.y_hat_coeff * yl ** params.gamma,
                      np.asarray(big_y(np.maximum(y, 1e-300), params), dtype=np.longdouble))
    return np.asarray(np.mod(x.astype(np.longdouble) + lifted, two_pi), dtype=float)


def jacobian_arrays(x, y, params: MapParams):
    """DF at the points (x, y); array of shape (..., 2, 2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = big_y_prime(y, params)
    f2 = 2 * forcing(image_phase(x, y, params), 2, params)
    J = np.empty(np.shape(x) + (2, 2))
    J[..., 0, 0] = 1.0
    J[..., 0, 1] = d
    J[..., 1, 0] = f2
    J[..., 1, 1] = 1.0 + f2 * d
    return J


def jacobian(p: Point, params: MapParams) -> np.ndarray:
    return jacobian_arrays(p.x, p.y, params)


def jacobian_det(x, y, params: MapParams):
    """det DF = a11*a22 - a12*a21 in double-double arithmetic.

    At large heights Y' reaches 1e18 and a float64 a22 = 1 + f2 Y' cannot hold the
    unit term, so a22 is kept as an unevaluated sum built from the same factors
    f2 = 2 phi''(x1) and Y'(y) that define the entries.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = big_y_prime(y, params)
    f2 = 2 * forcing(x + big_y(y, params), 2, params)
    p_hi, p_lo = two_product(f2, d)          # a21 * a12, also the variable part of a22
    a22_hi, e = two_sum(1.0, p_hi)
    a22_lo = e + p_lo
    # a11 = 1, so det = a22 - a12 a21
    s, e = two_sum(a22_hi, -p_hi)
    return s + (e + (a22_lo - p_lo))


def jacobian_fd(p: Point, params: MapParams, rel=1e-6):
    """Central-difference Jacobian of the lifted map (oracle for tests).

    Steps are rel in x and rel / Y'(y) in y (capped at rel * y), the height change
    that moves the image angle by rel radians. Image angle and height are taken
    relative to (extended-precision) reference values so the differences do not
    cancel against large lifted values.
    """
    g, c = params.gamma, params.y_hat_coeff
    hx = rel
    d = float(big_y_prime(p.y, params))
    hy = rel * min(p.y, 1 / d) if d > 0 else rel * p.y
    power = p.y - hy > params.L
    x1_ref = float(image_phase(p.x, p.y, params))

    def lifted(dx, dy):
        shift = power_diff(p.y, dy, g, c) if power else float(big_y(p.y + dy, params) - big_y(p.y, params))
        u = dx + shift
        return np.array([u, dy + 2 * params.A * np.cos(x1_ref + u)])

    cx = (lifted(hx, 0.0) - lifted(-hx, 0.0)) / (2 * hx)
    cy = (lifted(0.0, hy) - lifted(0.0, -hy)) / (2 * hy)
    return np.column_stack([cx, cy])


# ---------------------------------------------------------------------------
# compiled orbit kernels

@njit(cache=True, fastmath=False)
def _ybig(y, mp):
    g = mp[1]
    c = mp[2]
    L = mp[3]
    if y > L:
        return c * y ** g
    h = 0.5 * L
    u = (y - h) / h
    if u < 0.0:
        u = 0.0
    return mp[4] + u * u * u * (mp[5] / 3 + mp[6] * u / 4 + mp[7] * u * u / 5)


@njit(cache=True)
def _step(x, y, mp):
    x1 = x + _ybig(y, mp)
    x1 = x1 - 2 * math.pi * math.floor(x1 / (2 * math.pi))
    y1 = y + 2 * mp[0] * math.cos(x1)
    return x1, y1


@njit(cache=True)
def _orbit_kernel(x0, y0, n, mp, y_star):
    out = np.empty((n + 1, 2))
    out[0, 0] = x0
    out[0, 1] = y0
    first_star = -1
    first_L = -1
    x, y = x0, y0
    last = n
    for k in range(1, n + 1):
        if y <= 0.0:
            last = k - 1
            break
        x, y = _step(x, y, mp)
        out[k, 0] = x
        out[k, 1] = y
        if first_star < 0 and y <= y_star:
            first_star = k
        if first_L < 0 and y <= mp[3]:
            first_L = k
    return out, first_star, first_L, last


def iterate(p: Point, n: int, params: MapParams) -> Orbit:
    """Orbit of length n+1 starting at p, with first indices below y* and L."""
    if n < 0:
        raise DomainError("n must be non-negative")
    pts, fs, fl, last = _orbit_kernel(p.x, p.y, int(n), params.packed(), params.y_star)
    truncated = last < n
    if truncated:
        pts = pts[: last + 1]
    if p.y <= params.y_star:
        fs = 0
    if p.y <= params.L:
        fl = 0
    return Orbit(points=pts, params=params, seed_point=p,
                 first_below_y_star=None if fs < 0 else int(fs),
                 first_below_L=None if fl < 0 else int(fl), truncated=truncated)


@njit(cache=True)
def _max_height_kernel(x0s, y0s, n, mp):
    m = len(x0s)
    ymax = np.empty(m)
    yend = np.empty(m)
    for i in range(m):
        x, y = x0s[i], y0s[i]
        best = y
        for _ in range(n):
            x, y = _step(x, y, mp)
            if y > best:
                best = y
        ymax[i] = best
        yend[i] = y
    return ymax, yend


def ensemble_max_height(x0s, y0s, n, params: MapParams):
    """Running maximum and final height of each orbit over n steps."""
    return _max_height_kernel(np.asarray(x0s, float), np.asarray(y0s, float), int(n), params.packed())
