"""Link functions mapping unconstrained values to constrained parameters."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.special import expit

DARCY = "darcy"
LOGISTIC = "logistic"
BALL = "ball"


class LinkRangeError(ValueError):
    pass


@dataclass(frozen=True)
class LinkSpec:
    kind: str
    K_min: float = 0.0
    M0: float = 2.0
    B: float = 1.0

    def __post_init__(self):
        if self.kind not in (DARCY, LOGISTIC, BALL):
            raise ValueError(f"unknown link kind {self.kind!r}")
        if self.kind == DARCY and not (0.0 <= self.K_min < 1.0):
            raise ValueError("darcy link needs 0 <= K_min < 1")
        if self.kind == LOGISTIC and not self.M0 > 1.0:
            raise ValueError("logistic link needs M0 > 1")
        if self.kind == BALL and not self.B > 0.0:
            raise ValueError("ball map needs B > 0")

    @property
    def lower(self) -> float:
        return {DARCY: self.K_min, LOGISTIC: 0.0, BALL: -self.B}[self.kind]

    @property
    def upper(self) -> float:
        return {DARCY: math.inf, LOGISTIC: self.M0, BALL: self.B}[self.kind]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "K_min": self.K_min, "M0": self.M0, "B": self.B}


# Darcy link: Phi = K_min + (1 - K_min) (psi * phi) / (psi * phi)(0), with
# phi(t) = e^t for t < 0, 1 + t for t >= 0, and psi a normalized bump on [-1, 1].

def _bump(y):
    return math.exp(-1.0 / (1.0 - y * y)) if abs(y) < 1.0 else 0.0


@lru_cache(maxsize=1)
def _bump_moments() -> tuple[float, float]:
    mass = quad(_bump, -1.0, 1.0, epsabs=1e-14, epsrel=1e-13)[0]
    # integral of e^{-y} psi(y) dy, needed for t <= -1
    expo = quad(lambda y: math.exp(-y) * _bump(y), -1.0, 1.0, epsabs=1e-14, epsrel=1e-13)[0]
    return mass, expo / mass


def _mollified_phi(t: float) -> float:
    mass, _ = _bump_moments()

    def integrand(y):
        s = t - y
        return (math.exp(s) if s < 0 else 1.0 + s) * _bump(y)

    # split at the kink of phi for accurate quadrature
    pts = [p for p in (t,) if -1.0 < p < 1.0]
    val = quad(integrand, -1.0, 1.0, points=pts or None, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
    return val / mass


@lru_cache(maxsize=1)
def _darcy_table() -> CubicSpline:
    _, c_exp = _bump_moments()
    t = np.linspace(-1.0, 1.0, 801)
    vals = np.array([_mollified_phi(float(s)) for s in t])
    # outside [-1, 1] the convolution is c e^t (left) and 1 + t (right)
    return CubicSpline(t, vals, bc_type=((1, c_exp * math.exp(-1.0)), (1, 1.0)))


def _conv(t: np.ndarray, deriv: int = 0) -> np.ndarray:
    _, c_exp = _bump_moments()
    spline = _darcy_table()
    out = np.empty_like(t)
    left = t <= -1.0
    right = t >= 1.0
    mid = ~(left | right)
    out[left] = c_exp * np.exp(t[left])
    out[right] = (1.0 + t[right]) if deriv == 0 else 1.0
    if deriv == 2:
        out[right] = 0.0
    out[mid] = spline(t[mid], deriv)
    return out


@lru_cache(maxsize=1)
def _conv_at_zero() -> float:
    return float(_darcy_table()(0.0))


def _as_array(t):
    arr = np.asarray(t, dtype=float)
    return arr, arr.ndim == 0


def _ret(out, scalar):
    return float(out) if scalar else out


def link_apply(spec: LinkSpec, t):
    """Phi(t), vectorized."""
    t, scalar = _as_array(t)
    flat = np.atleast_1d(t).astype(float)
    if spec.kind == DARCY:
        out = spec.K_min + (1.0 - spec.K_min) * _conv(flat) / _conv_at_zero()
    elif spec.kind == LOGISTIC:
        out = spec.M0 * expit(flat - math.log(spec.M0 - 1.0))
    else:
        out = (2.0 * spec.B / math.pi) * np.arctan(flat)
    return _ret(out.reshape(t.shape), scalar)


def link_derivative(spec: LinkSpec, t):
    """Phi'(t), vectorized."""
    t, scalar = _as_array(t)
    flat = np.atleast_1d(t).astype(float)
    if spec.kind == DARCY:
        out = (1.0 - spec.K_min) * _conv(flat, 1) / _conv_at_zero()
    elif spec.kind == LOGISTIC:
        s = expit(flat - math.log(spec.M0 - 1.0))
        out = spec.M0 * s * (1.0 - s)
    else:
        out = (2.0 * spec.B / math.pi) / (1.0 + flat**2)
    return _ret(out.reshape(t.shape), scalar)


def derivative_bound(spec: LinkSpec) -> float:
    """Declared sup of |Phi'| over the real line."""
    if spec.kind == DARCY:
        # the mollified phi has slope at most 1; slack covers spline overshoot
        return (1.0 - spec.K_min) / _conv_at_zero() * (1.0 + 1e-9)
    if spec.kind == LOGISTIC:
        return spec.M0 / 4.0
    return 2.0 * spec.B / math.pi


def link_invert(spec: LinkSpec, y):
    """Phi^{-1}(y) for y strictly inside the range."""
    y, scalar = _as_array(y)
    flat = np.atleast_1d(y).astype(float)
    if np.any(flat <= spec.lower) or np.any(flat >= spec.upper) or not np.all(np.isfinite(flat)):
        raise LinkRangeError(f"values must lie in ({spec.lower}, {spec.upper})")
    if spec.kind == LOGISTIC:
        out = -np.log((spec.M0 / flat - 1.0) / (spec.M0 - 1.0))
    elif spec.kind == BALL:
        out = np.tan(flat * math.pi / (2.0 * spec.B))
    else:
        out = _darcy_invert(spec, flat)
    return _ret(out.reshape(y.shape), scalar)


def _darcy_invert(spec: LinkSpec, y: np.ndarray) -> np.ndarray:
    _, c_exp = _bump_moments()
    target = (y - spec.K_min) / (1.0 - spec.K_min) * _conv_at_zero()
    t = np.where(target >= 2.0, target - 1.0, np.log(np.maximum(target, 1e-300) / c_exp))
    mid = (target > c_exp * math.exp(-1.0)) & (target < 2.0)
    if mid.any():
        # Newton from a bracketing start on the monotone spline piece
        tm = np.clip(target[mid] - 1.0, -1.0, 1.0)
        tm = np.where(target[mid] < 1.0, np.log(target[mid] / c_exp).clip(-1.0, 1.0), tm)
        for _ in range(60):
            step = (_conv(tm) - target[mid]) / _conv(tm, 1)
            tm = np.clip(tm - step, -1.0, 1.0)
            if np.max(np.abs(step)) < 1e-15:
                break
        t[mid] = tm
    return t


def ball_map(x, B: float = 1.0):
    """h(x) = (2B/pi) arctan(x)."""
    return link_apply(LinkSpec(BALL, B=B), x)


def ball_map_derivative(x, B: float = 1.0):
    return link_derivative(LinkSpec(BALL, B=B), x)


def psi_weights(levels: np.ndarray, alpha: float, d: int) -> np.ndarray:
    """2^{-l(alpha + d/2)} lbar^{-2} with lbar = max(l, 1).

    The coarse scaling block (level -1) is weighted like level 0.
    """
    levels = np.maximum(np.asarray(levels), 0)
    lbar = np.maximum(levels, 1).astype(float)
    return 2.0 ** (-levels * (alpha + d / 2.0)) / lbar**2


def psi_operator(c, alpha: float, d: int, B: float):
    """Coefficientwise bounded map: w h(c / w) with the psi weights w."""
    from .basis import CoefField

    w = psi_weights(c.levels, alpha, d)
    out = w * ball_map(c.values / w, B)
    return CoefField(np.atleast_1d(out), c.levels)
