"""Compactly supported Daubechies wavelet bases sampled on a uniform grid.

Basis functions are columns of the orthogonal discrete wavelet transform on
the working grid, obtained by running the cascade recursion from a unit
coefficient. Only translates whose support stays inside the admissible
region are kept, so the sampled family is exactly orthonormal under the
trapezoid rule.

Levels: -1 holds the scaling functions at the coarsest dyadic scale j0,
level l >= 0 holds wavelets at scale j0 + l.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product

import numpy as np
from scipy.special import comb

from .grid import GridFunction, trapezoid_weights

INTERIOR = "interior-cutoff"
BOUNDARY = "boundary-weighted"
FLAVORS = (INTERIOR, BOUNDARY)
DEFAULT_RESOLUTION = {1: 2**11, 2: 2**8}
# chi == 1 on the inner 80% of each axis
CUTOFF_INNER = 0.1
CUTOFF_OUTER = 0.02


class ResolutionError(ValueError):
    pass


@lru_cache(maxsize=32)
def daubechies_filter(S: int) -> np.ndarray:
    """Minimum-phase Daubechies lowpass filter with S vanishing moments.

    Normalized so that the taps sum to sqrt(2).
    """
    if S < 1:
        raise ValueError("S must be at least 1")
    if S == 1:
        return np.array([1.0, 1.0]) / math.sqrt(2.0)
    # P(y) = sum_k C(S-1+k, k) y^k with y = sin^2(w/2); keep roots inside |z| < 1
    poly = [comb(S - 1 + k, k, exact=True) for k in range(S)][::-1]
    zeros = []
    for y in np.roots(poly):
        # y = -(z - 1)^2 / (4 z)  <=>  z^2 - (2 - 4y) z + 1 = 0
        r = np.roots([1.0, -(2.0 - 4.0 * y), 1.0])
        zeros.append(r[np.argmin(np.abs(r))])
    h = np.poly(np.concatenate([-np.ones(S), zeros]))
    h = np.real(h)
    h *= math.sqrt(2.0) / h.sum()
    return h


def _upsample_convolve(seq: np.ndarray, taps: np.ndarray) -> np.ndarray:
    up = np.zeros(2 * len(seq) - 1)
    up[::2] = seq
    return np.convolve(up, taps)


@lru_cache(maxsize=128)
def cascade(S: int, steps: int, wavelet: bool) -> np.ndarray:
    """Synthesis vector of one coefficient `steps` scales above the grid.

    The result has unit Euclidean norm; divided by sqrt(grid spacing) it
    samples the scaling function (or wavelet) at the grid nodes starting at
    the left end of its support.
    """
    h = daubechies_filter(S)
    g = ((-1.0) ** np.arange(len(h))) * h[::-1]
    seq = np.array([1.0])
    for i in range(steps):
        seq = _upsample_convolve(seq, g if (wavelet and i == 0) else h)
    return seq


def smooth_step(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def cutoff_1d(x: np.ndarray) -> np.ndarray:
    """C-infinity bump: 1 on [0.1, 0.9], 0 within 0.02 of the boundary."""
    width = CUTOFF_INNER - CUTOFF_OUTER
    return smooth_step((x - CUTOFF_OUTER) / width) * smooth_step((1.0 - CUTOFF_OUTER - x) / width)


@dataclass(frozen=True)
class CoefField:
    """Flat wavelet coefficient vector with the level of each entry."""

    values: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        lev = np.asarray(self.levels, dtype=int)
        if vals.shape != lev.shape or vals.ndim != 1:
            raise ValueError("values and levels must be matching 1D arrays")
        if not np.all(np.isfinite(vals)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "levels", lev)

    @property
    def J(self) -> int:
        return int(self.levels.max())

    @property
    def size(self) -> int:
        return self.values.size

    def with_values(self, values) -> "CoefField":
        return CoefField(np.asarray(values, dtype=float), self.levels)


def _values(c) -> np.ndarray:
    return c.values if isinstance(c, CoefField) else np.asarray(c, dtype=float)


@dataclass(frozen=True, eq=False)
class _Axis:
    """Sampled 1D scaling functions and wavelets on one axis."""

    matrix: np.ndarray  # (count, resolution + 1)
    scale: np.ndarray  # dyadic scale j of each row
    wavelet: np.ndarray  # True for wavelets, False for scaling functions
    support: np.ndarray  # (count, 2) support interval

    def group(self, j: int, wavelet: bool) -> np.ndarray:
        return np.flatnonzero((self.scale == j) & (self.wavelet == wavelet))


@dataclass(frozen=True, eq=False)
class BasisSet:
    d: int
    J: int
    S: int
    flavor: str
    resolution: int
    j0: int
    levels: np.ndarray
    counts: dict
    c0: float
    chi: np.ndarray
    axis: _Axis
    pairs: np.ndarray | None = None  # 2D: (d_J, 2) axis-function indices
    supports: np.ndarray = field(default=None)

    @property
    def size(self) -> int:
        return int(self.levels.size)

    @property
    def h(self) -> float:
        return 1.0 / self.resolution

    def zeros(self) -> CoefField:
        return CoefField(np.zeros(self.size), self.levels)

    def coef(self, values) -> CoefField:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.size,):
            raise ValueError(f"expected {self.size} coefficients, got {values.shape}")
        return CoefField(values, self.levels)

    def element(self, k: int) -> np.ndarray:
        e = np.zeros(self.size)
        e[k] = 1.0
        return synthesize_values(e, self)


def _admissible(flavor: str) -> tuple[float, float]:
    if flavor == INTERIOR:
        return CUTOFF_INNER, 1.0 - CUTOFF_INNER
    return 0.0, 1.0


def _translates(S: int, j: int, lo: float, hi: float) -> np.ndarray:
    length = 2 * S - 1
    r = np.arange(int(math.floor(-length)), 2**j + 1)
    keep = (r / 2**j >= lo - 1e-12) & ((r + length) / 2**j <= hi + 1e-12)
    return r[keep]


def coarse_scale(S: int, flavor: str) -> int:
    """Smallest dyadic scale at which at least one scaling function fits."""
    lo, hi = _admissible(flavor)
    j = 0
    while _translates(S, j, lo, hi).size == 0:
        j += 1
    return j


def _axis_functions(S: int, J: int, flavor: str, resolution: int, j0: int, d: int) -> _Axis:
    L = int(round(math.log2(resolution)))
    lo, hi = _admissible(flavor)
    wanted = [(j0, False)] + [(j0 + l, True) for l in range(J + 1)]
    if d > 1:
        wanted += [(j0 + l, False) for l in range(1, J + 1)]
    rows, scales, kinds, supports = [], [], [], []
    scale = math.sqrt(resolution)
    for j, wavelet in wanted:
        steps = L - j
        vec = cascade(S, steps, wavelet) * scale
        stride = 2**steps
        for r in _translates(S, j, lo, hi):
            row = np.zeros(resolution + 1)
            start = r * stride
            stop = min(start + vec.size, resolution + 1)
            row[start:stop] = vec[: stop - start]
            rows.append(row)
            scales.append(j)
            kinds.append(wavelet)
            supports.append((r / 2**j, (r + 2 * S - 1) / 2**j))
    return _Axis(np.array(rows), np.array(scales), np.array(kinds), np.array(supports))


def build_basis(
    d: int = 1,
    J: int = 1,
    S: int = 6,
    domain=None,
    flavor: str = INTERIOR,
    resolution: int | None = None,
) -> BasisSet:
    """Sampled wavelet basis on the unit box with levels -1, 0, ..., J."""
    if d not in (1, 2):
        raise ValueError("only d = 1 and d = 2 are supported")
    if domain is not None and any(tuple(ab) != (0.0, 1.0) for ab in domain):
        raise ValueError("bases are built on the unit box")
    if flavor not in FLAVORS:
        raise ValueError(f"unknown flavor {flavor!r}")
    if S < 2:
        raise ValueError("S must be at least 2")
    if J < 0:
        raise ValueError("J must be nonnegative")
    resolution = resolution or DEFAULT_RESOLUTION[d]
    L = int(round(math.log2(resolution)))
    if 2**L != resolution:
        raise ValueError("resolution must be a power of two")
    j0 = coarse_scale(S, flavor)
    # every level needs two cascade refinements below it on the grid
    need = max(J + 3, j0 + J + 2)
    if L < need:
        raise ResolutionError(
            f"a grid with {resolution} cells cannot resolve level {J} "
            f"(need at least 2^{need} cells per axis)"
        )
    axis = _axis_functions(S, J, flavor, resolution, j0, d)
    x = np.linspace(0.0, 1.0, resolution + 1)
    chi1 = cutoff_1d(x) if flavor == INTERIOR else np.ones_like(x)
    if d == 1:
        levels = np.where(axis.wavelet, axis.scale - j0, -1)
        pairs = None
        chi = chi1
        supports = axis.support[:, None, :]
    else:
        plist, lev = [], []
        phi0 = axis.group(j0, False)
        plist += list(product(phi0, phi0))
        lev += [-1] * (phi0.size**2)
        for l in range(J + 1):
            phi = axis.group(j0 + l, False)
            psi = axis.group(j0 + l, True)
            combos = list(product(psi, phi)) + list(product(phi, psi)) + list(product(psi, psi))
            plist += combos
            lev += [l] * len(combos)
        pairs = np.array(plist, dtype=int)
        levels = np.array(lev, dtype=int)
        chi = np.outer(chi1, chi1)
        supports = np.stack([axis.support[pairs[:, 0]], axis.support[pairs[:, 1]]], axis=1)
    counts = {int(l): int(np.sum(levels == l)) for l in range(-1, J + 1)}
    c0 = max(counts[l] / 2.0 ** (max(l, 0) * d) for l in counts)
    return BasisSet(
        d=d,
        J=J,
        S=S,
        flavor=flavor,
        resolution=resolution,
        j0=j0,
        levels=levels,
        counts=counts,
        c0=float(c0),
        chi=chi,
        axis=axis,
        pairs=pairs,
        supports=supports,
    )


def synthesize_values(c, b: BasisSet) -> np.ndarray:
    """Grid values of sum_k c_k chi psi_k."""
    v = _values(c)
    if v.shape != (b.size,):
        raise ValueError(f"coefficient vector of shape {v.shape} does not match basis of size {b.size}")
    if b.d == 1:
        out = v @ b.axis.matrix
    else:
        m = b.axis.matrix.shape[0]
        C = np.zeros((m, m))
        np.add.at(C, (b.pairs[:, 0], b.pairs[:, 1]), v)
        A = b.axis.matrix
        out = A.T @ C @ A
    return out * b.chi


def analyze_values(g: np.ndarray, b: BasisSet) -> np.ndarray:
    """Trapezoid inner products <g, psi_k> for every basis element."""
    g = np.asarray(g, dtype=float)
    w = trapezoid_weights(b.resolution)
    A = b.axis.matrix
    if b.d == 1:
        if g.shape != (b.resolution + 1,):
            raise ValueError("grid function does not live on the basis grid")
        return A @ (w * g)
    if g.shape != (b.resolution + 1,) * 2:
        raise ValueError("grid function does not live on the basis grid")
    full = A @ (w[:, None] * g * w[None, :]) @ A.T
    return full[b.pairs[:, 0], b.pairs[:, 1]]


def synthesize(c, b: BasisSet) -> GridFunction:
    return GridFunction(synthesize_values(c, b), b.resolution, ((0.0, 1.0),) * b.d)


def analyze(g, b: BasisSet) -> CoefField:
    vals = g.values if isinstance(g, GridFunction) else g
    if isinstance(g, GridFunction) and g.resolution != b.resolution:
        raise ValueError("grid function does not live on the basis grid")
    return CoefField(analyze_values(vals, b), b.levels)


def sobolev_norm(c: CoefField, s: float, d: int = 1) -> float:
    """sqrt(sum 2^{2ls} c_lr^2) over all levels, scaling level included."""
    if s < -2:
        raise ValueError("s must be at least -2")
    return float(np.sqrt(np.sum(2.0 ** (2.0 * c.levels * s) * c.values**2)))


def synthesize_transpose(g: np.ndarray, b: BasisSet) -> np.ndarray:
    """Adjoint of synthesize_values under the plain Euclidean grid pairing."""
    g = np.asarray(g, dtype=float) * b.chi
    A = b.axis.matrix
    if b.d == 1:
        return A @ g
    full = A @ g @ A.T
    return full[b.pairs[:, 0], b.pairs[:, 1]]
