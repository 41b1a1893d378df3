"""Uniform grids on boxes, trapezoid quadrature and linear interpolation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridFunction:
    """Values at the nodes of a uniform grid with `resolution` cells per axis."""

    values: np.ndarray
    resolution: int
    domain: tuple = ((0.0, 1.0),)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.resolution + 1,) * len(self.domain):
            raise ValueError(
                f"values of shape {vals.shape} do not match a grid with "
                f"{self.resolution} cells on {len(self.domain)} axes"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function has non-finite values")
        object.__setattr__(self, "values", vals)

    @property
    def d(self) -> int:
        return len(self.domain)

    def nodes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, self.resolution + 1) for a, b in self.domain]

    def integral(self) -> float:
        return integrate(self.values, self.resolution, self.domain)


def nodes(resolution: int, domain=((0.0, 1.0),)) -> list[np.ndarray]:
    return [np.linspace(a, b, resolution + 1) for a, b in domain]


def trapezoid_weights(resolution: int, length: float = 1.0) -> np.ndarray:
    w = np.full(resolution + 1, length / resolution)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def integrate(values: np.ndarray, resolution: int, domain=((0.0, 1.0),)) -> float:
    """Trapezoid rule over the box; the single definition of inner products."""
    out = np.asarray(values, dtype=float)
    for axis, (a, b) in enumerate(domain):
        w = trapezoid_weights(resolution, b - a)
        out = np.tensordot(w, out, axes=([0], [0]))
    return float(out)


def mean_over_domain(values: np.ndarray, resolution: int, domain=((0.0, 1.0),)) -> float:
    """Integral against the uniform probability measure on the box."""
    vol = float(np.prod([b - a for a, b in domain]))
    return integrate(values, resolution, domain) / vol


def interpolation_matrix(X: np.ndarray, resolution: int, domain=((0.0, 1.0),)):
    """Sparse matrix P with (P u)_i the (multi)linear interpolant of u at X_i.

    Grid values are flattened in C order.
    """
    from scipy import sparse

    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(domain):
        X = X.T
    n, d = X.shape
    m = resolution + 1
    idx = []
    wts = []
    for axis, (a, b) in enumerate(domain):
        t = (X[:, axis] - a) / (b - a) * resolution
        if np.any(t < -1e-12) or np.any(t > resolution + 1e-12):
            raise ValueError("design points outside the observation domain")
        i0 = np.clip(np.floor(t).astype(int), 0, resolution - 1)
        frac = np.clip(t - i0, 0.0, 1.0)
        idx.append((i0, i0 + 1))
        wts.append((1.0 - frac, frac))
    rows = []
    cols = []
    vals = []
    for corner in range(2**d):
        flat = np.zeros(n, dtype=np.int64)
        w = np.ones(n)
        for axis in range(d):
            bit = (corner >> (d - 1 - axis)) & 1
            flat = flat * m + idx[axis][bit]
            w = w * wts[axis][bit]
        rows.append(np.arange(n))
        cols.append(flat)
        vals.append(w)
    P = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, m**d),
    )
    P.sum_duplicates()
    return P
