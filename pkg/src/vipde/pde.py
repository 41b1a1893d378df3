"""Finite-difference forward solvers on uniform grids over the unit box."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import LinAlgError, eigh_tridiagonal, solve_banded
from scipy.sparse.linalg import splu

from .grid import GridFunction, integrate
from .mlf import ml_one


class ConductivityError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


def _grid_values(g, n: int, d: int) -> np.ndarray:
    vals = g.values if isinstance(g, GridFunction) else np.asarray(g, dtype=float)
    if vals.shape != (n + 1,) * d:
        raise ValueError(f"expected values on a grid with {n} cells per axis")
    return vals


# Darcy: div(f grad u) = g in the unit box, u = 0 on the boundary.

def darcy_bands_1d(f: np.ndarray) -> np.ndarray:
    """Banded storage of the symmetric operator u -> (f u')' on interior nodes."""
    n = f.size - 1
    h2 = (1.0 / n) ** 2
    fm = 0.5 * (f[:-1] + f[1:])
    ab = np.zeros((3, n - 1))
    ab[0, 1:] = fm[1:-1] / h2
    ab[1] = -(fm[:-1] + fm[1:]) / h2
    ab[2, :-1] = fm[1:-1] / h2
    return ab


def darcy_matrix_2d(f: np.ndarray) -> sparse.csc_matrix:
    """Five-point operator u -> div(f grad u) on the (n-1)^2 interior nodes."""
    n = f.shape[0] - 1
    h2 = (1.0 / n) ** 2
    fx = 0.5 * (f[:-1, :] + f[1:, :])  # faces between (i, j) and (i+1, j)
    fy = 0.5 * (f[:, :-1] + f[:, 1:])
    m = n - 1
    idx = np.arange(m * m).reshape(m, m)
    I, Jn = np.meshgrid(np.arange(1, n), np.arange(1, n), indexing="ij")
    diag = -(fx[I - 1, Jn] + fx[I, Jn] + fy[I, Jn - 1] + fy[I, Jn]) / h2
    rows = [idx.ravel()]
    cols = [idx.ravel()]
    vals = [diag.ravel()]
    east = fx[1:-1, 1:n] / h2  # coupling (i, j)-(i+1, j) for i = 1..n-2
    rows += [idx[:-1, :].ravel(), idx[1:, :].ravel()]
    cols += [idx[1:, :].ravel(), idx[:-1, :].ravel()]
    vals += [east.ravel(), east.ravel()]
    north = fy[1:n, 1:-1] / h2
    rows += [idx[:, :-1].ravel(), idx[:, 1:].ravel()]
    cols += [idx[:, 1:].ravel(), idx[:, :-1].ravel()]
    vals += [north.ravel(), north.ravel()]
    A = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m * m, m * m)
    )
    return A.tocsc()


def solve_darcy(f, g, resolution: int | None = None, d: int | None = None) -> GridFunction:
    """Discrete solution of div(f grad u) = g with homogeneous Dirichlet data."""
    if isinstance(f, GridFunction):
        resolution, d = f.resolution, f.d
    fv = _grid_values(f, resolution, d)
    gv = _grid_values(g, resolution, d)
    if np.any(fv <= 0):
        raise ConductivityError("conductivity must be positive on the grid")
    n = resolution
    u = np.zeros_like(gv)
    if d == 1:
        u[1:-1] = solve_banded((1, 1), darcy_bands_1d(fv), gv[1:-1])
    else:
        A = darcy_matrix_2d(fv)
        try:
            sol = splu(A).solve(gv[1:-1, 1:-1].ravel())
        except RuntimeError as exc:
            raise SolverError(str(exc)) from exc
        u[1:-1, 1:-1] = sol.reshape(n - 1, n - 1)
    if not np.all(np.isfinite(u)):
        raise SolverError("singular Darcy system")
    return GridFunction(u, n, ((0.0, 1.0),) * d)


# Steady state: -h'' + q h = f on (0, 1), h(0) = a0, h(1) = a1.

def schrodinger_bands(q: np.ndarray) -> np.ndarray:
    n = q.size - 1
    h2 = (1.0 / n) ** 2
    ab = np.zeros((3, n - 1))
    ab[0, 1:] = -1.0 / h2
    ab[1] = 2.0 / h2 + q[1:-1]
    ab[2, :-1] = -1.0 / h2
    return ab


def solve_hq(q, f, a0: float, a1: float, resolution: int | None = None) -> GridFunction:
    if isinstance(q, GridFunction):
        resolution = q.resolution
    qv = _grid_values(q, resolution, 1)
    fv = _grid_values(f, resolution, 1)
    if np.any(qv < 0):
        raise ValueError("potential q must be nonnegative")
    n = resolution
    rhs = fv[1:-1].copy()
    rhs[0] += a0 * n * n
    rhs[-1] += a1 * n * n
    h = np.empty(n + 1)
    h[0], h[-1] = a0, a1
    h[1:-1] = solve_banded((1, 1), schrodinger_bands(qv), rhs)
    if not np.all(np.isfinite(h)):
        raise SolverError("singular steady-state system")
    return GridFunction(h, n)


@dataclass(frozen=True)
class EigenSystem:
    """Dirichlet eigenpairs of -d^2/dx^2 + q, vectors normalized in grid L^2."""

    eigenvalues: np.ndarray  # (m,)
    vectors: np.ndarray  # (m, resolution + 1), zero at the boundary nodes
    resolution: int

    @property
    def m(self) -> int:
        return self.eigenvalues.size

    def coefficients(self, v: np.ndarray) -> np.ndarray:
        """Quadrature inner products <v, phi_j>."""
        return self.vectors[:, 1:-1] @ v[1:-1] / self.resolution


def _eig_interior(qv: np.ndarray, m: int | None):
    n = qv.size - 1
    h2 = (1.0 / n) ** 2
    diag = 2.0 / h2 + qv[1:-1]
    off = np.full(n - 2, -1.0 / h2)
    try:
        if m is None or m >= n - 1:
            lam, U = eigh_tridiagonal(diag, off)
        else:
            lam, U = eigh_tridiagonal(diag, off, select="i", select_range=(0, m - 1))
    except LinAlgError as exc:
        raise SolverError(f"eigensolver failed: {exc}") from exc
    # fix signs so that each vector starts positive
    first = U[np.argmax(np.abs(U) > 1e-12 * np.abs(U).max(axis=0), axis=0), np.arange(U.shape[1])]
    U = U * np.where(first < 0, -1.0, 1.0)
    return lam, U


def eig_aq(q, m: int = 128, resolution: int | None = None) -> EigenSystem:
    if isinstance(q, GridFunction):
        resolution = q.resolution
    qv = _grid_values(q, resolution, 1)
    n = resolution
    if np.any(qv < 0):
        raise ValueError("potential q must be nonnegative")
    if not 1 <= m <= n - 1:
        raise ValueError(f"m must lie in [1, {n - 1}]")
    lam, U = _eig_interior(qv, m)
    vecs = np.zeros((lam.size, n + 1))
    vecs[:, 1:-1] = U.T * np.sqrt(n)
    return EigenSystem(lam, vecs, n)


def subdiffusion_terminal(
    beta: float,
    q,
    u0,
    f,
    a0: float,
    a1: float,
    T: float,
    m: int = 128,
    resolution: int | None = None,
    return_info: bool = False,
):
    """u(T) = h_q + sum_{j<=m} E_beta(-lambda_j T^beta) <u0 - h_q, phi_j> phi_j."""
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    if not T > 0:
        raise ValueError("T must be positive")
    if isinstance(q, GridFunction):
        resolution = q.resolution
    n = resolution
    hq = solve_hq(q, f, a0, a1, resolution=n).values
    u0v = _grid_values(u0, n, 1)
    es = eig_aq(q, m, resolution=n)
    v = u0v - hq
    coef = es.coefficients(v)
    decay = ml_one(beta, -es.eigenvalues * T**beta)
    u = hq + (decay * coef) @ es.vectors
    # interior correction only: boundary values of u(T) are the Dirichlet data
    u[0], u[-1] = a0, a1
    out = GridFunction(u, n)
    if not return_info:
        return out
    vint = v.copy()
    vint[0] = vint[-1] = 0.0
    resid = vint - coef @ es.vectors
    tail = float(decay[-1] * np.sqrt(max(integrate(resid**2, n), 0.0)))
    return out, {"tail_bound": tail, "m": es.m, "lambda_m": float(es.eigenvalues[-1])}
