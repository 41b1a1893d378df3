"""Forward problems: parameter-to-observation maps and misfit gradients.

A problem maps a coefficient vector theta to the parameter field
f = Phi(synthesize(theta)), solves the PDE (or applies the smoothing map) on
the working grid and reads observations off by linear interpolation.
Gradients of the least-squares misfit are exact for the discrete map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import LinAlgError, eigh_tridiagonal, solve_banded
from scipy.sparse.linalg import splu

from . import links
from .basis import BasisSet, CoefField, build_basis, synthesize_transpose, synthesize_values, INTERIOR, BOUNDARY
from .grid import interpolation_matrix, trapezoid_weights
from .links import LinkSpec, link_apply, link_derivative
from .mlf import ml_one, ml_two
from .pde import ConductivityError, SolverError, darcy_bands_1d, darcy_matrix_2d, schrodinger_bands

DARCY = "darcy"
SUBDIFFUSION = "subdiffusion"
SMOOTHING = "synthetic-smoothing"
LINEAR = "linear"
KINDS = (DARCY, SUBDIFFUSION, SMOOTHING, LINEAR)


@dataclass(frozen=True, eq=False)
class Design:
    """Design points with the interpolation operator that observes grid fields."""

    X: np.ndarray
    P: sparse.csr_matrix

    @property
    def N(self) -> int:
        return self.X.shape[0]


def _theta(theta) -> np.ndarray:
    return theta.values if isinstance(theta, CoefField) else np.asarray(theta, dtype=float)


class ForwardProblem:
    """Common machinery; subclasses provide the solver and its adjoint."""

    kind = ""
    kappa = 0.0
    p_V = 1

    def __init__(self, basis: BasisSet, link: LinkSpec, ball: tuple[float, float] | None = None):
        self.basis = basis
        self.link = link
        # ball = (alpha, B): theta is the latent vector of the bounded prior and
        # the wavelet coefficients are w_l h(theta) with the psi weights w_l
        self.ball = ball
        if ball is not None:
            self._ball_w = links.psi_weights(basis.levels, ball[0], basis.d)

    # -- parameterization -------------------------------------------------
    @property
    def d(self) -> int:
        return self.basis.d

    @property
    def resolution(self) -> int:
        return self.basis.resolution

    @property
    def levels(self) -> np.ndarray:
        return self.basis.levels

    @property
    def size(self) -> int:
        return self.basis.size

    def coefficients(self, theta) -> np.ndarray:
        t = _theta(theta)
        if t.shape != (self.size,):
            raise ValueError(f"expected {self.size} coefficients, got shape {t.shape}")
        if self.ball is None:
            return t
        return self._ball_w * links.ball_map(t, self.ball[1])

    def _coef_jacobian(self, theta) -> np.ndarray | float:
        if self.ball is None:
            return 1.0
        return self._ball_w * links.ball_map_derivative(_theta(theta), self.ball[1])

    def log_field(self, theta) -> np.ndarray:
        """Grid values of synthesize(theta) before the link."""
        return synthesize_values(self.coefficients(theta), self.basis)

    def field(self, theta) -> np.ndarray:
        """Grid values of the physical parameter f_theta = Phi(synthesize(theta))."""
        return link_apply(self.link, self.log_field(theta))

    # -- solver interface ---------------------------------------------------
    def _solve(self, par: np.ndarray):
        """Return (solution of shape (p_V, *grid), cache for the adjoint)."""
        raise NotImplementedError

    def _adjoint(self, cache, b: np.ndarray) -> np.ndarray:
        """Gradient wrt the parameter field of <b, solution>."""
        raise NotImplementedError

    def solution(self, theta) -> np.ndarray:
        return self._solve(self.field(theta))[0]

    def quadrature_weights(self) -> np.ndarray:
        """Weights of the uniform design measure on the solution grid."""
        w = trapezoid_weights(self.resolution)
        if self.d == 1:
            return w
        return np.outer(w, w)

    # -- observations -------------------------------------------------------
    def sample_design(self, rng: np.random.Generator, N: int) -> np.ndarray:
        return rng.uniform(0.0, 1.0, size=(N, self.d))

    def design(self, X) -> Design:
        X = np.asarray(X, dtype=float).reshape(-1, self.d)
        return Design(X, interpolation_matrix(X, self.resolution, ((0.0, 1.0),) * self.d))

    def observe(self, sol: np.ndarray, design: Design) -> np.ndarray:
        flat = sol.reshape(self.p_V, -1)
        return np.asarray(design.P @ flat.T)

    def predict(self, theta, design) -> np.ndarray:
        if not isinstance(design, Design):
            design = self.design(design)
        return self.observe(self.solution(theta), design)

    def loss(self, theta, design: Design, Y: np.ndarray) -> float:
        r = np.asarray(Y).reshape(design.N, self.p_V) - self.predict(theta, design)
        return 0.5 * float(np.sum(r * r))

    def loss_and_grad(self, theta, design: Design, Y: np.ndarray):
        """L = 1/2 sum |Y_i - G(theta)(X_i)|^2 and dL/dtheta."""
        s = self.log_field(theta)
        par = link_apply(self.link, s)
        sol, cache = self._solve(par)
        r = np.asarray(Y).reshape(design.N, self.p_V) - self.observe(sol, design)
        L = 0.5 * float(np.sum(r * r))
        b = -np.asarray(design.P.T @ r).T.reshape(sol.shape)
        dpar = self._adjoint(cache, b)
        ds = link_derivative(self.link, s) * dpar
        grad = synthesize_transpose(ds, self.basis) * self._coef_jacobian(theta)
        return L, grad

    def describe(self) -> dict:
        out = {
            "kind": self.kind,
            "d": self.d,
            "resolution": self.resolution,
            "S": self.basis.S,
            "J": self.basis.J,
            "flavor": self.basis.flavor,
            "link": self.link.to_dict(),
            "kappa": self.kappa,
        }
        if self.ball is not None:
            out["ball"] = {"alpha": self.ball[0], "B": self.ball[1]}
        return out


class DarcyProblem(ForwardProblem):
    """div(f grad u) = g with u = 0 on the boundary; observe u."""

    kind = DARCY
    kappa = 1.0

    def __init__(self, basis, link=None, source: float = -1.0, ball=None):
        super().__init__(basis, link or LinkSpec(links.DARCY), ball)
        self.source = float(source)

    def _solve(self, par):
        n = self.resolution
        if np.any(par <= 0):
            raise ConductivityError("conductivity must be positive on the grid")
        u = np.zeros_like(par)
        if self.d == 1:
            ab = darcy_bands_1d(par)
            u[1:-1] = solve_banded((1, 1), ab, np.full(n - 1, self.source))
            cache = (ab, u)
        else:
            try:
                lu = splu(darcy_matrix_2d(par))
            except RuntimeError as exc:
                raise SolverError(str(exc)) from exc
            u[1:-1, 1:-1] = lu.solve(np.full((n - 1) ** 2, self.source)).reshape(n - 1, n - 1)
            cache = (lu, u)
        if not np.all(np.isfinite(u)):
            raise SolverError("singular Darcy system")
        return u[None], cache

    def _adjoint(self, cache, b):
        n = self.resolution
        h2 = (1.0 / n) ** 2
        b = b[0]
        op, u = cache
        lam = np.zeros_like(u)
        if self.d == 1:
            lam[1:-1] = solve_banded((1, 1), op, b[1:-1])
            g = np.diff(lam) * np.diff(u) / h2
            dpar = np.zeros_like(u)
            dpar[:-1] += 0.5 * g
            dpar[1:] += 0.5 * g
            return dpar
        lam[1:-1, 1:-1] = op.solve(b[1:-1, 1:-1].ravel()).reshape(n - 1, n - 1)
        gx = np.diff(lam, axis=0) * np.diff(u, axis=0) / h2
        gy = np.diff(lam, axis=1) * np.diff(u, axis=1) / h2
        dpar = np.zeros_like(u)
        dpar[:-1, :] += 0.5 * gx
        dpar[1:, :] += 0.5 * gx
        dpar[:, :-1] += 0.5 * gy
        dpar[:, 1:] += 0.5 * gy
        return dpar

    def describe(self):
        return {**super().describe(), "source": self.source}


class SubdiffusionProblem(ForwardProblem):
    """Terminal value u(T) of the time-fractional equation with potential q."""

    kind = SUBDIFFUSION
    kappa = 2.0

    def __init__(
        self,
        basis,
        link=None,
        beta: float = 0.5,
        T: float = 10.0,
        u0: float = 2.0,
        f: float = 1.0,
        a0: float = 1.0,
        a1: float = 1.0,
        m: int = 128,
        ball=None,
    ):
        if basis.d != 1:
            raise ValueError("the subdiffusion problem is one-dimensional")
        super().__init__(basis, link or LinkSpec(links.LOGISTIC, M0=2.0), ball)
        if not 0.0 < beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        self.beta = float(beta)
        self.T = float(T)
        self.u0 = float(u0)
        self.f = float(f)
        self.a0 = float(a0)
        self.a1 = float(a1)
        self.m = int(min(m, basis.resolution - 1))

    def _solve(self, q):
        n = self.resolution
        if np.any(q < 0):
            raise ValueError("potential q must be nonnegative")
        h2 = (1.0 / n) ** 2
        rhs = np.full(n - 1, self.f)
        rhs[0] += self.a0 / h2
        rhs[-1] += self.a1 / h2
        hq = solve_banded((1, 1), schrodinger_bands(q), rhs)
        try:
            lam, U = eigh_tridiagonal(2.0 / h2 + q[1:-1], np.full(n - 2, -1.0 / h2))
        except LinAlgError as exc:
            raise SolverError(f"eigensolver failed: {exc}") from exc
        Tb = self.T**self.beta
        gvals = np.zeros_like(lam)
        gvals[: self.m] = ml_one(self.beta, -lam[: self.m] * Tb)
        v = self.u0 - hq
        vhat = U.T @ v
        u = np.empty(n + 1)
        u[0], u[-1] = self.a0, self.a1
        u[1:-1] = hq + U @ (gvals * vhat)
        return u[None], (lam, U, gvals, vhat, hq)

    def _adjoint(self, cache, b):
        lam, U, gvals, vhat, hq = cache
        b = b[0, 1:-1]
        bhat = U.T @ b
        # through h_q (and v = u0 - h_q): -(A^{-1}(I - F) b) * h_q
        grad = -(U @ ((1.0 - gvals) / lam * bhat)) * hq
        # through the spectral function: divided differences of g
        Tb = self.T**self.beta
        deriv = np.zeros_like(lam)
        deriv[: self.m] = -Tb * ml_two(self.beta, -lam[: self.m] * Tb) / self.beta
        diff = lam[:, None] - lam[None, :]
        np.fill_diagonal(diff, 1.0)
        G = (gvals[:, None] - gvals[None, :]) / diff
        np.fill_diagonal(G, deriv)
        M = G * np.outer(bhat, vhat)
        grad += np.sum((U @ M) * U, axis=1)
        dpar = np.zeros(self.resolution + 1)
        dpar[1:-1] = grad
        return dpar

    def describe(self):
        return {
            **super().describe(),
            "beta": self.beta,
            "T": self.T,
            "u0": self.u0,
            "f": self.f,
            "a0": self.a0,
            "a1": self.a1,
            "m": self.m,
        }


class SmoothingProblem(ForwardProblem):
    """Periodic convolution of the contrast f - 1 with a modulated Gaussian.

    The output is complex and observed as its (real, imaginary) pair.
    """

    kind = SMOOTHING
    kappa = 0.0
    p_V = 2

    def __init__(self, basis, link=None, width: float = 0.01, frequency: float = 1.0, amplitude: float = 1.0, ball=None):
        if basis.d != 1:
            raise ValueError("the smoothing problem is one-dimensional")
        super().__init__(basis, link or LinkSpec(links.LOGISTIC, M0=2.0), ball)
        self.width = float(width)
        self.frequency = float(frequency)
        self.amplitude = float(amplitude)
        n = self.resolution
        k = np.fft.fftfreq(n, d=1.0 / n)
        self._symbol = self.amplitude * np.exp(-0.5 * (2.0 * math.pi * self.width * (k - self.frequency)) ** 2)

    def _solve(self, par):
        n = self.resolution
        z = np.fft.ifft(self._symbol * np.fft.fft(par[:n] - 1.0))
        out = np.empty((2, n + 1))
        out[0, :n] = z.real
        out[1, :n] = z.imag
        out[:, n] = out[:, 0]
        return out, None

    def _adjoint(self, cache, b):
        n = self.resolution
        bp = b[:, :n].copy()
        bp[:, 0] += b[:, n]
        bc = bp[0] + 1j * bp[1]
        dpar = np.zeros(n + 1)
        dpar[:n] = np.fft.ifft(np.conj(self._symbol) * np.fft.fft(bc)).real
        return dpar

    def describe(self):
        return {**super().describe(), "width": self.width, "frequency": self.frequency, "amplitude": self.amplitude}


class LinearProblem(ForwardProblem):
    """G(theta) = A theta over a finite design set {0, ..., M-1}.

    Design points are row indices; the design measure is uniform on rows.
    """

    kind = LINEAR
    p_V = 1

    def __init__(self, A: np.ndarray, levels: np.ndarray | None = None, kappa: float = 0.0):
        self.A = np.asarray(A, dtype=float)
        self._levels = np.zeros(self.A.shape[1], dtype=int) if levels is None else np.asarray(levels, dtype=int)
        self.kappa = kappa
        self.basis = None
        self.link = None
        self.ball = None

    @property
    def d(self):
        return 1

    @property
    def resolution(self):
        return self.A.shape[0]

    @property
    def levels(self):
        return self._levels

    @property
    def size(self):
        return self.A.shape[1]

    def coefficients(self, theta):
        return _theta(theta)

    def field(self, theta):
        return self.coefficients(theta)

    def solution(self, theta):
        return (self.A @ _theta(theta))[None]

    def quadrature_weights(self):
        return np.full(self.A.shape[0], 1.0 / self.A.shape[0])

    def sample_design(self, rng, N):
        return rng.integers(0, self.A.shape[0], size=(N, 1)).astype(float)

    def design(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, 1)
        rows = X[:, 0].astype(int)
        P = sparse.csr_matrix((np.ones(rows.size), (np.arange(rows.size), rows)), shape=(rows.size, self.A.shape[0]))
        return Design(X, P)

    def loss_and_grad(self, theta, design, Y):
        r = np.asarray(Y).reshape(design.N, 1) - self.observe(self.solution(theta), design)
        grad = -self.A.T @ np.asarray(design.P.T @ r[:, 0])
        return 0.5 * float(np.sum(r * r)), grad

    def describe(self):
        return {"kind": self.kind, "rows": self.A.shape[0], "size": self.size, "kappa": self.kappa}


def forward_eval(p: ForwardProblem, theta, X) -> np.ndarray:
    """G(Phi(synthesize(theta))) at the design points, shape (N, p_V)."""
    return p.predict(theta, X)


def misfit_gradient(p: ForwardProblem, theta, data) -> CoefField:
    """Gradient of 1/2 sum |Y_i - G(theta)(X_i)|^2 with respect to theta."""
    design = data.design(p) if hasattr(data, "design") else p.design(data[0])
    Y = data.Y if hasattr(data, "Y") else data[1]
    _, grad = p.loss_and_grad(theta, design, Y)
    return CoefField(grad, p.levels)


def finite_difference_gradient(p: ForwardProblem, theta, design: Design, Y, eps: float = 1e-5) -> np.ndarray:
    """Central differences of the misfit, one coordinate at a time."""
    t = _theta(theta).copy()
    out = np.empty_like(t)
    for k in range(t.size):
        step = eps * max(1.0, abs(t[k]))
        t[k] += step
        lp = p.loss(t, design, Y)
        t[k] -= 2 * step
        lm = p.loss(t, design, Y)
        t[k] += step
        out[k] = (lp - lm) / (2 * step)
    return out
