"""Mean-field Gaussian variational inference over wavelet coefficients."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .forward import ForwardProblem, _theta
from .model import Dataset, kl_exact
from .pde import ConductivityError, SolverError
from .prior import PriorSpec, prior_coord_params
from .rng import make_rng


_REFUSED = 1e300


class NumericalFailure(RuntimeError):
    """Non-finite objective or parameters during a fit."""


@dataclass(frozen=True, eq=False)
class MeanFieldGaussian:
    """Independent N(mu_{lr}, sigma_{lr}^2) factors, one per coefficient."""

    mu: np.ndarray
    sigma: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        levels = np.asarray(self.levels, dtype=int)
        if not (mu.shape == sigma.shape == levels.shape and mu.ndim == 1):
            raise ValueError("mu, sigma and levels must be matching 1D arrays")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValueError("variational parameters must be finite")
        if np.any(sigma <= 0):
            raise ValueError("sigma must be strictly positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "levels", levels)

    @property
    def size(self) -> int:
        return self.mu.size

    def sample(self, Z: np.ndarray) -> np.ndarray:
        return self.mu + self.sigma * Z

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist(), "levels": self.levels.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MeanFieldGaussian":
        return cls(np.array(d["mu"]), np.array(d["sigma"]), np.array(d["levels"]))

    @classmethod
    def point_mass(cls, theta, levels, sigma: float = 1e-8) -> "MeanFieldGaussian":
        t = _theta(theta)
        return cls(t.copy(), np.full(t.shape, sigma), levels)


@dataclass(frozen=True)
class FitConfig:
    mc_samples: int = 8
    lr: float = 1e-2
    lr_final: float = 0.0
    max_iter: int = 2000
    tol: float = 1e-6
    window: int = 20
    average_fraction: float = 0.25
    antithetic: bool = True
    init: str = "prior"
    map_iter: int = 200
    map_starts: int = 1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be at least 1")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1 or self.window < 1 or self.map_starts < 1:
            raise ValueError("max_iter and window must be positive")
        if self.init not in ("prior", "map"):
            raise ValueError("init must be 'prior' or 'map'")
        if not 0.0 <= self.average_fraction <= 1.0:
            raise ValueError("average_fraction must lie in [0, 1]")
        if self.lr <= 0 or self.lr_final < 0:
            raise ValueError("step sizes must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        names = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(eq=False)
class FitResult:
    q: MeanFieldGaussian
    trace: list
    iterations: int
    converged: bool
    config: FitConfig
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = self.q.to_dict()
        out.update(
            elbo_trace=list(self.trace),
            iterations=self.iterations,
            converged=self.converged,
            config=self.config.to_dict(),
            seeds={"fit": self.config.seed},
        )
        out.update(self.extra)
        return out

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _tau(q: MeanFieldGaussian, spec) -> np.ndarray:
    if isinstance(spec, PriorSpec):
        if q.levels.size and q.levels.max() > spec.J:
            raise ValueError(f"variational levels exceed the prior truncation J={spec.J}")
        return prior_coord_params(spec, q.levels)
    tau = np.asarray(spec, dtype=float)
    if tau.shape != q.mu.shape:
        raise ValueError("prior scales do not match the variational family")
    return tau


def draw_normals(rng: np.random.Generator, S: int, n: int, antithetic: bool = False) -> np.ndarray:
    if not antithetic or S < 2:
        return rng.standard_normal((S, n))
    half = rng.standard_normal(((S + 1) // 2, n))
    return np.concatenate([half, -half])[:S]


def kl_coordinates(mu, sigma, tau) -> np.ndarray:
    return np.log(tau / sigma) + (sigma**2 + mu**2) / (2.0 * tau**2) - 0.5


def kl_meanfield(q: MeanFieldGaussian, spec) -> float:
    """KL(q || prod N(0, tau^2)); `spec` is a PriorSpec or an array of tau."""
    tau = _tau(q, spec)
    return float(np.sum(kl_coordinates(q.mu, q.sigma, tau)))


def _loglik_const(D_N: int, p_V: int) -> float:
    return -0.5 * D_N * p_V * math.log(2.0 * math.pi)


def elbo_terms(p: ForwardProblem, design, Y, mu, log_sigma, tau, Z):
    """MC ELBO and its pathwise gradient in (mu, log sigma) for fixed draws Z.

    Returns (elbo, mean loglik, kl, grad_mu, grad_log_sigma).
    """
    sigma = np.exp(log_sigma)
    const = _loglik_const(design.N, p.p_V)
    S = Z.shape[0]
    ll = 0.0
    g_mu = np.zeros_like(mu)
    g_ls = np.zeros_like(mu)
    for s in range(S):
        L, g = p.loss_and_grad(mu + sigma * Z[s], design, Y)
        ll += const - L
        g_mu -= g
        g_ls -= g * Z[s]
    ll /= S
    g_mu /= S
    g_ls = g_ls / S * sigma
    kl = float(np.sum(kl_coordinates(mu, sigma, tau)))
    g_mu -= mu / tau**2
    g_ls += 1.0 - sigma**2 / tau**2
    return ll - kl, ll, kl, g_mu, g_ls


def mean_loglik(q: MeanFieldGaussian, p: ForwardProblem, D: Dataset, Z: np.ndarray) -> float:
    design = D.design(p)
    const = _loglik_const(D.N, p.p_V)
    return float(np.mean([const - p.loss(q.sample(z), design, D.Y) for z in Z]))


def elbo(q: MeanFieldGaussian, p: ForwardProblem, D: Dataset, spec, S: int = 8, seed: int = 0) -> float:
    """(1/S) sum_s loglik(mu + sigma Z_s) - KL(q || prior), draws from (seed, "elbo")."""
    if S < 1:
        raise ValueError("S must be at least 1")
    Z = make_rng(seed, "elbo").standard_normal((S, q.size))
    ll = mean_loglik(q, p, D, Z)
    kl = kl_meanfield(q, spec)
    value = ll - kl
    assert abs(value + kl - ll) <= 1e-12 * max(1.0, abs(ll))
    return value


def map_estimate(p: ForwardProblem, design, Y, tau, maxiter: int = 200, starts: int = 1, seed: int = 0) -> np.ndarray:
    """Minimizer of misfit + 1/2 |theta / tau|^2 by L-BFGS.

    Works in whitened coordinates u = theta / tau. The first start is zero,
    further starts are standard normal draws from the (seed, "map") stream;
    each start is polished once more from its own solution, which guards
    against early line-search stalls. The lowest objective wins.
    """

    def objective(u):
        # wild line-search trial points are refused rather than raised
        try:
            with np.errstate(all="ignore"):
                L, g = p.loss_and_grad(tau * u, design, Y)
        except (ConductivityError, SolverError, ArithmeticError):
            return _REFUSED, np.zeros_like(u)
        if not (math.isfinite(L) and np.all(np.isfinite(g))):
            return _REFUSED, np.zeros_like(u)
        return L + 0.5 * float(u @ u), g * tau + u

    rng = make_rng(seed, "map")
    inits = [np.zeros(tau.size)] + [rng.standard_normal(tau.size) for _ in range(starts - 1)]
    best, best_f = None, math.inf
    for u in inits:
        for _ in range(2):
            res = minimize(objective, u, jac=True, method="L-BFGS-B", options={"maxiter": maxiter, "ftol": 1e-13, "gtol": 1e-8})
            u = res.x
        if np.all(np.isfinite(u)) and res.fun < best_f:
            best, best_f = u, float(res.fun)
    if best is None:
        raise NumericalFailure("MAP initialization produced non-finite coefficients")
    return tau * best


def laplace_sigma(p: ForwardProblem, design, Y, theta, tau, h: float = 1e-5) -> np.ndarray:
    """(diag of the posterior Hessian)^{-1/2} by central differences, capped at tau."""
    diag = np.empty(theta.size)
    for j in range(theta.size):
        e = np.zeros(theta.size)
        e[j] = h
        gp = p.loss_and_grad(theta + e, design, Y)[1][j]
        gm = p.loss_and_grad(theta - e, design, Y)[1][j]
        diag[j] = (gp - gm) / (2 * h) + 1.0 / tau[j] ** 2
    prec = np.maximum(diag, 1.0 / tau**2)
    return 1.0 / np.sqrt(prec)


def fit_vi(p: ForwardProblem, D: Dataset, spec, cfg: FitConfig = FitConfig(), init: MeanFieldGaussian | None = None) -> FitResult:
    """Maximize the ELBO with Adam on (mu, log sigma) and a cosine step decay.

    Starts at the prior (mu = 0, sigma = tau) unless `init` is given; with
    cfg.init == "map" the means start at the MAP estimate and the scales at
    the inverse square root of the Hessian diagonal there (capped at tau). Each step
    draws cfg.mc_samples standard normals from the (cfg.seed, "fit") stream,
    as +/- pairs when cfg.antithetic is set.
    Stops when the mean ELBO of the last `window` steps differs from the
    previous window by less than tol (relative), or at max_iter. The returned
    parameters are iterate averages over the final average_fraction of the
    run (or the last window on early stopping), which removes most of the
    Monte Carlo jitter left by the step-size decay.
    """
    levels = p.levels
    n = levels.size
    tau = prior_coord_params(spec, levels) if isinstance(spec, PriorSpec) else np.asarray(spec, dtype=float)
    if tau.shape != (n,):
        raise ValueError("prior scales do not match the problem size")
    design = D.design(p)
    if init is None:
        mu = np.zeros(n)
        log_sigma = np.log(tau).copy()
        if cfg.init == "map":
            mu = map_estimate(p, design, D.Y, tau, cfg.map_iter, cfg.map_starts, cfg.seed)
            log_sigma = np.log(laplace_sigma(p, design, D.Y, mu, tau))
    else:
        mu = init.mu.copy()
        log_sigma = np.log(init.sigma)
    rng = make_rng(cfg.seed, "fit")
    m = np.zeros(2 * n)
    v = np.zeros(2 * n)
    trace: list[float] = []
    converged = False
    w = cfg.window
    it = 0
    tail_start = max(1, int(math.ceil((1.0 - cfg.average_fraction) * cfg.max_iter)) + 1)
    tail_sum = np.zeros(2 * n)
    tail_count = 0
    recent = deque(maxlen=w)
    for it in range(1, cfg.max_iter + 1):
        Z = draw_normals(rng, cfg.mc_samples, n, cfg.antithetic)
        value, _, _, g_mu, g_ls = elbo_terms(p, design, D.Y, mu, log_sigma, tau, Z)
        if not (math.isfinite(value) and np.all(np.isfinite(g_mu)) and np.all(np.isfinite(g_ls))):
            raise NumericalFailure(
                f"non-finite ELBO at iteration {it}: mu={mu.tolist()}, sigma={np.exp(log_sigma).tolist()}"
            )
        trace.append(value)
        g = np.concatenate([g_mu, g_ls])
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        mhat = m / (1 - cfg.beta1**it)
        vhat = v / (1 - cfg.beta2**it)
        lr = cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1 + math.cos(math.pi * (it - 1) / cfg.max_iter))
        step = lr * mhat / (np.sqrt(vhat) + 1e-8)
        mu = mu + step[:n]
        log_sigma = log_sigma + step[n:]
        sigma = np.exp(log_sigma)
        if not np.all(sigma > 0):
            raise NumericalFailure(f"sigma underflowed at iteration {it}")
        params = np.concatenate([mu, log_sigma])
        recent.append(params)
        if it >= tail_start:
            tail_sum += params
            tail_count += 1
        if it >= 2 * w:
            cur = float(np.mean(trace[-w:]))
            prev = float(np.mean(trace[-2 * w : -w]))
            if abs(cur - prev) <= cfg.tol * max(1.0, abs(cur)):
                converged = True
                break
    if cfg.average_fraction > 0:
        avg = tail_sum / tail_count if tail_count >= w else np.mean(np.array(recent), axis=0)
        mu, log_sigma = avg[:n], avg[n:]
    q = MeanFieldGaussian(mu, np.exp(log_sigma), levels)
    return FitResult(q, trace, it, converged, cfg)


def _param_error(p: ForwardProblem, f, f0) -> float:
    diff = f - f0
    if p.basis is None:
        return float(np.sqrt(np.sum(diff * diff)))
    return float(np.sqrt(np.sum(p.quadrature_weights() * diff * diff)))


def posterior_functionals(q: MeanFieldGaussian, p: ForwardProblem, theta0, S: int = 512, seed: int = 0) -> dict:
    """MC means and standard errors of the prediction and parameter errors."""
    if S < 1:
        raise ValueError("S must be at least 1")
    t0 = _theta(theta0)
    f0 = p.field(t0)
    sol0 = p.solution(t0)
    w = p.quadrature_weights()
    Z = make_rng(seed, "functionals").standard_normal((S, q.size))
    pred = np.empty(S)
    par = np.empty(S)
    for s in range(S):
        t = q.sample(Z[s])
        diff = p.solution(t) - sol0
        pred[s] = math.sqrt(float(np.sum(w * np.sum(diff * diff, axis=0))))
        par[s] = _param_error(p, p.field(t), f0)

    def summary(x):
        se = float(np.std(x, ddof=1) / math.sqrt(S)) if S > 1 else float("nan")
        return float(np.mean(x)), se

    pm, pse = summary(pred)
    fm, fse = summary(par)
    return {"prediction": pm, "prediction_se": pse, "parameter": fm, "parameter_se": fse, "S": S, "seed": seed}


def r_bound(q: MeanFieldGaussian, p: ForwardProblem, spec: PriorSpec, theta0, S: int = 64, seed: int = 0) -> float:
    """(1/N) KL(q || prior) + E_q kl_exact(theta0, theta)."""
    t0 = _theta(theta0)
    Z = make_rng(seed, "rbound").standard_normal((S, q.size))
    second = float(np.mean([kl_exact(p, t0, q.sample(z)) for z in Z]))
    return kl_meanfield(q, spec) / spec.N + second


def explicit_construction(p: ForwardProblem, spec: PriorSpec, theta0, continuous_J: bool = False) -> MeanFieldGaussian:
    """Means at theta0, common sigma = 2^{-J(alpha + kappa + d/2)}.

    With continuous_J the exponent uses log2(N)/(2 alpha + 2 kappa + d)
    instead of the rounded truncation level.
    """
    a = spec.alpha + spec.kappa
    J = math.log2(spec.N) / (2 * a + spec.d) if continuous_J else spec.J
    sigma = 2.0 ** (-J * (a + spec.d / 2.0))
    t0 = _theta(theta0)
    return MeanFieldGaussian(t0.copy(), np.full(t0.shape, sigma), p.levels)


__all__ = [
    "MeanFieldGaussian",
    "FitConfig",
    "FitResult",
    "NumericalFailure",
    "kl_meanfield",
    "kl_coordinates",
    "elbo",
    "elbo_terms",
    "fit_vi",
    "posterior_functionals",
    "r_bound",
    "explicit_construction",
]
