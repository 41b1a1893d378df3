"""Rescaled sieve Gaussian priors and the bounded push-forward prior.

Prior weights use the effective level max(l, 0), so the coarse scaling block
(level -1) is weighted like level 0.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .basis import CoefField
from .links import ball_map, psi_weights
from .rng import make_rng

SIEVE = "sieve"
ILLPOSED = "illposed"


def truncation_level(N: int, alpha: float, kappa: float, d: int) -> int:
    """J = round(log2 N / (2 alpha + 2 kappa + d)), at least 1."""
    if N < 2:
        raise ValueError("N must be at least 2")
    return max(1, int(round(math.log2(N) / (2 * alpha + 2 * kappa + d))))


@dataclass(frozen=True)
class PriorSpec:
    alpha: float
    kappa: float = 0.0
    d: int = 1
    N: int = 1
    flavor: str = SIEVE
    B: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.kappa < 0:
            raise ValueError("alpha and kappa must be nonnegative")
        if self.d not in (1, 2):
            raise ValueError("d must be 1 or 2")
        if self.N < 1:
            raise ValueError("N must be positive")
        if self.flavor not in (SIEVE, ILLPOSED):
            raise ValueError(f"unknown prior flavor {self.flavor!r}")
        if self.B <= 0:
            raise ValueError("B must be positive")

    @property
    def J(self) -> int:
        return truncation_level(max(self.N, 2), self.alpha, self.kappa, self.d)

    @property
    def rescale(self) -> float:
        return self.N ** (-self.d / (4 * self.alpha + 4 * self.kappa + 2 * self.d))

    @property
    def eps_N(self) -> float:
        a = self.alpha + self.kappa
        return self.N ** (-a / (2 * a + self.d))

    def with_N(self, N: int) -> "PriorSpec":
        return PriorSpec(self.alpha, self.kappa, self.d, N, self.flavor, self.B)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["J"] = self.J
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        keys = ("alpha", "kappa", "d", "N", "flavor", "B")
        return cls(**{k: d[k] for k in keys if k in d})


def _level_weights(levels, alpha: float) -> np.ndarray:
    return 2.0 ** (-np.maximum(np.asarray(levels), 0) * alpha)


def prior_weights(spec: PriorSpec, levels) -> np.ndarray:
    """Sample-path standard deviations rescale * 2^{-l alpha}."""
    if spec.flavor == ILLPOSED:
        return np.full(np.shape(levels), spec.rescale)
    return spec.rescale * _level_weights(levels, spec.alpha)


def prior_coord_params(spec: PriorSpec, levels) -> np.ndarray:
    """Per-coordinate prior standard deviations tau_{lr}.

    Sieve: (2^{l alpha} sqrt(N) eps_N)^{-1}. For the bounded prior the latent
    coordinates are i.i.d. N(0, rescale^2).
    """
    levels = np.asarray(levels)
    if spec.flavor == ILLPOSED:
        return np.full(levels.shape, spec.rescale)
    lev = np.maximum(levels, 0)
    return 1.0 / (2.0 ** (lev * spec.alpha) * math.sqrt(spec.N) * spec.eps_N)


def _check_levels(levels, J):
    levels = np.asarray(levels)
    if levels.size and levels.max() > J:
        raise ValueError(f"levels exceed the truncation level J={J}")
    return levels


def sample_sieve(spec: PriorSpec, levels, seed: int) -> CoefField:
    """Coefficients rescale * 2^{-l alpha} xi_{lr}; entries above J are zero."""
    if spec.flavor != SIEVE:
        raise ValueError("sample_sieve needs a sieve prior")
    levels = np.asarray(levels)
    xi = make_rng(seed, "prior").standard_normal(levels.shape)
    vals = prior_weights(spec, levels) * xi
    vals[levels > spec.J] = 0.0
    return CoefField(vals, levels)


def sample_latent(spec: PriorSpec, levels, seed: int) -> np.ndarray:
    """Latent draw rescale * xi of the bounded prior."""
    xi = make_rng(seed, "prior").standard_normal(np.shape(levels))
    return spec.rescale * xi


def sample_illposed(spec: PriorSpec, levels, seed: int) -> CoefField:
    """Coefficients w_l h(rescale xi_{lr}) with |coefficient| < B w_l."""
    if spec.flavor != ILLPOSED:
        raise ValueError("sample_illposed needs an illposed prior")
    levels = np.asarray(levels)
    w = psi_weights(levels, spec.alpha, spec.d)
    vals = w * ball_map(sample_latent(spec, levels, seed), spec.B)
    vals = np.atleast_1d(vals)
    vals[levels > spec.J] = 0.0
    return CoefField(vals, levels)


def rkhs_norm(c: CoefField, spec: PriorSpec) -> float:
    """sqrt(sum (c_{lr} / w_{lr})^2) with the sample-path weights w."""
    levels = np.asarray(c.levels)
    nz = c.values != 0
    if np.any(levels[nz] > spec.J):
        raise ValueError("coefficient field has support beyond the truncation level")
    w = prior_weights(spec, levels)
    return float(np.sqrt(np.sum((c.values / w) ** 2)))


def decaying_truth(levels, beta: float, d: int = 1, B0: float = 1.0, seed: int = 0, max_level: int | None = None) -> CoefField:
    """Truth coefficients with |theta_{lr}| <= B0 2^{-l(beta + d/2)}.

    Signs and magnitudes in [B0/2, B0] are drawn from the (seed, "truth")
    stream one coefficient at a time, so a larger basis extends the truth
    of a smaller one. Levels above max_level are zero.
    """
    levels = np.asarray(levels)
    u = make_rng(seed, "truth").uniform(size=(levels.size, 2))
    mag = (0.5 + 0.5 * u[:, 0]) * np.where(u[:, 1] < 0.5, -1.0, 1.0)
    vals = B0 * mag * 2.0 ** (-np.maximum(levels, 0) * (beta + d / 2.0))
    if max_level is not None:
        vals[levels > max_level] = 0.0
    return CoefField(vals, levels)
