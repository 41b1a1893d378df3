"""Random-design Gaussian regression model and exact information distances."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .forward import Design, ForwardProblem
from .rng import make_rng

RENYI_CAP = 700.0


@dataclass(frozen=True, eq=False)
class Dataset:
    """N design points X (N, d) with observations Y (N, p_V)."""

    X: np.ndarray
    Y: np.ndarray
    seed: int | None = None
    problem: dict = field(default_factory=dict)
    _designs: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float)
        if X.shape[0] != Y.shape[0] and X.shape[1] == Y.shape[0]:
            X = X.T
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] != Y.shape[0]:
            raise ValueError("X and Y must have the same number of rows")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    def design(self, p: ForwardProblem) -> Design:
        key = (p.kind, p.resolution, p.d)
        if key not in self._designs:
            self._designs[key] = p.design(self.X)
        return self._designs[key]

    def save(self, path) -> tuple[Path, Path]:
        """Write CSV (x1[,x2],y1[,y2]) and a sidecar JSON next to it."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = [f"x{i + 1}" for i in range(self.X.shape[1])] + [f"y{i + 1}" for i in range(self.Y.shape[1])]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for x, y in zip(self.X, self.Y):
                w.writerow([repr(float(v)) for v in np.concatenate([x, y])])
        meta = path.with_suffix(".json")
        with open(meta, "w", encoding="utf-8") as fh:
            json.dump({"seed": self.seed, "N": self.N, "problem": self.problem}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path, meta

    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        nx = sum(1 for h in header if h.startswith("x"))
        meta = {}
        side = path.with_suffix(".json")
        if side.exists():
            meta = json.loads(side.read_text(encoding="utf-8"))
        return cls(body[:, :nx], body[:, nx:], meta.get("seed"), meta.get("problem", {}))


def simulate_data(p: ForwardProblem, theta0, N: int, seed: int) -> Dataset:
    """Y_i = G(theta0)(X_i) + eps_i with X_i uniform and eps_i ~ N(0, I)."""
    if N < 1:
        raise ValueError("N must be at least 1")
    X = p.sample_design(make_rng(seed, "design"), N)
    design = p.design(X)
    noise = make_rng(seed, "noise").standard_normal((N, p.p_V))
    Y = p.predict(theta0, design) + noise
    return Dataset(X, Y, seed, p.describe())


def loglik(p: ForwardProblem, theta, D: Dataset) -> float:
    L = p.loss(theta, D.design(p), D.Y)
    return -0.5 * D.N * p.p_V * math.log(2.0 * math.pi) - L


def _sq_diff(p: ForwardProblem, theta1, theta2) -> np.ndarray:
    diff = p.solution(theta1) - p.solution(theta2)
    return np.sum(diff * diff, axis=0)


def _expect(p: ForwardProblem, values: np.ndarray) -> float:
    return float(np.sum(p.quadrature_weights() * values))


def kl_exact(p: ForwardProblem, theta1, theta2) -> float:
    """KL(P_theta1 || P_theta2) per observation: 1/2 ||G(theta1) - G(theta2)||^2."""
    return 0.5 * _expect(p, _sq_diff(p, theta1, theta2))


def renyi2_exact(p: ForwardProblem, theta1, theta2) -> float:
    """Order-2 Renyi divergence: log of the integral of exp(|dG|^2)."""
    sq = _sq_diff(p, theta1, theta2)
    if sq.max() > RENYI_CAP:
        raise OverflowError("|G(theta1) - G(theta2)|^2 exceeds the exponent cap")
    return math.log(_expect(p, np.exp(sq)))


def hellinger_sq(p: ForwardProblem, theta1, theta2) -> float:
    """Squared Hellinger distance with the 1/2 convention: 1 - E exp(-|dG|^2/8)."""
    return 1.0 - _expect(p, np.exp(-_sq_diff(p, theta1, theta2) / 8.0))


def l2_distance_sq(p: ForwardProblem, theta1, theta2) -> float:
    return _expect(p, _sq_diff(p, theta1, theta2))


def sup_norm(p: ForwardProblem, theta) -> float:
    """max over the grid of |G(theta)(x)|_V."""
    sol = p.solution(theta)
    return float(np.sqrt(np.max(np.sum(sol * sol, axis=0))))


def hellinger_constant(U: float) -> float:
    return (1.0 - math.exp(-U * U / 2.0)) / (2.0 * U * U)
