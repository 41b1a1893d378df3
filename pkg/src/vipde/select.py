"""ELBO-based selection of the fractional order beta by grid search."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .forward import ForwardProblem
from .model import Dataset
from .prior import PriorSpec
from .vi import FitConfig, FitResult, MeanFieldGaussian, elbo, fit_vi

S_EVAL = 256


@dataclass(frozen=True)
class SelectionProblem:
    """Grid of candidate orders with prior weights and a problem template.

    `template(beta)` returns the forward problem at order beta. Ties in the
    objective are broken toward the smaller beta.
    """

    betas: tuple
    template: Callable[[float], ForwardProblem]
    spec: PriorSpec
    fit: FitConfig = field(default_factory=FitConfig)
    weights: tuple | None = None
    S_eval: int = S_EVAL
    eval_seed: int = 0

    def __post_init__(self):
        betas = tuple(float(b) for b in self.betas)
        if not betas:
            raise ValueError("the beta grid is empty")
        if any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
            raise ValueError("the beta grid must be strictly ascending")
        if not (0.0 < betas[0] and betas[-1] < 1.0):
            raise ValueError("grid orders must lie inside (0, 1)")
        object.__setattr__(self, "betas", betas)
        if self.weights is None:
            object.__setattr__(self, "weights", tuple(1.0 / len(betas) for _ in betas))
        w = tuple(float(x) for x in self.weights)
        if len(w) != len(betas) or any(x <= 0 for x in w):
            raise ValueError("prior weights must be positive, one per grid point")
        if abs(sum(w) - 1.0) > 1e-9:
            raise ValueError("prior weights must sum to 1")
        object.__setattr__(self, "weights", w)
        if self.S_eval < 1:
            raise ValueError("S_eval must be at least 1")


@dataclass(eq=False)
class SelectionResult:
    beta: float
    q: MeanFieldGaussian
    table: list
    failed: list
    fits: dict

    def to_dict(self) -> dict:
        return {"beta_hat": self.beta, "table": self.table, "failed": self.failed, "q": self.q.to_dict()}

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def argmax_smallest(values) -> int:
    """Index of the maximum, the first one on ties."""
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def _fit_one(sp: SelectionProblem, D: Dataset, beta: float):
    try:
        p = sp.template(beta)
        res: FitResult = fit_vi(p, D, sp.spec, sp.fit)
        return res, elbo(res.q, p, D, sp.spec, sp.S_eval, sp.eval_seed)
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def select_and_fit(sp: SelectionProblem, D: Dataset, log_weights=None, threads: int = 1) -> SelectionResult:
    """Fit VI at every grid order and maximize H = ELBO + log pi(beta).

    `log_weights` overrides log pi (it may be unnormalized). Per-order fits
    may run on `threads` workers; the comparison is sequential.
    """
    logw = [math.log(w) for w in sp.weights] if log_weights is None else [float(x) for x in log_weights]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(lambda b: _fit_one(sp, D, b), sp.betas))
    else:
        outcomes = [_fit_one(sp, D, b) for b in sp.betas]
    table, failed, fits = [], [], {}
    for beta, lw, (res, value) in zip(sp.betas, logw, outcomes):
        if res is None:
            failed.append({"beta": beta, "error": value})
            continue
        H = value + lw
        table.append({"beta": beta, "elbo": value, "log_prior": lw, "H": H, "iterations": res.iterations, "fit_seed": sp.fit.seed, "eval_seed": sp.eval_seed})
        fits[beta] = res
    if not table:
        raise RuntimeError("every grid order failed to fit")
    best = table[argmax_smallest([row["H"] for row in table])]
    return SelectionResult(best["beta"], fits[best["beta"]].q, table, failed, fits)


def is_unimodal(values) -> bool:
    """Nondecreasing up to the maximum and nonincreasing after it."""
    values = list(values)
    k = int(np.argmax(values))
    up = all(a <= b for a, b in zip(values[:k], values[1 : k + 1]))
    down = all(a >= b for a, b in zip(values[k:], values[k + 1 :]))
    return up and down
