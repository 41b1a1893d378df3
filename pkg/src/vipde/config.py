"""Experiment configuration: one JSON document with sections
problem, prior, vi, selection and sweep.

Missing entries are filled from the preset for the problem kind, so a
config file only needs to state what differs from the defaults.
"""

from __future__ import annotations

import copy
import json
import math
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import links
from .basis import BOUNDARY, INTERIOR, build_basis
from .forward import DARCY, SMOOTHING, SUBDIFFUSION, DarcyProblem, SmoothingProblem, SubdiffusionProblem
from .links import LinkSpec
from .prior import ILLPOSED, SIEVE, PriorSpec, decaying_truth
from .vi import FitConfig

SECTIONS = ("problem", "prior", "vi", "selection", "sweep")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


_SWEEP = {"N_grid": [250, 500, 1000, 2000, 4000], "replicates": 5, "metric": "prediction", "tolerance": 0.2, "S_functionals": 512}
_VI = {"mc_samples": 2, "lr": 0.01, "lr_final": 0.001, "max_iter": 300, "tol": 1e-9, "init": "map", "map_starts": 4}
_SELECTION = {"beta_min": 0.30, "beta_max": 0.80, "step": 0.05, "weights": None, "N": 2000, "beta0": 0.5, "S_eval": 256}

PRESETS = {
    SUBDIFFUSION: {
        "problem": {
            "kind": SUBDIFFUSION,
            "d": 1,
            "resolution": 128,
            "S": 6,
            "flavor": INTERIOR,
            "link": {"kind": links.LOGISTIC, "M0": 2.0},
            "params": {"beta": 0.5, "T": 1.0, "u0": 0.0, "f": 1.0e4, "a0": 1.0, "a1": 1.0, "m": 128},
            "truth": {"regularity": 3.0, "B0": 1.0, "seed": 7, "max_level": 1},
            "N": 1000,
        },
        "prior": {"alpha": 3.0, "kappa": 2.0, "flavor": SIEVE, "B": 1.0},
    },
    DARCY: {
        "problem": {
            "kind": DARCY,
            "d": 1,
            "resolution": 512,
            "S": 6,
            "flavor": INTERIOR,
            "link": {"kind": links.DARCY},
            "params": {"source": -100.0},
            "truth": {"regularity": 4.0, "B0": 1.0, "seed": 7, "max_level": 1},
            "N": 1000,
        },
        "prior": {"alpha": 4.0, "kappa": 1.0, "flavor": SIEVE, "B": 1.0},
    },
    SMOOTHING: {
        "problem": {
            "kind": SMOOTHING,
            "d": 1,
            "resolution": 512,
            "S": 6,
            "flavor": BOUNDARY,
            "link": {"kind": links.LOGISTIC, "M0": 2.0},
            "params": {"width": 0.01, "frequency": 1.0, "amplitude": 10.0},
            "truth": {"regularity": 0.0, "B0": 1.0, "seed": 7, "max_level": 1},
            "N": 1000,
        },
        "prior": {"alpha": 2.0, "kappa": 0.0, "flavor": ILLPOSED, "B": 1.0},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(raw: dict | None = None, kind: str | None = None) -> dict:
    """Fill defaults and validate; raises ConfigError."""
    raw = dict(raw or {})
    unknown = set(raw) - set(SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    kind = raw.get("problem", {}).get("kind", kind or SUBDIFFUSION)
    if kind not in PRESETS:
        raise ConfigError(f"unknown problem kind {kind!r}")
    base = _merge(PRESETS[kind], {"vi": _VI, "selection": _SELECTION, "sweep": _SWEEP, "seed": 0})
    cfg = _merge(base, raw)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    pr = cfg["problem"]
    if pr.get("d") not in (1, 2):
        raise ConfigError("problem.d must be 1 or 2")
    if pr["kind"] != DARCY and pr["d"] != 1:
        raise ConfigError(f"{pr['kind']} is one-dimensional")
    if int(pr.get("N", 1)) < 1:
        raise ConfigError("problem.N must be positive")
    sw = cfg["sweep"]
    grid = sw.get("N_grid") or []
    if len(grid) < 3:
        raise ConfigError("sweep.N_grid needs at least 3 sample sizes")
    if any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 2:
        raise ConfigError("sweep.N_grid must be ascending and start at 2 or more")
    if int(sw.get("replicates", 0)) < 1:
        raise ConfigError("sweep.replicates must be at least 1")
    if sw.get("metric") not in ("prediction", "parameter"):
        raise ConfigError("sweep.metric must be 'prediction' or 'parameter'")
    sel = cfg["selection"]
    if not 0.0 < sel["beta_min"] < sel["beta_max"] < 1.0 or sel["step"] <= 0:
        raise ConfigError("selection grid must satisfy 0 < beta_min < beta_max < 1 with a positive step")
    try:
        fit_config(cfg, 0)
        prior_spec(cfg, 2)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if not isinstance(cfg.get("seed", 0), int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")


def load_config(path, kind: str | None = None) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return resolve_config(raw, kind)


def dump_config(cfg: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def prior_spec(cfg: dict, N: int) -> PriorSpec:
    pr = cfg["prior"]
    return PriorSpec(float(pr["alpha"]), float(pr.get("kappa", 0.0)), int(cfg["problem"]["d"]), int(N), pr.get("flavor", SIEVE), float(pr.get("B", 1.0)))


def fit_config(cfg: dict, seed: int) -> FitConfig:
    vi = {k: v for k, v in cfg["vi"].items() if k != "seed"}
    return FitConfig.from_dict({**vi, "seed": int(seed)})


@lru_cache(maxsize=32)
def _basis(d: int, J: int, S: int, flavor: str, resolution: int):
    return build_basis(d=d, J=J, S=S, flavor=flavor, resolution=resolution)


def build_problem(cfg: dict, J: int, beta: float | None = None):
    """Forward problem of the configured kind with truncation level J."""
    pr = cfg["problem"]
    spec = cfg["prior"]
    basis = _basis(int(pr["d"]), int(J), int(pr["S"]), pr["flavor"], int(pr["resolution"]))
    link = LinkSpec(**pr["link"])
    params = dict(pr.get("params", {}))
    ball = (float(spec["alpha"]), float(spec.get("B", 1.0))) if spec.get("flavor") == ILLPOSED else None
    if pr["kind"] == SUBDIFFUSION:
        if beta is not None:
            params["beta"] = beta
        return SubdiffusionProblem(basis, link, ball=ball, **params)
    if pr["kind"] == DARCY:
        return DarcyProblem(basis, link, ball=ball, **params)
    return SmoothingProblem(basis, link, ball=ball, **params)


def build_truth(cfg: dict, p) -> np.ndarray:
    """Truth coefficients (latent coordinates for the bounded prior)."""
    tr = cfg["problem"]["truth"]
    # latent coordinates of the bounded prior carry no d/2 factor
    d = 0 if cfg["prior"].get("flavor") == ILLPOSED else p.d
    return decaying_truth(p.levels, float(tr["regularity"]), d, float(tr.get("B0", 1.0)), int(tr.get("seed", 0)), tr.get("max_level")).values


def theoretical_exponent(cfg: dict) -> float:
    pr = cfg["prior"]
    d = cfg["problem"]["d"]
    if pr.get("flavor") == ILLPOSED:
        a = float(pr["alpha"])
    else:
        a = float(pr["alpha"]) + float(pr.get("kappa", 0.0))
    return -a / (2 * a + d)


def beta_grid(cfg: dict) -> tuple:
    sel = cfg["selection"]
    n = int(math.floor((sel["beta_max"] - sel["beta_min"]) / sel["step"] + 1e-9)) + 1
    return tuple(round(sel["beta_min"] + i * sel["step"], 10) for i in range(n))
