"""Rate sweeps, condition probes, model selection runs and report files."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats
from threadpoolctl import threadpool_limits

from .config import beta_grid, build_problem, build_truth, fit_config, prior_spec, theoretical_exponent
from .forward import ForwardProblem
from .model import simulate_data
from .rng import derive_seed, make_rng
from .select import SelectionProblem, SelectionResult, is_unimodal, select_and_fit
from .vi import fit_vi, posterior_functionals

METRICS = ("prediction", "parameter")


def ols_slope(x, y) -> tuple[float, float, float]:
    """Least-squares slope, intercept and slope standard error of y on x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - intercept - slope * x
    se = math.sqrt(float(np.sum(resid**2)) / (n - 2) / sxx) if n > 2 else float("nan")
    return slope, intercept, se


def _json_float(x):
    return None if x is None or not math.isfinite(x) else float(x)


@dataclass
class RateReport:
    kind: str
    metric: str
    exponent: float
    tolerance: float
    N_grid: list
    replicates: int
    master_seed: int
    cells: list
    summary: list
    slopes: dict
    monotone_fraction: float
    incomplete: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def slope(self) -> float:
        return self.slopes[self.metric]["slope"]

    @property
    def passed(self) -> bool:
        return abs(self.slope - self.exponent) <= self.tolerance

    @property
    def monotone_ok(self) -> bool:
        pairs = len(self.N_grid) - 1
        return self.monotone_fraction * pairs >= math.ceil(0.8 * pairs) - 1e-9

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "metric": self.metric,
            "exponent": self.exponent,
            "tolerance": self.tolerance,
            "N_grid": list(self.N_grid),
            "replicates": self.replicates,
            "master_seed": self.master_seed,
            "cells": self.cells,
            "summary": self.summary,
            "slopes": self.slopes,
            "monotone_fraction": self.monotone_fraction,
            "passed": self.passed,
            "incomplete": self.incomplete,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RateReport":
        keys = ("kind", "metric", "exponent", "tolerance", "N_grid", "replicates", "master_seed", "cells", "summary", "slopes", "monotone_fraction", "incomplete", "config")
        return cls(**{k: d[k] for k in keys})


def _cell(cfg: dict, N: int, rep: int, master: int) -> dict:
    cell_seed = derive_seed(master, "cell", N, rep)
    spec = prior_spec(cfg, N)
    out = {"N": N, "replicate": rep, "seed": cell_seed, "J": spec.J}
    try:
        p = build_problem(cfg, spec.J)
        theta0 = build_truth(cfg, p)
        D = simulate_data(p, theta0, N, derive_seed(cell_seed, "data"))
        res = fit_vi(p, D, spec, fit_config(cfg, derive_seed(cell_seed, "fit")))
        pf = posterior_functionals(res.q, p, theta0, int(cfg["sweep"]["S_functionals"]), derive_seed(cell_seed, "functionals"))
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        out.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        for m in METRICS:
            out[m] = None
            out[m + "_se"] = None
        return out
    out.update(status="ok", iterations=res.iterations)
    for m in METRICS:
        out[m] = pf[m]
        out[m + "_se"] = pf[m + "_se"]
    return out


def rate_sweep(cfg: dict, threads: int = 1) -> RateReport:
    """Simulate, fit and score R replicates at every N; fit log-log slopes.

    Cells run in a pool of `threads` workers; seeds depend only on
    (master seed, N, replicate) and results are reduced in grid order.
    """
    sw = cfg["sweep"]
    master = int(cfg.get("seed", 0))
    grid = [int(n) for n in sw["N_grid"]]
    R = int(sw["replicates"])
    jobs = [(N, r) for N in grid for r in range(R)]
    # single-threaded BLAS keeps every cell bitwise independent of the pool size
    with threadpool_limits(limits=1):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                cells = list(pool.map(lambda job: _cell(cfg, job[0], job[1], master), jobs))
        else:
            cells = [_cell(cfg, N, r, master) for N, r in jobs]
    summary, incomplete = [], []
    for N in grid:
        row = {"N": N}
        group = [c for c in cells if c["N"] == N and c["status"] == "ok"]
        if len(group) < R:
            incomplete.append(N)
        for m in METRICS:
            vals = np.array([c[m] for c in group], dtype=float)
            row[m] = _json_float(vals.mean()) if vals.size else None
            row[m + "_se"] = _json_float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else None
        summary.append(row)
    slopes = {}
    for m in METRICS:
        pts = [(r["N"], r[m]) for r in summary if r[m] is not None and r[m] > 0]
        if len(pts) >= 3:
            s, b, se = ols_slope(np.log([p[0] for p in pts]), np.log([p[1] for p in pts]))
            half = float(stats.t.ppf(0.975, len(pts) - 2) * se)
            slopes[m] = {"slope": s, "intercept": b, "se": se, "ci": [s - half, s + half]}
        else:
            slopes[m] = {"slope": None, "intercept": None, "se": None, "ci": None}
    metric = sw["metric"]
    means = [r[metric] for r in summary]
    dec = [a is not None and b is not None and b <= a for a, b in zip(means, means[1:])]
    return RateReport(
        kind=cfg["problem"]["kind"],
        metric=metric,
        exponent=theoretical_exponent(cfg),
        tolerance=float(sw["tolerance"]),
        N_grid=grid,
        replicates=R,
        master_seed=master,
        cells=cells,
        summary=summary,
        slopes=slopes,
        monotone_fraction=float(np.mean(dec)),
        incomplete=incomplete,
        config=cfg,
    )


# -- condition probe ---------------------------------------------------------


def probe_conditions(p: ForwardProblem, M: float, n_samples: int = 32, seed: int = 0) -> dict:
    """Empirical sup bound and L2 Lipschitz ratios over random pairs in the M-ball.

    Points are drawn uniformly in the Euclidean ball of radius M of the
    coefficient space; the same draws are reused for every M at a fixed seed.
    The L2 norm stands in for the dual Sobolev norm, so the ratios bound the
    true Lipschitz constants from above.
    """
    if not M > 1:
        raise ValueError("M must exceed 1")
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    rng = make_rng(seed, "probe")
    n = p.size
    w = p.quadrature_weights()

    def draw():
        g = rng.standard_normal(n)
        return M * rng.uniform() ** (1.0 / n) * g / np.linalg.norm(g)

    sups, ratios = [], []
    for _ in range(n_samples):
        t1, t2 = draw(), draw()
        s1, s2 = p.solution(t1), p.solution(t2)
        for s in (s1, s2):
            sups.append(float(np.sqrt(np.max(np.sum(s * s, axis=0)))))
        diff = s1 - s2
        num = math.sqrt(float(np.sum(w * np.sum(diff * diff, axis=0))))
        ratios.append(num / float(np.linalg.norm(t1 - t2)))
    ratios = np.array(ratios)
    return {
        "M": M,
        "n_samples": n_samples,
        "seed": seed,
        "sup_bound": max(sups),
        "lipschitz_max": float(ratios.max()),
        "lipschitz_median": float(np.median(ratios)),
        "problem": p.describe(),
    }


# -- model selection -----------------------------------------------------------


def run_selection(cfg: dict, threads: int = 1) -> tuple[SelectionResult, dict]:
    """Simulate at beta0 and select the order over the configured grid."""
    sel = cfg["selection"]
    master = int(cfg.get("seed", 0))
    N = int(sel["N"])
    spec = prior_spec(cfg, N)
    betas = beta_grid(cfg)
    with threadpool_limits(limits=1):
        p0 = build_problem(cfg, spec.J, beta=float(sel["beta0"]))
        theta0 = build_truth(cfg, p0)
        data_seed = derive_seed(master, "selection-data")
        D = simulate_data(p0, theta0, N, data_seed)
        sp = SelectionProblem(
            betas,
            lambda b: build_problem(cfg, spec.J, beta=b),
            spec,
            fit_config(cfg, derive_seed(master, "selection-fit")),
            tuple(sel["weights"]) if sel.get("weights") else None,
            int(sel["S_eval"]),
            derive_seed(master, "selection-eval"),
        )
        result = select_and_fit(sp, D, threads=threads)
    report = {
        "beta0": float(sel["beta0"]),
        "beta_hat": result.beta,
        "N": N,
        "grid": list(betas),
        "table": result.table,
        "failed": result.failed,
        "unimodal": is_unimodal([row["H"] for row in result.table]),
        "seeds": {"master": master, "data": data_seed, "fit": sp.fit.seed, "eval": sp.eval_seed},
        "mean": result.q.mu.tolist(),
        "sd": result.q.sigma.tolist(),
        "config": cfg,
    }
    return result, report


# -- report files --------------------------------------------------------------


def _fmt(x) -> str:
    return "" if x is None else repr(float(x)) if isinstance(x, float) else str(x)


def report_csv(report: RateReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["N", "replicate", "seed", "J", "status", "prediction", "prediction_se", "parameter", "parameter_se"]
    w.writerow(cols)
    for c in report.cells:
        w.writerow([_fmt(c.get(k)) for k in cols])
    return buf.getvalue()


def report_json(report) -> str:
    d = report.to_dict() if hasattr(report, "to_dict") else report
    return json.dumps(d, indent=2, sort_keys=True, allow_nan=False) + "\n"


_COLORS = {"prediction": "#1f77b4", "parameter": "#d62728"}


def report_svg(report: RateReport, width: int = 640, height: int = 480) -> str:
    """Log-log plot: mean errors per N, fitted lines and the theoretical slope."""
    pad = 60
    pts = {m: [(r["N"], r[m]) for r in report.summary if r[m] is not None and r[m] > 0] for m in METRICS}
    xs = [math.log10(n) for n in report.N_grid]
    ys = [math.log10(v) for m in METRICS for _, v in pts[m]] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys) - 0.1, max(ys) + 0.1
    if x1 == x0:
        x1 = x0 + 1.0

    def px(lx):
        return pad + (lx - x0) / (x1 - x0) * (width - 2 * pad)

    def py(ly):
        return height - pad - (ly - y0) / (y1 - y0) * (height - 2 * pad)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 15}" text-anchor="middle" font-size="13">log10 N</text>',
        f'<text x="15" y="{height / 2:.1f}" text-anchor="middle" font-size="13" transform="rotate(-90 15 {height / 2:.1f})">log10 error</text>',
        f'<text x="{width / 2:.1f}" y="25" text-anchor="middle" font-size="14">{report.kind}: target slope {report.exponent:.4f}</text>',
    ]
    for m in METRICS:
        color = _COLORS[m]
        out.append(f'<g id="{m}">')
        for n, v in pts[m]:
            out.append(f'<circle class="marker" data-metric="{m}" cx="{px(math.log10(n)):.3f}" cy="{py(math.log10(v)):.3f}" r="4" fill="{color}"/>')
        fit = report.slopes[m]
        if fit["slope"] is not None:
            a, b = fit["slope"], fit["intercept"] / math.log(10.0)
            out.append(
                f'<line class="fit" data-metric="{m}" x1="{px(x0):.3f}" y1="{py(b + a * x0):.3f}" x2="{px(x1):.3f}" y2="{py(b + a * x1):.3f}" stroke="{color}"/>'
            )
            out.append(f'<text x="{width - pad:.1f}" y="{(pad + 20 if m == "prediction" else pad + 38):.1f}" text-anchor="end" font-size="12" fill="{color}">{m}: slope {a:.3f}</text>')
        out.append("</g>")
    if pts[report.metric]:
        lx = [math.log10(n) for n, _ in pts[report.metric]]
        ly = [math.log10(v) for _, v in pts[report.metric]]
        cx, cy = float(np.mean(lx)), float(np.mean(ly))
        e = report.exponent
        out.append(
            f'<line class="theory" x1="{px(x0):.3f}" y1="{py(cy + e * (x0 - cx)):.3f}" x2="{px(x1):.3f}" y2="{py(cy + e * (x1 - cx)):.3f}" stroke="gray" stroke-dasharray="6 4"/>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(report, out_dir, formats=("csv", "json", "svg"), stem: str = "report") -> list[Path]:
    """Write the requested report files; I/O errors name the failing path."""
    out_dir = Path(out_dir)
    written = []
    writers = {"csv": report_csv, "json": report_json, "svg": report_svg}
    for fmt in formats:
        if fmt not in writers:
            raise ValueError(f"unknown report format {fmt!r}")
        if fmt in ("csv", "svg") and not isinstance(report, RateReport):
            continue
        path = out_dir / f"{stem}.{fmt}"
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(writers[fmt](report))
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        written.append(path)
    return written
