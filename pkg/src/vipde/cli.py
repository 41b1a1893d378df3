"""Command-line interface: vipde {simulate,fit,select,rate-sweep,probe,ml-eval}."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from numpy.linalg import LinAlgError
from threadpoolctl import threadpool_limits

from . import config as cfgmod
from .harness import emit_report, probe_conditions, rate_sweep, report_json, run_selection
from .mlf import mittag_leffler
from .model import Dataset, simulate_data
from .pde import ConductivityError, SolverError
from .rng import derive_seed
from .vi import NumericalFailure, fit_vi, posterior_functionals

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--problem", choices=sorted(cfgmod.PRESETS), help="preset used when no config is given")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", type=Path, default=Path("vipde-out"), help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vipde", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()
    sim = sub.add_parser("simulate", parents=[common], help="simulate and write a dataset")
    sim.add_argument("--N", type=int, help="sample size (overrides problem.N)")
    fit = sub.add_parser("fit", parents=[common], help="variational fit on a dataset")
    fit.add_argument("--data", type=Path, help="dataset CSV; simulated from the config when omitted")
    fit.add_argument("--N", type=int, help="sample size when simulating")
    sub.add_parser("select", parents=[common], help="select the fractional order")
    sub.add_parser("rate-sweep", parents=[common], help="contraction-rate sweep over N")
    probe = sub.add_parser("probe", parents=[common], help="probe the forward-map conditions")
    probe.add_argument("--M", type=float, default=2.0, help="radius of the coefficient ball")
    probe.add_argument("--samples", type=int, default=32, help="number of random pairs")
    probe.add_argument("--J", type=int, default=1, help="truncation level of the probed basis")
    ml = sub.add_parser("ml-eval", parents=[common], help="evaluate E_{beta,gamma}(z)")
    ml.add_argument("--beta", type=float, required=True)
    ml.add_argument("--gamma", type=float, default=1.0)
    ml.add_argument("--z", type=float, nargs="+", required=True)
    return parser


def _load(args) -> dict:
    if args.config is not None:
        cfg = cfgmod.load_config(args.config, args.problem)
    else:
        cfg = cfgmod.resolve_config({}, args.problem)
    if args.seed is not None:
        if args.seed < 0:
            raise cfgmod.ConfigError("seed must be nonnegative")
        cfg["seed"] = args.seed
    if args.threads < 1:
        raise cfgmod.ConfigError("--threads must be at least 1")
    return cfg


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report_json(obj), encoding="utf-8")
    return path


def _simulate(cfg: dict, N: int):
    spec = cfgmod.prior_spec(cfg, N)
    p = cfgmod.build_problem(cfg, spec.J)
    theta0 = cfgmod.build_truth(cfg, p)
    D = simulate_data(p, theta0, N, derive_seed(cfg["seed"], "simulate"))
    return spec, p, theta0, D


def cmd_simulate(args, cfg) -> dict:
    N = args.N or int(cfg["problem"]["N"])
    _, _, _, D = _simulate(cfg, N)
    csv_path, meta = D.save(args.out / "data.csv")
    cfgmod.dump_config(cfg, args.out / "config.json")
    return {"data": str(csv_path), "metadata": str(meta), "N": D.N}


def cmd_fit(args, cfg) -> dict:
    seed = cfg["seed"]
    if args.data is not None:
        D = Dataset.load(args.data)
        spec = cfgmod.prior_spec(cfg, D.N)
        p = cfgmod.build_problem(cfg, spec.J)
        theta0 = None
    else:
        spec, p, theta0, D = _simulate(cfg, args.N or int(cfg["problem"]["N"]))
    with threadpool_limits(limits=1):
        res = fit_vi(p, D, spec, cfgmod.fit_config(cfg, derive_seed(seed, "fit")))
        if theta0 is not None:
            S = int(cfg["sweep"]["S_functionals"])
            res.extra["functionals"] = posterior_functionals(res.q, p, theta0, S, derive_seed(seed, "functionals"))
    res.extra["prior"] = spec.to_dict()
    path = res.save(args.out / "fit.json")
    cfgmod.dump_config(cfg, args.out / "config.json")
    out = {"fit": str(path), "iterations": res.iterations, "final_elbo": res.trace[-1]}
    if "functionals" in res.extra:
        out["prediction_error"] = res.extra["functionals"]["prediction"]
    return out


def cmd_select(args, cfg) -> dict:
    _, report = run_selection(cfg, threads=args.threads)
    path = _write_json(args.out / "selection.json", report)
    cfgmod.dump_config(cfg, args.out / "config.json")
    return {"selection": str(path), "beta_hat": report["beta_hat"], "unimodal": report["unimodal"]}


def cmd_rate_sweep(args, cfg) -> dict:
    report = rate_sweep(cfg, threads=args.threads)
    paths = emit_report(report, args.out)
    cfgmod.dump_config(cfg, args.out / "config.json")
    return {"files": [str(p) for p in paths], "slope": report.slope, "exponent": report.exponent, "passed": report.passed}


def cmd_probe(args, cfg) -> dict:
    p = cfgmod.build_problem(cfg, args.J)
    with threadpool_limits(limits=1):
        rep = probe_conditions(p, args.M, args.samples, derive_seed(cfg["seed"], "probe"))
    _write_json(args.out / "probe.json", rep)
    return rep


def cmd_ml_eval(args, cfg) -> dict:
    values = [mittag_leffler(args.beta, args.gamma, z) for z in args.z]
    return {"beta": args.beta, "gamma": args.gamma, "z": args.z, "value": values}


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "select": cmd_select,
    "rate-sweep": cmd_rate_sweep,
    "probe": cmd_probe,
    "ml-eval": cmd_ml_eval,
}

NUMERICAL = (NumericalFailure, SolverError, ConductivityError, ArithmeticError, LinAlgError)
VALIDATION = (cfgmod.ConfigError, ValueError, KeyError, TypeError, FileNotFoundError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    try:
        cfg = _load(args) if args.command != "ml-eval" else {}
        result = COMMANDS[args.command](args, cfg)
    except NUMERICAL as exc:
        print(f"vipde: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except VALIDATION as exc:
        print(f"vipde: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
