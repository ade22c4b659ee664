"""Command line entry point: ``mfsbm <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .combinatorics import count_triples, enumerate_triples
from .dual import dual_moment_estimate
from .errors import ConfigError, MfsbmError
from .harness import emit_results, load_config, run_validate
from .kernels import GaussianMixture, initial_from_dict
from .moments import (ConstantSigma, CosineSeriesSigma, MCParams, _FieldSigma, moment_formula_mc, picard_solve,
                      sigma_from_dict)
from .particles import EnsembleConfig, run_ensemble

DEFAULT_INIT = GaussianMixture((1.0,), (0.0,), (1.0,))


def _json_arg(text):
    """Inline JSON, or a path to a JSON file."""
    p = Path(text)
    if p.exists():
        return json.loads(p.read_text())
    return json.loads(text)


def _init(text):
    return DEFAULT_INIT if text is None else initial_from_dict(_json_arg(text))


def _sigma(text, order=None):
    if text is None:
        return ConstantSigma(1.0)
    try:
        return ConstantSigma(float(text))
    except ValueError:
        pass
    d = _json_arg(text)
    if order is not None and d.get("kind") == "cosine_series":
        d["order"] = order
    return sigma_from_dict(d)


def _floats(text):
    return [float(v) for v in text.split(",")]


def _fmt(v):
    return format(float(v), ".17g") if isinstance(v, (float, np.floating)) else str(v)


def _writer(out):
    return csv.writer(out, lineterminator="\n")


def cmd_enumerate(args, out):
    for tr in enumerate_triples(args.n, args.nprime):
        out.write(json.dumps({"alpha": list(tr.alpha), "beta": list(tr.beta), "tau": list(tr.tau)}) + "\n")


def cmd_count(args, out):
    value = count_triples(args.n, args.nprime)
    if args.check:
        enumerated = len(enumerate_triples(args.n, args.nprime))
        out.write(f"{value} {enumerated}\n")
        return 0 if value == enumerated else 1
    out.write(f"{value}\n")


def cmd_moments(args, out):
    init, sigma = _init(args.init), _sigma(args.sigma)
    ts, xs = _floats(args.t), _floats(args.x)
    if isinstance(sigma, ConstantSigma):
        sigma_hat = sigma.gamma
    else:
        pic = picard_solve(init, sigma, max(ts), max_iter=args.iters, mc=MCParams(args.picard_samples, args.seed),
                           delta=args.delta)
        sigma_hat = _FieldSigma(pic.field, sigma, args.delta)
    w = _writer(out)
    w.writerow(["node_t", "node_x", "n", "estimate", "std_error"])
    importance = {"on": True, "off": False, "auto": None}[args.importance]
    for i, t in enumerate(ts):
        for j, x in enumerate(xs):
            for n in range(1, args.order + 1):
                r = moment_formula_mc(n, t, x, init, sigma_hat, MCParams(args.samples, args.seed, importance, (i, j)),
                                      delta=args.delta)
                w.writerow([_fmt(t), _fmt(x), n, _fmt(r.estimate), _fmt(r.std_error)])


def cmd_picard(args, out):
    init = _init(args.init)
    sigma = _sigma(args.sigma or json.dumps({"kind": "cosine_series"}), args.order_N)
    grid = tuple(int(v) for v in args.grid.lower().split("x"))
    res = picard_solve(init, sigma, args.horizon, max_iter=args.iters, tol=args.tol,
                       mc=MCParams(args.samples, args.seed), grid=grid, delta=args.delta, keep_history=False)
    w = _writer(out)
    w.writerow(["t", "x", "n", "value", "std_error"])
    f = res.field
    for a, t in enumerate(f.times):
        for b, x in enumerate(f.xs):
            for n in range(f.order):
                w.writerow([_fmt(t), _fmt(x), n + 1, _fmt(f.values[a, b, n]), _fmt(f.std_errors[a, b, n])])
    if args.diagnostics:
        with open(args.diagnostics, "w") as fh:
            dw = _writer(fh)
            dw.writerow(["k", "sup_difference"])
            for k, h in enumerate(res.diagnostics):
                dw.writerow([k, _fmt(h)])
    print(f"converged={res.converged} iterations={res.iterations}", file=sys.stderr)


_ENSEMBLE_KEYS = {"n", "delta", "replicas", "horizon", "init", "sigma", "seed", "dt", "probe_points",
                  "probe_deltas", "probe_times", "max_power", "estimator", "law_points", "population_cap",
                  "block_size", "initial_count"}


def _ensemble_config(raw) -> EnsembleConfig:
    problems = [f"unknown key {k!r}" for k in sorted(set(raw) - _ENSEMBLE_KEYS)]
    problems += [f"missing key {k!r}" for k in ("seed", "n", "delta", "replicas", "horizon") if k not in raw]
    if problems:
        raise ConfigError(problems)
    d = dict(raw)
    d["init"] = initial_from_dict(d["init"]) if "init" in d else DEFAULT_INIT
    d["sigma"] = sigma_from_dict(d["sigma"]) if "sigma" in d else ConstantSigma(1.0)
    for key in ("probe_points", "probe_deltas", "probe_times"):
        if d.get(key) is not None:
            d[key] = tuple(d[key])
    return EnsembleConfig(**d)


def cmd_simulate(args, out):
    cfg = _ensemble_config(_json_arg(args.config))
    run = run_ensemble(cfg)
    w = _writer(out)
    w.writerow(["t", "replica", "alive_count", "mass"])
    for k, t in enumerate(run.step_times):
        for r in range(cfg.replicas):
            c = int(run.alive[k, r])
            w.writerow([_fmt(t), r, c, _fmt(c / cfg.n)])


def cmd_dual(args, out):
    r = dual_moment_estimate(args.n, args.t, args.x, args.delta, args.gamma, _init(args.init), args.replicas,
                             args.seed, args.method)
    w = _writer(out)
    w.writerow(["estimate", "std_error", "mean_jumps"])
    w.writerow([_fmt(r.estimate), _fmt(r.std_error), _fmt(r.mean_jumps)])


def cmd_validate(args, out):
    cfg = load_config(args.config)
    report = run_validate(cfg)
    csv_text, _ = emit_results(report, args.csv, args.json)
    if args.csv is None:
        out.write(csv_text)
    print("PASS" if report.passed else "FAIL", file=sys.stderr)
    return 0 if report.passed else 1


def build_parser():
    p = argparse.ArgumentParser(prog="mfsbm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("enumerate", help="list index triples as JSON lines")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--nprime", type=int, required=True)
    s.set_defaults(func=cmd_enumerate)

    s = sub.add_parser("count", help="closed-form number of index triples")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--nprime", type=int, required=True)
    s.add_argument("--check", action="store_true", help="also enumerate and compare")
    s.set_defaults(func=cmd_count)

    s = sub.add_parser("moments", help="Monte Carlo moments at (t, x) nodes")
    s.add_argument("--order", type=int, required=True)
    s.add_argument("--t", required=True, help="comma-separated times")
    s.add_argument("--x", required=True, help="comma-separated points")
    s.add_argument("--sigma", help="constant gamma, or coefficient JSON (inline or file)")
    s.add_argument("--init", help="initial density JSON (inline or file)")
    s.add_argument("--samples", type=int, default=20000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--importance", choices=["on", "off", "auto"], default="auto")
    s.add_argument("--delta", type=float, default=0.0)
    s.add_argument("--iters", type=int, default=15, help="Picard iterations for moment-dependent sigma")
    s.add_argument("--picard-samples", type=int, default=1000)
    s.set_defaults(func=cmd_moments)

    s = sub.add_parser("picard", help="Picard iteration for moment-dependent sigma")
    s.add_argument("--order-N", type=int, default=None)
    s.add_argument("--iters", type=int, default=15)
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--grid", default="32x64", help="time nodes x space nodes")
    s.add_argument("--horizon", type=float, default=1.0)
    s.add_argument("--sigma")
    s.add_argument("--init")
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--delta", type=float, default=0.0)
    s.add_argument("--diagnostics", help="CSV path for the per-iteration sup differences")
    s.set_defaults(func=cmd_picard)

    s = sub.add_parser("simulate", help="particle ensemble, per-step CSV")
    s.add_argument("--config", required=True, help="ensemble JSON (inline or file)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("dual", help="dual-process moment estimate")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--x", type=float, required=True)
    s.add_argument("--delta", type=float, required=True)
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--replicas", type=int, default=100000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--init")
    s.add_argument("--method", choices=["conditioned", "plain"], default="conditioned")
    s.set_defaults(func=cmd_dual)

    s = sub.add_parser("validate", help="cross-route validation from a run config")
    s.add_argument("--config", required=True)
    s.add_argument("--csv")
    s.add_argument("--json")
    s.set_defaults(func=cmd_validate)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        code = args.func(args, out)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return 2
    except (MfsbmError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
