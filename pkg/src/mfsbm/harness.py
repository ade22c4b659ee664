"""Run configuration, cross-route validation and deterministic report output."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from ._backend import BACKEND
from .dual import dual_extrapolate, dual_moment_estimate
from .errors import ConfigError
from .kernels import initial_from_dict
from .moments import (ConstantSigma, MCParams, _FieldSigma, classical_second_moment, moment_formula_mc,
                      picard_solve, sigma_from_dict, worker_count)
from .particles import EnsembleConfig, empirical_moment, run_ensemble

__all__ = ["RunConfig", "load_config", "ValidationReport", "run_validate", "emit_results", "fingerprint",
           "CONFIG_SCHEMA"]

ROUTES = ("formula", "classical", "particle", "dual")

_number = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_count = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["seed", "init", "sigma", "probes"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "init": {"type": "object"},
        "sigma": {"type": "object"},
        "delta": _pos,
        "probes": {
            "type": "array",
            "items": {"type": "object", "additionalProperties": False, "required": ["t", "x", "n"],
                      "properties": {"t": _pos, "x": _number, "n": {"type": "integer", "minimum": 1,
                                                                      "maximum": 6}}},
        },
        "routes": {"type": "array", "items": {"enum": list(ROUTES)}, "uniqueItems": True},
        "threshold": _pos,
        "formula": {"type": "object", "additionalProperties": False,
                    "properties": {"samples": _count, "importance": {"type": ["boolean", "null"]}}},
        "particles": {"type": "object", "additionalProperties": False,
                      "properties": {"n": _count, "replicas": _count, "dt": _pos, "block_size": _count,
                                     "population_cap": _count, "estimator": {"enum": ["factorial", "power"]},
                                     "initial_count": {"enum": ["poisson", "fixed"]}}},
        "dual": {"type": "object", "additionalProperties": False,
                 "properties": {"replicas": _count, "method": {"enum": ["conditioned", "plain"]}}},
        "picard": {"type": "object", "additionalProperties": False,
                   "properties": {"max_iter": _count, "tol": _pos, "samples": _count,
                                  "grid": {"type": "array", "items": {"type": "integer", "minimum": 2},
                                           "minItems": 2, "maxItems": 2}}},
        "extrapolate": {"type": "object", "additionalProperties": False,
                        "properties": {"deltas": {"type": "array", "items": _pos, "minItems": 2}}},
    },
}


@dataclass(frozen=True)
class RunConfig:
    seed: int
    init: dict
    sigma: dict
    probes: tuple
    delta: float = 0.02
    routes: tuple = ROUTES
    threshold: float = 3.0
    formula: dict = field(default_factory=dict)
    particles: dict = field(default_factory=dict)
    dual: dict = field(default_factory=dict)
    picard: dict = field(default_factory=dict)
    extrapolate: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> RunConfig:
        validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
        errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
        problems = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
        if not problems:
            for key, build in (("init", initial_from_dict), ("sigma", sigma_from_dict)):
                try:
                    build(raw[key])
                except (TypeError, ValueError) as exc:
                    problems.append(f"{key}: {exc}")
        if problems:
            raise ConfigError(problems)
        data = dict(raw)
        data["probes"] = tuple(tuple(sorted(p.items())) for p in raw["probes"])
        if "routes" in data:
            data["routes"] = tuple(data["routes"])
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["probes"] = [dict(p) for p in self.probes]
        d["routes"] = list(self.routes)
        return d

    @property
    def init_density(self):
        return initial_from_dict(self.init)

    @property
    def coefficient(self):
        return sigma_from_dict(self.sigma)

    def probe_list(self):
        return [dict(p) for p in self.probes]


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"invalid JSON: {exc}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["configuration must be a JSON object"])
    return RunConfig.from_dict(raw)


def fingerprint(cfg: RunConfig) -> str:
    canon = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass
class ValidationReport:
    estimates: list  # dicts: route, t, x, n, delta, estimate, std_error
    comparisons: list  # dicts: route_a, route_b, t, x, n, delta, difference, combined_se, z, passed
    threshold: float
    fingerprint: str
    metadata: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        finite = all(math.isfinite(e["estimate"]) and math.isfinite(e["std_error"]) for e in self.estimates)
        return finite and all(c["passed"] for c in self.comparisons)


def _compare(a, b, threshold):
    diff = a["estimate"] - b["estimate"]
    se = math.hypot(a["std_error"], b["std_error"])
    if se > 0:
        z = diff / se
    else:
        z = 0.0 if abs(diff) <= 1e-12 * max(1.0, abs(a["estimate"])) else math.inf
    ok = math.isfinite(diff) and math.isfinite(z) and abs(z) <= threshold
    return {"route_a": a["route"], "route_b": b["route"], "t": a["t"], "x": a["x"], "n": a["n"],
            "delta": a["delta"], "difference": diff, "combined_se": se, "z": z, "passed": bool(ok)}


def run_validate(cfg: RunConfig) -> ValidationReport:
    """Estimate every probe moment by each requested route and compare all pairs."""
    init, sigma, delta = cfg.init_density, cfg.coefficient, cfg.delta
    probes = cfg.probe_list()
    constant = isinstance(sigma, ConstantSigma)
    rows = []

    def add(route, p, est, se, d=delta):
        rows.append({"route": route, "t": float(p["t"]), "x": float(p["x"]), "n": int(p["n"]), "delta": d,
                     "estimate": float(est), "std_error": float(se)})

    meta = {"package_version": __version__, "backend": BACKEND, "workers": worker_count()}
    if not probes:
        return ValidationReport([], [], cfg.threshold, fingerprint(cfg), meta)
    samples = cfg.formula.get("samples", 20000)
    importance = cfg.formula.get("importance")
    if "formula" in cfg.routes:
        if constant:
            sigma_hat = sigma.gamma
        else:
            pc = cfg.picard
            horizon = max(p["t"] for p in probes)
            pic = picard_solve(init, sigma, horizon, max_iter=pc.get("max_iter", 15), tol=pc.get("tol", 1e-10),
                               mc=MCParams(pc.get("samples", 1000), cfg.seed, None, (7,)),
                               grid=tuple(pc.get("grid", (32, 64))), delta=delta)
            sigma_hat = _FieldSigma(pic.field, sigma, delta)
        for i, p in enumerate(probes):
            r = moment_formula_mc(p["n"], p["t"], p["x"], init, sigma_hat,
                                  MCParams(samples, cfg.seed, importance, (1, i)), delta=delta)
            add("formula", p, r.estimate, r.std_error)
    if "classical" in cfg.routes and constant:
        for p in probes:
            if p["n"] == 1:
                add("classical", p, init.convolve(p["t"] + delta, p["x"]), 0.0)
            elif p["n"] == 2:
                add("classical", p, classical_second_moment(p["t"], p["x"], sigma.gamma, init, delta), 0.0)
    if "particle" in cfg.routes:
        pc = cfg.particles
        ens = EnsembleConfig(
            n=pc.get("n", 10), delta=delta, replicas=pc.get("replicas", 20000),
            horizon=max(p["t"] for p in probes), init=init, sigma=sigma, seed=cfg.seed, dt=pc.get("dt"),
            probe_points=tuple(sorted({float(p["x"]) for p in probes})),
            probe_times=tuple(sorted({float(p["t"]) for p in probes})),
            max_power=max(p["n"] for p in probes), estimator=pc.get("estimator", "factorial"),
            block_size=pc.get("block_size", 4096), population_cap=pc.get("population_cap", 1_000_000),
            initial_count=pc.get("initial_count", "poisson"))
        run = run_ensemble(ens)
        for p in probes:
            add("particle", p, *empirical_moment(run, p["t"], p["x"], p["n"], estimator=ens.estimator))
    if "dual" in cfg.routes and constant:
        dc = cfg.dual
        for i, p in enumerate(probes):
            r = dual_moment_estimate(p["n"], p["t"], p["x"], delta, sigma.gamma, init, dc.get("replicas", 100000),
                                     cfg.seed + i, dc.get("method", "conditioned"))
            add("dual", p, r.estimate, r.std_error)
    comparisons = []
    keyed = {}
    for r in rows:
        keyed.setdefault((r["t"], r["x"], r["n"]), []).append(r)
    for group in keyed.values():
        for a, b in combinations(group, 2):
            comparisons.append(_compare(a, b, cfg.threshold))
    # delta -> 0 extrapolation, reported separately from the matched-width comparisons
    extra = []
    if cfg.extrapolate and constant:
        deltas = tuple(cfg.extrapolate["deltas"])
        for i, p in enumerate(probes):
            r = dual_extrapolate(p["n"], p["t"], p["x"], sigma.gamma, init, deltas,
                                 cfg.dual.get("replicas", 100000), cfg.seed + 1000 + i)
            rows.append({"route": "dual_extrapolated", "t": float(p["t"]), "x": float(p["x"]), "n": int(p["n"]),
                         "delta": 0.0, "estimate": r.estimate, "std_error": r.std_error})
            if p["n"] == 2:
                ref = {"route": "classical_limit", "t": float(p["t"]), "x": float(p["x"]), "n": 2, "delta": 0.0,
                       "estimate": classical_second_moment(p["t"], p["x"], sigma.gamma, init), "std_error": 0.0}
                rows.append(ref)
                extra.append(_compare(rows[-2], ref, cfg.threshold))
    comparisons.extend(extra)
    return ValidationReport(rows, comparisons, cfg.threshold, fingerprint(cfg), meta)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def emit_results(report: ValidationReport, csv_path=None, json_path=None) -> tuple:
    """Write the report as CSV and/or JSON; returns the (csv, json) text.

    Floats use 17 significant digits, columns and keys have a fixed order, and
    nothing time-dependent is written, so reruns are byte-identical.
    """
    cols = ["section", "fingerprint", "route_a", "route_b", "t", "x", "n", "delta", "value", "std_error", "z",
            "passed"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for e in report.estimates:
        w.writerow([_fmt(v) for v in ("estimate", report.fingerprint, e["route"], "", e["t"], e["x"], e["n"],
                                      e["delta"], e["estimate"], e["std_error"], "", "")])
    for c in report.comparisons:
        w.writerow([_fmt(v) for v in ("comparison", report.fingerprint, c["route_a"], c["route_b"], c["t"], c["x"],
                                      c["n"], c["delta"], c["difference"], c["combined_se"], c["z"], c["passed"])])
    csv_text = buf.getvalue()

    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, list):
            return [clean(v) for v in obj]
        if isinstance(obj, (float, np.floating)):
            v = float(obj)
            return float(format(v, ".17g")) if math.isfinite(v) else str(v)
        return obj

    doc = {"fingerprint": report.fingerprint, "threshold": report.threshold, "passed": report.passed,
           "metadata": report.metadata, "estimates": clean(report.estimates),
           "comparisons": clean(report.comparisons)}
    json_text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if csv_path is not None:
        Path(csv_path).write_text(csv_text)
    if json_path is not None:
        Path(json_path).write_text(json_text)
    return csv_text, json_text
