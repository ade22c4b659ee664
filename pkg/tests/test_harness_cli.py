import csv
import io
import json
import math

import pytest

from mfsbm.cli import main
from mfsbm.errors import ConfigError
from mfsbm.harness import RunConfig, ValidationReport, emit_results, fingerprint, load_config, run_validate

UNIT = {"kind": "gaussian_mixture", "weights": [1.0], "means": [0.0], "variances": [1.0]}
MINIMAL = {"seed": 3, "init": UNIT, "sigma": {"kind": "constant", "gamma": 1.0}, "probes": [{"t": 1.0, "x": 0.0, "n": 2}]}
SMALL = dict(MINIMAL, formula={"samples": 4000}, particles={"n": 5, "replicas": 2000}, dual={"replicas": 4000})


def test_minimal_config_gets_defaults():
    cfg = RunConfig.from_dict(MINIMAL)
    assert cfg.delta == 0.02 and cfg.threshold == 3.0
    assert cfg.routes == ("formula", "classical", "particle", "dual")
    assert cfg.probe_list() == [{"n": 2, "t": 1.0, "x": 0.0}]


def test_config_violations_are_all_reported():
    bad = dict(MINIMAL, probes=[{"t": 1.0, "x": 0.0, "n": 9}], colour="blue")
    del bad["seed"]
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(bad)
    text = " | ".join(info.value.violations)
    assert "seed" in text and "colour" in text and "probes/0/n" in text
    with pytest.raises(ConfigError):
        RunConfig.from_dict(dict(MINIMAL, sigma={"kind": "quadratic"}))


def test_config_round_trip(tmp_path):
    full = dict(SMALL, routes=["formula", "dual"], extrapolate={"deltas": [0.04, 0.02, 0.01]})
    cfg = RunConfig.from_dict(full)
    again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg and fingerprint(again) == fingerprint(cfg)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(full))
    assert load_config(path) == cfg
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)


def test_empty_probe_list_gives_header_only_csv():
    report = run_validate(RunConfig.from_dict(dict(MINIMAL, probes=[])))
    csv_text, _ = emit_results(report)
    assert csv_text.count("\n") == 1 and csv_text.startswith("section,fingerprint,")


def test_non_finite_entry_fails_report():
    est = {"route": "formula", "t": 1.0, "x": 0.0, "n": 2, "delta": 0.02, "estimate": math.nan, "std_error": 0.1}
    assert not ValidationReport([est], [], 3.0, "abc").passed
    assert ValidationReport([dict(est, estimate=0.2)], [], 3.0, "abc").passed


def test_constant_config_validates_and_reruns_identically(tmp_path):
    cfg = RunConfig.from_dict(SMALL)
    a, b = run_validate(cfg), run_validate(cfg)
    assert a.passed
    routes = {e["route"] for e in a.estimates}
    assert routes == {"formula", "classical", "particle", "dual"}
    assert len(a.comparisons) == 6
    ca, ja = emit_results(a, tmp_path / "a.csv", tmp_path / "a.json")
    cb, jb = emit_results(b)
    assert ca == cb and ja == jb
    assert (tmp_path / "a.csv").read_text() == ca
    rows = list(csv.DictReader(io.StringIO(ca)))
    doc = json.loads(ja)
    values = [float(r["value"]) for r in rows if r["section"] == "estimate"]
    assert values == [e["estimate"] for e in doc["estimates"]]


def test_zero_coefficient_routes_agree_with_heat_flow():
    cfg = RunConfig.from_dict(dict(SMALL, sigma={"kind": "constant", "gamma": 0.0}))
    report = run_validate(cfg)
    assert report.passed
    heat = 0.0
    from mfsbm.kernels import initial_from_dict
    heat = initial_from_dict(UNIT).convolve(1.02, 0.0) ** 2
    for e in report.estimates:
        if e["route"] == "particle":
            assert abs(e["estimate"] - heat) < 3 * e["std_error"]
        else:
            assert e["estimate"] == pytest.approx(heat, rel=1e-12)


def run_cli(*argv):
    out = io.StringIO()
    code = main(list(argv), out=out)
    return code, out.getvalue()


def test_cli_enumerate_and_count():
    code, text = run_cli("enumerate", "--n", "3", "--nprime", "1")
    lines = [json.loads(s) for s in text.splitlines()]
    assert code == 0 and len(lines) == 3 and all(len(d["tau"]) == 2 for d in lines)
    assert run_cli("count", "--n", "6", "--nprime", "5", "--check") == (0, "2700 2700\n")
    assert run_cli("count", "--n", "3", "--nprime", "3")[0] == 3


def test_cli_moments_and_dual():
    code, text = run_cli("moments", "--order", "2", "--t", "0.5,1", "--x", "0", "--samples", "500")
    rows = list(csv.DictReader(io.StringIO(text)))
    assert code == 0 and list(rows[0]) == ["node_t", "node_x", "n", "estimate", "std_error"] and len(rows) == 4
    code, text = run_cli("dual", "--n", "2", "--t", "1", "--x", "0", "--delta", "0.05", "--replicas", "500")
    rows = list(csv.DictReader(io.StringIO(text)))
    assert code == 0 and list(rows[0]) == ["estimate", "std_error", "mean_jumps"]


def test_cli_picard(tmp_path):
    diag = tmp_path / "diag.csv"
    code, text = run_cli("picard", "--order-N", "2", "--iters", "3", "--grid", "3x5", "--samples", "50",
                         "--diagnostics", str(diag))
    assert code == 0 and len(text.splitlines()) == 1 + 3 * 5 * 2
    assert diag.read_text().startswith("k,sup_difference")


def test_cli_simulate():
    cfg = json.dumps({"seed": 1, "n": 2, "delta": 0.1, "replicas": 3, "horizon": 0.2})
    code, text = run_cli("simulate", "--config", cfg)
    rows = list(csv.DictReader(io.StringIO(text)))
    assert code == 0 and set(rows[0]) == {"t", "replica", "alive_count", "mass"}
    assert all(float(r["mass"]) == int(r["alive_count"]) / 2 for r in rows)
    assert run_cli("simulate", "--config", json.dumps({"n": 2}))[0] == 2


def test_cli_validate(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(dict(SMALL, routes=["formula", "classical"])))
    code, _ = run_cli("validate", "--config", str(path), "--csv", str(tmp_path / "r.csv"))
    assert code == 0 and (tmp_path / "r.csv").exists()
    path.write_text(json.dumps({"seed": 1}))
    assert run_cli("validate", "--config", str(path))[0] == 2
    assert "config error" in capsys.readouterr().err
