import csv
import json
import subprocess
import sys

import pytest

from transmon_pe import cli
from transmon_pe.estimators import EstimationTrace
from transmon_pe.passport import load_passport

SMALL = {
    "passport": {"n_flux": 41, "n_tau": 121, "phi_step": 6.3745e-5, "seed": 3},
    "estimator": {"kind": "kitaev", "steps": 4, "tolerance": 0.05},
    "ensemble": {"repeats": 2, "flux_indices": [0, 10, 20, 30, 40]},
    "run": {"flux_index": 12},
}


@pytest.fixture
def workdir(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    out = tmp_path / "out"
    assert cli.main(["passport", "--config", str(cfg), "--out", str(out)]) == 0
    return cfg, out


def read_bytes(directory):
    return {p.relative_to(directory): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def test_default_passport_dimensions(tmp_path):
    assert cli.main(["passport", "--out", str(tmp_path)]) == 0
    grid = load_passport(tmp_path / "passport.json")
    assert grid.values.shape == (241, 161)
    assert not grid.distortion.is_ideal
    resolved = json.loads((tmp_path / "config.json").read_text())
    assert resolved["seed"] == 0 and "trace_schema_version" in resolved


def test_ideal_flag(tmp_path):
    assert cli.main(["passport", "--ideal", "--out", str(tmp_path)]) == 0
    grid = load_passport(tmp_path / "passport.json")
    assert grid.distortion.is_ideal and grid.n_pass is None


def test_existing_target_needs_force(workdir):
    cfg, out = workdir
    assert cli.main(["passport", "--config", str(cfg), "--out", str(out)]) == 2
    assert cli.main(["passport", "--config", str(cfg), "--out", str(out), "--force"]) == 0


def test_bad_config_is_usage_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"passport": {"tau_step_ns": 0}}))
    assert cli.main(["passport", "--config", str(bad), "--out", str(tmp_path)]) == 2
    bad.write_text(json.dumps({"passport": {"n_flux": 41, "bogus": 1}}))
    assert cli.main(["passport", "--config", str(bad), "--out", str(tmp_path)]) == 2
    bad.write_text("{not json")
    assert cli.main(["passport", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert cli.main(["passport", "--config", str(tmp_path / "missing.json")]) == 2
    assert cli.main(["frobnicate"]) == 2


def test_run_writes_outputs(workdir):
    cfg, out = workdir
    assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--seed", "5"]) == 0
    trace = EstimationTrace.load(out / "trace.json")
    assert trace.procedure == "kitaev" and trace.seed == 5 and trace.true_index == 12
    with open(out / "outcomes.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "tau_ns", "h_N", "m", "t_us", "tau_phi_us"]
    assert len(rows) - 1 == trace.ledger["calls"]
    with open(out / "posterior_evolution.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) - 1 == 41 * len(trace.steps)
    resolved = cli.load_config(out / "config.json")
    assert resolved.seed == 5 and resolved.to_dict()["estimator"] == SMALL["estimator"]


def test_run_without_passport(tmp_path):
    assert cli.main(["run", "--out", str(tmp_path / "empty")]) == 2


def test_run_nonconvergence_exit_code(workdir, tmp_path):
    cfg, out = workdir
    doc = dict(SMALL, estimator={"kind": "kitaev", "steps": 4, "tolerance": 0.001, "max_calls_per_step": 1})
    capped = tmp_path / "capped.json"
    capped.write_text(json.dumps(doc))
    assert cli.main(["run", "--config", str(capped), "--out", str(out)]) == 1


def test_ensemble_is_byte_identical_on_rerun(workdir):
    cfg, out = workdir
    assert cli.main(["ensemble", "--config", str(cfg), "--out", str(out), "--seed", "2"]) == 0
    first = read_bytes(out)
    assert cli.main(["ensemble", "--config", str(cfg), "--out", str(out), "--seed", "2", "--force"]) == 0
    assert read_bytes(out) == first
    assert len(list((out / "traces").glob("*.json"))) == 10
    ens = json.loads((out / "ensemble.json").read_text())
    assert len(ens["runs"]) == 10


def test_ensemble_parallel_matches_serial(workdir, tmp_path):
    cfg, out = workdir
    assert cli.main(["ensemble", "--config", str(cfg), "--out", str(out)]) == 0
    doc = json.loads(json.dumps(SMALL))
    doc["ensemble"]["workers"] = 2
    doc["passport"]["file"] = str(out / "passport.json")
    par_cfg = tmp_path / "par.json"
    par_cfg.write_text(json.dumps(doc))
    par = tmp_path / "par"
    assert cli.main(["ensemble", "--config", str(par_cfg), "--out", str(par)]) == 0
    assert (out / "ensemble.json").read_bytes() == (par / "ensemble.json").read_bytes()


def test_analyze(workdir, tmp_path):
    cfg, out = workdir
    assert cli.main(["ensemble", "--config", str(cfg), "--out", str(out)]) == 0
    report_dir = tmp_path / "report"
    code = cli.main(["analyze", str(out), "--out", str(report_dir), "--trace", "flux010_rep001.json"])
    assert code == 0
    report = json.loads((report_dir / "report.json").read_text())
    entry = report["ensembles"][0]
    assert entry["runs"] == 10
    assert len(entry["resolution"]["t_s"]) == 4
    assert "exponent" in entry["info_gain"]
    assert (report_dir / "out_resolution.csv").exists()
    assert (report_dir / "out_info_gain.csv").exists()
    assert report["posterior_evolution_source"].endswith("flux010_rep001.json")


def test_analyze_errors(tmp_path, workdir):
    cfg, out = workdir
    empty = tmp_path / "empty"
    empty.mkdir()
    assert cli.main(["analyze", str(empty), "--out", str(tmp_path / "r1")]) == 2
    assert cli.main(["analyze", "--out", str(tmp_path / "r2")]) == 2
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    doc = json.loads((out / "trace.json").read_text())
    doc["schema_version"] = 99
    (out / "trace.json").write_text(json.dumps(doc))
    assert cli.main(["analyze", str(out), "--out", str(tmp_path / "r3")]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "transmon_pe", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for name in ("passport", "run", "ensemble", "analyze"):
        assert name in res.stdout
