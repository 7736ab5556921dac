from __future__ import annotations

import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from dprf.cli import main
from dprf.cli.config import ConfigError, build_config, load_config, parse_config_text
from dprf.cli.report import ResultTable, emit_report, read_results_csv

SMALL_CURVES = """\
# small curves run
experiment = CurvesVsN
data.m = 40
data.d = 3
data.m_test = 30
features.N = 80, 160   # two sizes
features.sigma_omega_sq = 1
privacy.epsilon = 0.5, 1
repetitions = 2
"""


def _write(tmp_path: Path, text: str, name: str = "run.cfg") -> Path:
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def _run(cfg: Path, out: Path, *extra: str) -> int:
    return main(["run", str(cfg), "--out", str(out), *extra])


def test_parse_grammar():
    vals = parse_config_text("experiment = Bound  # trailing\n\nfeatures.N = 1, 2,3\nsvg = yes\n")
    assert vals == {"experiment": "Bound", "features.N": [1, 2, 3], "svg": True}
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("nonsense\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("seed = 1\nseed = 2\n")
    with pytest.raises(ConfigError, match="unknown"):
        parse_config_text("wat = 1\n")
    with pytest.raises(ConfigError, match="expected int"):
        parse_config_text("seed = x\n")


def test_validation_rejects_bad_parameters(tmp_path):
    for bad in ({"privacy.eta": 0.5}, {"privacy.epsilon": [2.0]}, {"features.N": [10]},
                {"data.source": "csv", "data.path": str(tmp_path / "missing.csv")}):
        with pytest.raises(ConfigError):
            build_config({"experiment": "CurvesVsN", **bad})
    with pytest.raises(ConfigError):
        build_config({})


def test_config_error_exit_status(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.cfg")]) == 1
    cfg = _write(tmp_path, "experiment = CurvesVsN\nprivacy.eta = 0.7\n")
    assert main(["run", str(cfg)]) == 1
    assert "config error" in capsys.readouterr().err


def test_runtime_error_marks_manifest_incomplete(tmp_path):
    cfg = _write(tmp_path, "experiment = RealData\n")
    out = tmp_path / "out"
    assert _run(cfg, out) == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["incomplete"] is True
    assert "csv" in manifest["error"]


def test_curves_row_count_and_noiseless_hook(tmp_path):
    cfg = _write(tmp_path, SMALL_CURVES)
    out = tmp_path / "out"
    assert _run(cfg, out, "--set", "privacy.noiseless=true") == 0
    rows = read_results_csv(out / "curves.csv")
    assert len(rows) == 2 * 2 * 4
    assert list(rows[0]) == ["N", "epsilon", "method", "mean", "std", "reps"]
    by_key = {(r["N"], r["epsilon"], r["method"]): r["mean"] for r in rows}
    for N in (80, 160):
        for eps in (0.5, 1):
            assert by_key[(N, eps, "Gaussian")] == by_key[(N, eps, "NonPrivate")]


def test_determinism_byte_identical(tmp_path):
    cfg = _write(tmp_path, SMALL_CURVES)
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(cfg, a, "--svg") == 0
    assert _run(cfg, b, "--svg") == 0
    for name in ("curves.csv", "curves_reps.csv", "curves.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    c = tmp_path / "c"
    assert _run(cfg, c, "--seed", "1") == 0
    assert (a / "curves.csv").read_bytes() != (c / "curves.csv").read_bytes()


def test_manifest_replay(tmp_path):
    cfg = _write(tmp_path, SMALL_CURVES)
    a = tmp_path / "a"
    assert _run(cfg, a) == 0
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["incomplete"] is False
    assert {"python", "numpy", "scipy", "dprf"} <= set(manifest["versions"])
    b = tmp_path / "b"
    assert main(["run", str(a / "manifest.json"), "--out", str(b)]) == 0
    assert (a / "curves.csv").read_bytes() == (b / "curves.csv").read_bytes()


def test_aggregate_matches_repetition_rows(tmp_path):
    cfg = _write(tmp_path, SMALL_CURVES)
    out = tmp_path / "out"
    assert _run(cfg, out) == 0
    reps = read_results_csv(out / "curves_reps.csv")
    for row in read_results_csv(out / "curves.csv"):
        vals = np.array([r["value"] for r in reps
                         if (r["N"], r["epsilon"], r["method"]) == (row["N"], row["epsilon"], row["method"])])
        assert len(vals) == row["reps"]
        assert abs(vals.mean() - row["mean"]) <= 1e-12 * max(1.0, abs(row["mean"]))
        assert abs(vals.std(ddof=1) - row["std"]) <= 1e-12 * max(1.0, abs(row["std"]))


def test_emit_report_round_trip_and_empty(tmp_path):
    t = ResultTable("demo", ("N", "method"), x="N", series=("method",))
    with pytest.raises(ValueError, match="empty"):
        emit_report(t, tmp_path)
    for N, meth, v in [(10, "a", 0.1), (10, "a", 1 / 3), (20, "b", math.pi), (10, "b", 2.0)]:
        t.add((N, meth), v)
    emit_report(t, tmp_path, ["csv", "svg"], log_y=True)
    parsed = read_results_csv(tmp_path / "demo.csv")
    assert parsed == t.aggregate()
    svg = (tmp_path / "demo.svg").read_text()
    assert "<svg" in svg and "method=a" in svg


def test_emit_report_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    t = ResultTable("demo", ("k",))
    t.add((1,), 1.0)
    with pytest.raises(OSError):
        emit_report(t, blocker / "sub")


def test_audit_reports_three_eighths_sensitivity(tmp_path):
    cfg = _write(tmp_path, "experiment = CurvesVsN\ndata.m = 10\ndata.d = 5\nfeatures.N = 4000\n"
                           "repetitions = 1\naudit.trials = 3\naudit.draws = 200\n")
    out = tmp_path / "audit"
    assert main(["audit", str(cfg), "--out", str(out)]) == 0
    rows = read_results_csv(out / "audit.csv")
    bound = next(r for r in rows if r["check"] == "sensitivity_swap" and r["statistic"] == "theoretical_bound")
    assert bound["mean"] == pytest.approx(4 / math.sqrt(4000), rel=1e-14)
    assert round(bound["mean"], 5) == 0.06325
    assert "sensitivity[swap]" in (out / "audit.txt").read_text()


def test_bound_command(tmp_path):
    cfg = _write(tmp_path, "experiment = CurvesVsN\nfeatures.N = 4000, 8000\nbound.m = 100\n")
    out = tmp_path / "bound"
    assert main(["bound", str(cfg), "--out", str(out)]) == 0
    rows = read_results_csv(out / "bound.csv")
    assert len(rows) == 2 * 1 * 1 * 7
    assert "bound_note" in json.loads((out / "manifest.json").read_text())


def test_sample_size_records_condition_warnings(tmp_path):
    cfg = _write(tmp_path, "experiment = SampleSizeSweep\nsweep.m = 20\ndata.d = 3\nrepetitions = 1\n"
                           "privacy.mechanisms = NonPrivate, Gaussian\n")
    out = tmp_path / "ss"
    assert _run(cfg, out) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert any("N below required" in w for w in manifest["warnings"])
    rows = read_results_csv(out / "sample_size.csv")
    assert {r["method"] for r in rows} == {"NonPrivate", "Gaussian"}


def test_fairness_runs(tmp_path):
    base = ("data.d = 3\ndata.group_sizes = 30, 30\nfeatures.N = 120\nrepetitions = 1\n"
            "fairness.perturbations = 10\n")
    out = tmp_path / "erg"
    assert _run(_write(tmp_path, "experiment = FairnessERG\n" + base, "e.cfg"), out) == 0
    rows = read_results_csv(out / "erg.csv")
    assert {r["model"] for r in rows} == {"rf", "linear"}
    traces = [r for r in rows if r["metric"] == "hessian_trace" and r["model"] == "rf"]
    assert all(abs(r["mean"] - 1.0) <= 1e-12 for r in traces)
    out = tmp_path / "sp"
    assert _run(_write(tmp_path, "experiment = FairnessSP\n" + base, "s.cfg"), out) == 0
    rows = read_results_csv(out / "sp.csv")
    assert all(0 <= r["mean"] <= 1 for r in rows)


def test_module_entry_point(tmp_path):
    cfg = _write(tmp_path, "experiment = Bound\nfeatures.N = 1000\nbound.m = 10\n")
    proc = subprocess.run([sys.executable, "-m", "dprf.cli", "bound", str(cfg), "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "bound.csv").is_file()


def test_load_config_overrides(tmp_path):
    cfg = load_config(_write(tmp_path, SMALL_CURVES), {"repetitions": "3", "features.N": "100"})
    assert cfg["repetitions"] == 3 and cfg["features.N"] == [100]
