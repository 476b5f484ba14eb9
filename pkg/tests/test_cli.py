"""Command-line workflows end to end: offline -> correct -> report.

main(argv) is called in-process so exit codes are asserted directly:
0 success, 2 bad configuration, 3 stale/corrupt artifacts, 4 I/O
failures, 5 numerical failures.
"""

import csv
import json
import shutil
import subprocess

import numpy as np
import pytest

from gpdelta import __version__, load_bundle
from gpdelta.cli import main


def _offline(tmp_path, *extra):
    bundle = tmp_path / "b.gpdb"
    pred = tmp_path / "pred.json"
    rc = main(["offline", "--preset", "paper-1d", "--seed", "5",
               "--out", str(bundle), "--pred-out", str(pred), *extra])
    assert rc == 0
    return bundle, pred


def _write_deltas(tmp_path, values, name="d.json"):
    path = tmp_path / name
    path.write_text(json.dumps({"deltas": values}))
    return path


def test_offline_builds_a_loadable_reproducible_bundle(tmp_path, capsys):
    bundle, pred = _offline(tmp_path)
    out = capsys.readouterr().out
    assert "n=11 t=100 p=1" in out
    loaded = load_bundle(bundle)
    assert loaded.meta.n == 11 and loaded.meta.t == 100
    payload = json.loads(pred.read_text())
    assert payload["config"]["mode"] == "paper_diag"
    assert len(payload["prediction"]["mean"]) == 100

    again = tmp_path / "b2.gpdb"
    rc = main(["offline", "--preset", "paper-1d", "--seed", "5", "--out", str(again)])
    assert rc == 0
    assert bundle.read_bytes() == again.read_bytes()


def test_correct_with_zero_deltas_reproduces_prediction_bytes(tmp_path):
    bundle, pred = _offline(tmp_path)
    deltas = _write_deltas(tmp_path, [[0.0]] * 11)
    out = tmp_path / "corrected.json"
    rc = main(["correct", "--preset", "paper-1d", "--seed", "5",
               "--bundle", str(bundle), "--deltas", str(deltas), "--out", str(out)])
    assert rc == 0
    assert out.read_bytes() == pred.read_bytes()


def test_correct_applies_nonzero_deltas(tmp_path):
    bundle, pred = _offline(tmp_path)
    deltas = _write_deltas(tmp_path, [[0.01]] * 11)
    out = tmp_path / "corrected.json"
    rc = main(["correct", "--preset", "paper-1d", "--seed", "5",
               "--bundle", str(bundle), "--deltas", str(deltas), "--out", str(out)])
    assert rc == 0
    before = np.array(json.loads(pred.read_text())["prediction"]["mean"])
    after = np.array(json.loads(out.read_text())["prediction"]["mean"])
    assert np.abs(after - before).max() > 0.0


def test_correct_rejects_changed_measurements(tmp_path):
    bundle, _ = _offline(tmp_path)
    deltas = _write_deltas(tmp_path, [[0.0]] * 11)
    rc = main(["correct", "--preset", "paper-1d", "--seed", "6",
               "--bundle", str(bundle), "--deltas", str(deltas),
               "--out", str(tmp_path / "c.json")])
    assert rc == 3


def test_correct_rejects_changed_kernel(tmp_path):
    bundle, _ = _offline(tmp_path)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"kernel": {"amplitude": 0.2, "length_scale": 0.2,
                                          "noise_std": 0.01, "jitter": 1e-10}}))
    deltas = _write_deltas(tmp_path, [[0.0]] * 11)
    rc = main(["correct", "--preset", "paper-1d", "--seed", "5",
               "--config", str(cfg), "--bundle", str(bundle),
               "--deltas", str(deltas), "--out", str(tmp_path / "c.json")])
    assert rc == 3


def test_correct_rejects_changed_planned_inputs(tmp_path):
    bundle, _ = _offline(tmp_path)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"planned": {"kind": "grid", "low": 0.0,
                                           "high": 1.0, "num": 12}}))
    deltas = _write_deltas(tmp_path, [[0.0]] * 12)
    rc = main(["correct", "--preset", "paper-1d", "--seed", "5",
               "--config", str(cfg), "--bundle", str(bundle),
               "--deltas", str(deltas), "--out", str(tmp_path / "c.json")])
    assert rc == 3


def test_correct_exit_codes_for_bad_inputs(tmp_path):
    bundle, _ = _offline(tmp_path)
    # wrong delta count -> configuration error
    deltas = _write_deltas(tmp_path, [[0.0]] * 7)
    rc = main(["correct", "--preset", "paper-1d", "--seed", "5",
               "--bundle", str(bundle), "--deltas", str(deltas),
               "--out", str(tmp_path / "c.json")])
    assert rc == 2
    # missing deltas entirely
    rc = main(["correct", "--preset", "paper-1d", "--seed", "5",
               "--bundle", str(bundle), "--out", str(tmp_path / "c.json")])
    assert rc == 2
    # missing bundle file -> I/O error
    good = _write_deltas(tmp_path, [[0.0]] * 11, "d2.json")
    rc = main(["correct", "--preset", "paper-1d", "--seed", "5",
               "--bundle", str(tmp_path / "nope.gpdb"), "--deltas", str(good),
               "--out", str(tmp_path / "c.json")])
    assert rc == 4
    # corrupt bundle file -> stale/corrupt artifact error
    bad = tmp_path / "bad.gpdb"
    bad.write_bytes(bundle.read_bytes()[:40])
    rc = main(["correct", "--preset", "paper-1d", "--seed", "5",
               "--bundle", str(bad), "--deltas", str(good),
               "--out", str(tmp_path / "c.json")])
    assert rc == 3


def test_offline_numerical_failure_exit_code(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "kernel": {"amplitude": 0.1, "length_scale": 0.2,
                   "noise_std": 0.0, "jitter": 0.0},
        "planned": {"kind": "explicit", "points": [[0.0], [0.5], [0.5]]},
        "measurements": [0.0, 1.0, 1.0],
    }))
    rc = main(["offline", "--preset", "paper-1d", "--config", str(cfg),
               "--out", str(tmp_path / "b.gpdb")])
    assert rc == 5


def test_simulate_json_report_and_determinism(tmp_path):
    r1, r2 = tmp_path / "r1.json", tmp_path / "r2.json"
    for path in (r1, r2):
        rc = main(["simulate", "--preset", "paper-1d", "--trials", "3",
                   "--seed", "42", "--out", str(path)])
        assert rc == 0
    a, b = json.loads(r1.read_text()), json.loads(r2.read_text())
    a.pop("timings"), b.pop("timings")
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    assert a["n_trials"] == 3
    assert a["config"]["trials"] == 3


def test_simulate_csv_report(tmp_path):
    out = tmp_path / "r.csv"
    rc = main(["simulate", "--preset", "paper-1d", "--trials", "3",
               "--seed", "1", "--format", "csv", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    header = [ln for ln in lines if ln.startswith("#")]
    assert any(ln.startswith("# software_version:") for ln in header)
    assert any(ln.startswith("# config:") for ln in header)
    rows = list(csv.DictReader(ln for ln in lines if not ln.startswith("#")))
    assert len(rows) == 3
    assert {"seed", "improvement_pct", "t_retrain_s"} <= set(rows[0])


def test_simulate_rejects_bad_trials():
    assert main(["simulate", "--preset", "paper-1d", "--trials", "0"]) == 2


def test_bench_outputs_tables(tmp_path):
    out_json = tmp_path / "bench.json"
    rc = main(["bench", "--n", "20,40", "--t", "5", "--repeats", "3",
               "--out", str(out_json)])
    assert rc == 0
    doc = json.loads(out_json.read_text())
    assert [row["n"] for row in doc["rows"]] == [20, 40]
    assert doc["slopes"]["t_fixed"] == 5

    out_csv = tmp_path / "bench.csv"
    rc = main(["bench", "--n", "20", "--t", "5", "--repeats", "3",
               "--format", "csv", "--out", str(out_csv)])
    assert rc == 0
    lines = out_csv.read_text().splitlines()
    rows = list(csv.DictReader(ln for ln in lines if not ln.startswith("#")))
    assert len(rows) == 1 and rows[0]["n"] == "20"


def test_audit_passes_and_reports(tmp_path, capsys):
    out = tmp_path / "audit.json"
    rc = main(["audit", "--n", "7", "--t", "4", "--seed", "3", "--out", str(out)])
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "AUDIT PASS" in stdout
    assert stdout.count("max_rel_err") == 4
    doc = json.loads(out.read_text())
    assert doc["pass"] is True and len(doc["results"]) == 4


def test_audit_covers_the_full_hessian_mode(capsys):
    rc = main(["audit", "--n", "5", "--p", "2", "--t", "3", "--seed", "2",
               "--mode", "full-hessian"])
    assert rc == 0
    assert capsys.readouterr().out.count("max_rel_err") == 5


def test_report_builds_tidy_band_table(tmp_path):
    bundle, pred = _offline(tmp_path)
    deltas = _write_deltas(tmp_path, [[0.01]] * 11)
    corrected = tmp_path / "corrected.json"
    main(["correct", "--preset", "paper-1d", "--seed", "5",
          "--bundle", str(bundle), "--deltas", str(deltas), "--out", str(corrected)])
    out = tmp_path / "fig.csv"
    rc = main(["report", str(pred), str(corrected),
               "--series", "uncorrected,corrected", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    rows = list(csv.DictReader(ln for ln in lines if not ln.startswith("#")))
    assert list(rows[0]) == ["x", "mean", "lower", "upper", "series"]
    assert len(rows) == 200
    series = {row["series"] for row in rows}
    assert series == {"uncorrected", "corrected"}
    for row in rows:
        assert float(row["lower"]) <= float(row["mean"]) <= float(row["upper"])
    xs = [float(r["x"]) for r in rows if r["series"] == "uncorrected"]
    assert xs == sorted(xs)


def test_report_missing_input_file(tmp_path):
    rc = main(["report", str(tmp_path / "nope.json"), "--out", str(tmp_path / "f.csv")])
    assert rc == 4


def test_unknown_preset_is_an_argparse_error(tmp_path):
    with pytest.raises(SystemExit):
        main(["simulate", "--preset", "paper-9d"])


def test_console_script_is_installed():
    exe = shutil.which("gpdelta")
    assert exe, "gpdelta console script not on PATH"
    proc = subprocess.run([exe, "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip() == f"gpdelta {__version__}"
