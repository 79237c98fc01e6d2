import csv
import io
import json
import subprocess
import sys

import pytest
from mpmath import mp

from neutralstab.cli import main


def write(tmp_path, name, payload):
    p = tmp_path / name
    p.write_text(payload if isinstance(payload, str) else json.dumps(payload))
    return str(p)


SCALAR_STABLE = {"A0": [[-2.0]], "A1": [[0.5]], "D": [[0.2]], "h": 1.0}
SCALAR_UNSTABLE = {"A0": [[1.0]], "A1": [[0.0]], "D": [[0.0]], "h": 1.0}


def test_analyze_stable(tmp_path, capsys):
    cfg = write(tmp_path, "s.json", dict(SCALAR_STABLE, precision_digits=32))
    out = tmp_path / "r.json"
    assert main(["analyze", cfg, "-o", str(out)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["verdict"] == "Stable"
    assert json.loads(out.read_text()) == printed
    assert printed["precision_digits"] == 32


def test_analyze_unstable(tmp_path, capsys):
    assert main(["analyze", write(tmp_path, "u.json", SCALAR_UNSTABLE), "--precision", "32"]) == 1
    assert json.loads(capsys.readouterr().out)["verdict"] == "Unstable"


def test_analyze_inconclusive_when_precision_too_low(tmp_path, capsys):
    cfg = write(tmp_path, "e1.json", {"A0": [[0.8]], "A1": [[-1.2]], "D": [[-0.3]], "h": 1.0})
    code = main(["analyze", cfg, "--precision", "16", "--order", "20", "--no-ladder"])
    assert code == 2
    assert "digits are needed" in json.loads(capsys.readouterr().out)["message"]


def test_analyze_auto_precision(tmp_path, capsys):
    cfg = write(tmp_path, "e1.json", {"A0": [[0.8]], "A1": [[-1.2]], "D": [[-0.3]], "h": 1.0})
    assert main(["analyze", cfg, "--precision", "auto"]) == 0
    assert json.loads(capsys.readouterr().out)["precision_check"]["ok"]


def test_flag_overrides_config_precision(tmp_path, capsys):
    cfg = write(tmp_path, "s.json", dict(SCALAR_STABLE, precision_digits=20))
    main(["analyze", cfg, "--precision", "28"])
    assert json.loads(capsys.readouterr().out)["precision_digits"] == 28


def test_assumption_violation_exit_3(tmp_path, capsys):
    cfg = write(tmp_path, "bad.json", {"A0": [[-1.0]], "A1": [[0.0]], "D": [[1.2]], "h": 1.0})
    assert main(["analyze", cfg]) == 3
    assert "‖D‖<1 violated" in capsys.readouterr().err


def test_malformed_config_exit_3(tmp_path, capsys):
    cfg = write(tmp_path, "bad.json", '{"A0": [[1]],\n "h": ,}')
    assert main(["analyze", cfg]) == 3
    assert "line 2" in capsys.readouterr().err


def test_missing_file_exit_3(tmp_path, capsys):
    assert main(["analyze", str(tmp_path / "nope.json")]) == 3


def test_bad_precision_flag(tmp_path):
    with pytest.raises(SystemExit):
        main(["analyze", write(tmp_path, "s.json", SCALAR_STABLE), "--precision", "lots"])


def test_lyap_delay_free(tmp_path, capsys):
    cfg = write(tmp_path, "df.json", {"A0": [[-1.0]], "A1": [[0.0]], "D": [[0.0]], "h": 1.0,
                                      "precision_digits": 32})
    assert main(["lyap", cfg, "--grid", "3"]) == 0
    cap = capsys.readouterr()
    rows = list(csv.reader(io.StringIO(cap.out)))
    assert rows[0] == ["theta", "U00"]
    assert [float(r[0]) for r in rows[1:]] == [0.0, 0.5, 1.0]
    with mp.workdps(32):
        assert abs(mp.mpf(rows[2][1]) - mp.exp(-0.5) / 2) < mp.mpf(10) ** -30
    assert "dynamic" in cap.err and "algebraic" in cap.err


def test_lyap_to_file(tmp_path, capsys):
    cfg = write(tmp_path, "s.json", SCALAR_STABLE)
    out = tmp_path / "u.csv"
    assert main(["lyap", cfg, "--grid", "5", "-o", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 6
    assert "symmetry" in capsys.readouterr().out


def test_nstar(tmp_path, capsys):
    cfg = write(tmp_path, "ex2.json", {"example2": {"kp": 1, "ki": 1}, "precision_digits": 32})
    assert main(["nstar", cfg]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["N_star"] == 27
    assert main(["nstar", cfg, "--nstar-rule", "max"]) == 0
    assert json.loads(capsys.readouterr().out)["N_star"] > 100


def test_verify_agrees(tmp_path, capsys):
    cfg = write(tmp_path, "s.json", dict(SCALAR_STABLE, precision_digits=32))
    assert main(["verify", cfg]) == 0
    assert "agreement: all Stable" in capsys.readouterr().out


def sweep_spec(tmp_path):
    base = write(tmp_path, "base.json", {"A0": [[0.0]], "A1": [[0.0]], "D": [[-0.3]], "h": 1.0})
    return write(tmp_path, "sweep.json", {
        "base": "base.json", "precision_digits": 24,
        "p1": {"path": "A0[0][0]", "values": [-2.0, 0.5]},
        "p2": {"path": "D[0][0]", "values": [0.2, 1.5]}})


def test_sweep_rows(tmp_path, capsys):
    spec = sweep_spec(tmp_path)
    out = tmp_path / "map.csv"
    assert main(["sweep", spec, "-o", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["verdict"] for r in rows] == ["Stable", "Invalid", "Unstable", "Invalid"]
    assert all(r["wall_ms"] == "" for r in rows)
    assert "‖D‖<1" in rows[1]["note"]


def test_sweep_jobs_and_timing(tmp_path, capsys):
    spec = sweep_spec(tmp_path)
    main(["sweep", spec])
    serial = capsys.readouterr().out
    main(["sweep", spec, "--jobs", "2"])
    assert capsys.readouterr().out == serial
    main(["sweep", spec, "--timing"])
    timed = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert all(r["wall_ms"].isdigit() for r in timed)


def test_sweep_bad_path(tmp_path, capsys):
    base = write(tmp_path, "base.json", SCALAR_STABLE)
    spec = write(tmp_path, "sw.json", {"base": "base.json",
                                       "p1": {"path": "A7[0][0]", "values": [1]},
                                       "p2": {"path": "h", "values": [1]}})
    assert main(["sweep", spec]) == 3


def test_console_script(tmp_path):
    cfg = write(tmp_path, "u.json", SCALAR_UNSTABLE)
    res = subprocess.run([sys.executable, "-m", "neutralstab.cli", "analyze", cfg],
                         capture_output=True, text=True)
    assert res.returncode == 1
    assert json.loads(res.stdout)["verdict"] == "Unstable"
