import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from ktree.cli import main, run
from ktree.report import dumps, normalize, to_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def cfg(name):
    return str(CONFIGS / name)


def load(text):
    return json.loads(text)


def test_dumps_formats():
    text = dumps({"a": 0.1, "b": math.inf, "c": 1 + 2j, "d": np.float64(3.0), "e": [1, 2], "f": None})
    doc = load(text)
    assert doc["a"] == 0.1 and doc["b"] == "inf" and doc["c"] == {"re": 1.0, "im": 2.0}
    assert '"a": 0.10000000000000001' in text
    assert float(load(dumps({"x": 1 / 3}))["x"]) == 1 / 3
    assert dumps({"z": 1, "a": 2}).index('"z"') < dumps({"z": 1, "a": 2}).index('"a"')


def test_normalize_and_csv():
    assert normalize(np.array([1, 2])) == [1, 2]
    assert normalize(np.bool_(True)) is True
    text = to_csv({"x": {"y": 1.5}, "v": [1, 2]})
    assert text.splitlines() == ["key,value", "x.y,1.5", "v,1 2"]
    text = to_csv({"table": [{"k": 0, "v": 1 + 1j}, {"k": 1, "v": 2.0}]})
    assert text.splitlines() == ["k,v", "0,1+1j", "1,2"]


def test_resistance_example(capsys):
    code, rep = run(["resistance", "--system", cfg("e1.json"), "--depth", "8"])
    assert code == 0
    assert rep["results"]["R_N"] == pytest.approx(1.9921875, rel=1e-12)
    assert load(capsys.readouterr().out)["passed"] is True


def test_verify_counterexample(capsys):
    code, rep = run(["verify", "--system", cfg("bad.json")])
    assert code == 1
    assert rep["results"]["lam_min"] == pytest.approx(-0.5)


def test_tower_example(capsys):
    code, rep = run(["tower", "--system", cfg("e2.json"), "--n", "0", "--s", "0.25", "--t", "1.0"])
    assert code == 0
    assert rep["results"]["value"] == 0.5
    assert load(capsys.readouterr().out)["results"]["value"] == {"re": 0.5, "im": 0.0}


@pytest.mark.parametrize(
    "argv",
    [
        ["capacity", "--system", cfg("e1.json")],
        ["complete", "--system", cfg("e2.json"), "--s", "0.25", "--t", "1.0"],
        ["parseval", "--system", cfg("e2.json"), "--points", "0.2,0.8", "--coeffs", "1,-1", "--n", "3"],
        ["martingale", "--system", cfg("e2.json"), "--seed", "3", "--paths", "200", "--depth", "8"],
        ["weights", "--system", cfg("e2.json"), "--weight", cfg("weight_depth1.json")],
        ["weights", "--system", cfg("e2.json"), "--weight", cfg("weight_depth2.json"), "--seed", "4"],
        ["eigenseed", "--p", "4", "--m", "2", "--seed", "42"],
        ["resistance", "--system", cfg("lambda.json"), "--depth", "6"],
        ["verify", "--system", cfg("absorbing.json")],
    ],
)
def test_commands_pass(argv, capsys):
    code, rep = run(argv)
    assert code == 0, rep
    assert rep["passed"]
    assert set(rep) == {"command", "inputs", "results", "checks", "passed"}


def test_martingale_refused_on_absorbing(capsys):
    code, rep = run(["martingale", "--system", cfg("absorbing.json"), "--seed", "1", "--s", "0"])
    assert code == 1
    assert "refused" in rep["results"]
    assert any("finite" in w for w in rep["results"]["warnings"])


def test_weights_value(capsys):
    code, rep = run(["weights", "--system", cfg("e2.json"), "--weight", cfg("weight_depth1.json"), "--s", "0.2", "--t", "0.9"])
    assert code == 0
    J = rep["results"]["J_f"]
    J = J["re"] if isinstance(J, dict) else J
    assert J == pytest.approx(2 * math.sqrt(0.18), rel=1e-14)


def test_eigenseed_report(capsys):
    code, rep = run(["eigenseed", "--p", "4", "--m", "2", "--seed", "42"])
    assert rep["results"]["rho"] == pytest.approx(2, rel=1e-12)
    doc = rep["results"]["system"]
    assert doc["p"] == 4 and len(doc["maps"]) == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["resistance", "--system", "/nonexistent.json"],
        ["resistance"],
        ["bogus"],
        ["resistance", "--system", cfg("e1.json"), "--tol", "-1"],
        ["tower", "--system", cfg("e2.json"), "--s", "7"],
        ["martingale", "--system", cfg("e2.json")],
        ["weights", "--system", cfg("e2.json")],
        ["weights", "--system", cfg("e2.json"), "--weight", cfg("e2.json")],
        ["eigenseed", "--p", "3"],
        ["resistance", "--system", cfg("e1.json"), "--depth", "-2"],
    ],
)
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2


def test_bad_schema_exit_2(tmp_path, capsys):
    p = tmp_path / "x.json"
    p.write_text(json.dumps({"type": "finite", "p": 2, "maps": [[0, 1]], "kernel": [[1, 2], [2, 1]]}))
    assert main(["verify", "--system", str(p)]) == 2
    assert "kernel not PSD" in capsys.readouterr().err


def test_out_file_and_csv(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["resistance", "--system", cfg("e1.json"), "--depth", "3", "--out", str(out)]) == 0
    assert load(out.read_text())["results"]["R_N"] == 1.75
    assert capsys.readouterr().out == ""
    assert main(["resistance", "--system", cfg("e1.json"), "--depth", "3", "--format", "csv"]) == 0
    assert capsys.readouterr().out.splitlines() == ["k,C_k,lambda_k", "0,1,1", "1,2,1", "2,4,1"]
    assert main(["capacity", "--system", cfg("e1.json"), "--format", "csv"]) == 0
    assert capsys.readouterr().out.startswith("k,term\n0,1\n1,0.5\n")
    assert main(["complete", "--system", cfg("e2.json"), "--s", "0.25", "--t", "1.0", "--format", "csv"]) == 0
    text = capsys.readouterr().out
    assert text.startswith("key,value\n") and "probes.s.verdict,in" in text


def test_martingale_csv(capsys):
    assert main(["martingale", "--system", cfg("e2.json"), "--seed", "2", "--paths", "5", "--depth", "3", "--format", "csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "path_seed,n,Re,Im" and len(lines) == 1 + 5 * 4


SAMPLING = [
    ["martingale", "--system", cfg("e2.json"), "--seed", "9", "--paths", "300", "--depth", "8"],
    ["martingale", "--system", cfg("e2.json"), "--seed", "9", "--paths", "50", "--depth", "4", "--format", "csv"],
    ["weights", "--system", cfg("e2.json"), "--weight", cfg("weight_depth2.json"), "--seed", "9"],
    ["eigenseed", "--p", "5", "--m", "3", "--seed", "9"],
]


@pytest.mark.parametrize("argv", SAMPLING)
def test_determinism_byte_identical(argv, tmp_path, capsys):
    outs = []
    for _ in range(2):
        main(argv)
        outs.append(capsys.readouterr().out.encode())
    assert outs[0] == outs[1] and outs[0]


def test_console_script(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "ktree.cli", "tower", "--system", cfg("e2.json"), "--s", "0.25", "--t", "1.0"],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0
    assert load(res.stdout)["passed"]
