from __future__ import annotations

import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import pytest

from fdbisim import analytic as an
from fdbisim import cli

MODELS = Path(__file__).parent.parent / "models"


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def model(name):
    return MODELS / f"{name}.model"


# -- exit codes -----------------------------------------------------------


def test_usage_errors_exit_64(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["frobnicate"])
    assert info.value.code == 64
    with pytest.raises(SystemExit) as info:
        cli.main(["distinguish", str(model("bm")), "1"])
    assert info.value.code == 64
    with pytest.raises(SystemExit) as info:
        cli.main(["check", str(model("bm")), "--n", "0"])
    assert info.value.code == 64
    code, _, err = run(capsys, "check", "no/such/file.model")
    assert code == 64 and "cannot read" in err
    code, _, err = run(capsys, "refine", model("bm"))
    assert code == 64 and "needs an LMP" in err


def test_model_errors_exit_65(tmp_path, capsys):
    bad = tmp_path / "bad.model"
    bad.write_text("process bm\nobs wiggle\n")
    code, _, err = run(capsys, "check", bad)
    assert code == 65 and "syntax error" in err and "line 2, column 5" in err
    bad.write_text("lmp 1\nrow 0: 1.4\n")
    code, _, err = run(capsys, "refine", bad)
    assert code == 65 and "semantic error" in err and "row mass 1.4 > 1" in err


def test_domain_errors_exit_2(capsys):
    code, _, err = run(capsys, "distinguish", model("reflected"), "0.5", "3")
    assert code == 2 and "outside" in err


def test_internal_errors_exit_70(capsys, monkeypatch):
    def boom(args):
        raise RuntimeError("broken invariant")

    monkeypatch.setattr(cli, "cmd_refine", boom)
    parser = cli.build_parser()
    args = parser.parse_args(["refine", str(model("chain"))])
    monkeypatch.setattr(cli, "build_parser", lambda: _FixedParser(args))
    code, _, err = run(capsys, "refine", model("chain"))
    assert code == 70 and "internal error" in err


class _FixedParser:
    def __init__(self, args):
        args.func = cli.cmd_refine
        self.args = args

    def parse_args(self, argv):
        self.args.func = cli.cmd_refine
        return self.args

    def error(self, message):
        raise SystemExit(64)


# -- subcommands ----------------------------------------------------------


def test_check_passes_for_declared_relation(capsys):
    code, out, _ = run(capsys, "check", model("bm"), "--n", "20000", "--grid-size", "8")
    rep = json.loads(out)
    assert code == 0 and rep["passed"] is True and rep["schema_version"] == 1


def test_check_refutes_reflection_under_drift(capsys):
    code, out, _ = run(capsys, "check", model("drifted_zero"), "reflect", "--n", "20000", "--grid-size", "6")
    assert code == 1 and json.loads(out)["passed"] is False


def test_distinguish(capsys):
    code, out, _ = run(capsys, "distinguish", model("bm"), "1", "2", "--family", "bt", "--n", "20000")
    assert code == 0 and json.loads(out)["verdict"] == "distinguished"
    code, out, _ = run(capsys, "distinguish", model("bm"), "1", "-1", "--family", "bt", "--n", "20000")
    assert code == 0 and json.loads(out)["verdict"] == "indistinguishable"


def test_distinguish_fork_states(capsys):
    code, out, _ = run(capsys, "distinguish", model("fork"), "95,2", "95,4")
    assert code == 0 and json.loads(out)["verdict"] == "distinguished"


def test_simulate_csv(capsys):
    code, out, _ = run(capsys, "simulate", model("absorbed_0"), "0.05", "--paths", "3", "--horizon", "2",
                       "--seed", "1")
    rows = list(csv.reader(io.StringIO(out)))
    assert code == 0 and rows[0] == ["path_id", "t", "value"]
    body = rows[1:]
    assert {r[0] for r in body} == {"0", "1", "2"}
    for pid in "012":
        vals = [r[2] for r in body if r[0] == pid]
        assert vals[0] == "0.05"
        if "∂" in vals:
            assert all(v == "∂" for v in vals[vals.index("∂"):])


def test_hittime_agrees_with_closed_form(capsys):
    code, out, _ = run(capsys, "hittime", model("bm"), "1", "point 0", "--t", "1", "--n", "100000", "--seed", "3")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and len(rows) == 1
    r = rows[0]
    assert float(r["closed_form"]) == pytest.approx(an.bm_hit_zero_cdf(1.0, 1.0), abs=1e-9)
    assert abs(float(r["z"])) <= 3.29


def test_hittime_laplace(capsys):
    code, out, _ = run(capsys, "hittime", model("bm"), "0.25", "point 0 1", "--lambda", "1", "--n", "5000")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and rows[0]["quantity"] == "laplace"
    assert float(rows[0]["closed_form"]) == pytest.approx(an.bm_two_barrier_laplace(0.25, 1.0), abs=1e-9)


def test_refine(capsys):
    code, out, _ = run(capsys, "refine", model("identical"))
    assert code == 0 and json.loads(out)["blocks"] == 1
    code, out, _ = run(capsys, "refine", model("branch"))
    assert json.loads(out)["partition"] == [[0], [1, 2], [3]]


def test_embed(capsys):
    code, out, _ = run(capsys, "embed", model("branch"))
    rep = json.loads(out)
    assert code == 0 and rep["passed"] and len(rep["t_grid"]) == 8


def test_pushout(capsys):
    code, out, _ = run(capsys, "pushout", model("pushout_e1"), model("pushout_e2"), model("pushout_e3"), "0", "0")
    rep = json.loads(out)
    assert code == 0 and rep["apex"]["states"] == 3
    code, _, err = run(capsys, "pushout", model("pushout_e1"), model("pushout_e2"), model("pushout_e3"), "0,1", "0")
    assert code == 64


def test_seed_from_environment(capsys, monkeypatch):
    monkeypatch.setenv("FDBISIM_SEED", "17")
    _, out, _ = run(capsys, "distinguish", model("bm"), "1", "2", "--family", "bt", "--n", "2000")
    assert json.loads(out)["seed"] == 17
    _, out, _ = run(capsys, "distinguish", model("bm"), "1", "2", "--family", "bt", "--n", "2000", "--seed", "4")
    assert json.loads(out)["seed"] == 4
    monkeypatch.setenv("FDBISIM_SEED", "many")
    code, _, err = run(capsys, "distinguish", model("bm"), "1", "2", "--n", "2000")
    assert code == 64 and "FDBISIM_SEED" in err


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "fdbisim.cli", "refine", str(model("chain"))],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["schema_version"] == 1


def test_hittime_two_point_target_under_negative_drift(tmp_path, capsys):
    path = tmp_path / "neg.model"
    path.write_text("process drifted_bm a=-1.5\nobs point -0.5 1.5\nhorizon 40\n")
    code, out, _ = run(capsys, "hittime", path, "0.2", "point -0.5 1.5", "--lambda", "0.7", "--n", "40000")
    row = next(csv.DictReader(io.StringIO(out)))
    # the closed form rescales the gap to the unit interval and mirrors the drift
    want = an.drifted_two_barrier_laplace((0.2 + 0.5) / 2.0, 1.5 * 2.0, 0.7 * 4.0)
    want_mirrored = an.drifted_two_barrier_laplace(1 - (0.2 + 0.5) / 2.0, 3.0, 2.8)
    assert code == 0 and float(row["closed_form"]) == pytest.approx(want_mirrored, abs=1e-9)
    assert float(row["closed_form"]) != pytest.approx(want, abs=1e-6)
    assert abs(float(row["z"])) <= 3.29
