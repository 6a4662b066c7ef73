import csv
import json

import numpy as np
import pytest

from actionangle.cli import main, parse_grid, UsageError

NON_INVOLUTIVE = """\
name: non_involutive
n: 2
F1 = q1
F2 = p1^2/2
"""


def run(argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


class TestGridParsing:
    def test_single_spec_applies_to_all_axes(self):
        g = parse_grid("0.1:3", 2, 0, [1.0, 2.0])
        assert g.shape == (3, 3)
        np.testing.assert_allclose(g.axes[1], [1.9, 2.0, 2.1])

    def test_transversal_spec(self):
        g = parse_grid("0.1:3/0.5:5", 1, 2, [1.0])
        assert g.shape == (3, 5, 5)

    @pytest.mark.parametrize("text", ["0.1", "a:3", "0.1:0", "-0.1:3"])
    def test_malformed(self, text):
        with pytest.raises(UsageError):
            parse_grid(text, 1, 0, [0.0])


class TestAnalyze:
    def test_oscillator_report(self, tmp_path):
        rep = tmp_path / "r.json"
        assert run(["analyze", "--system", "oscillator1d", "--report", rep, "--samples", 4]) == 0
        doc = json.loads(rep.read_text())
        assert doc["schema_version"] == "1.0"
        assert doc["lattice"]["m"] == 1
        assert doc["canonical"]["verdict"] == "pass"
        assert doc["canonical"]["max"] < 1e-5
        assert doc["timing"] is None

    def test_reports_are_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for p in (a, b):
            assert run(["analyze", "--system", "oscillator1d", "--report", p, "--samples", 3]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_stdout_when_no_report(self, capsys):
        assert run(["analyze", "--system", "oscillator1d", "--samples", 2]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["system"]["name"] == "oscillator1d"

    def test_origin_is_not_regular(self, capsys):
        assert run(["analyze", "--system", "oscillator1d", "--point", "0,0"]) == 2
        assert "regular" in capsys.readouterr().err

    def test_non_involutive_file(self, tmp_path, capsys):
        f = tmp_path / "sys.txt"
        f.write_text(NON_INVOLUTIVE)
        assert run(["analyze", "--system", f, "--point", "0,0,1,0"]) == 2
        assert "assumption violated" in capsys.readouterr().err

    def test_unknown_system(self):
        assert run(["analyze", "--system", "no_such_system"]) == 1

    def test_missing_subcommand(self):
        assert run([]) == 1

    def test_bad_point_length(self):
        assert run(["analyze", "--system", "oscillator1d", "--point", "1,0,0"]) == 1

    def test_unreachable_tolerance_is_numerical(self, tmp_path):
        code = run(["analyze", "--system", "oscillator1d", "--tol-canonical=1e-30", "--samples", 2,
                    "--report", tmp_path / "r.json"])
        assert code == 3
        assert json.loads((tmp_path / "r.json").read_text())["canonical"]["verdict"] == "fail"

    def test_timing_flag(self, tmp_path):
        rep = tmp_path / "r.json"
        assert run(["analyze", "--system", "oscillator1d", "--report", rep, "--samples", 2, "--timing"]) == 0
        timing = json.loads(rep.read_text())["timing"]
        assert timing and all(v >= 0 for v in timing.values())

    def test_partial_builtin(self, tmp_path):
        rep = tmp_path / "r.json"
        assert run(["analyze", "--system", "partial_oscillator", "--report", rep, "--samples", 3]) == 0
        doc = json.loads(rep.read_text())
        assert doc["partial"]["holonomy"]["verdict"] == "supported"


class TestPlotdata:
    def test_missing_report(self, tmp_path):
        assert run(["plotdata", "--from-report", tmp_path / "nope.json", "--out", tmp_path]) == 1

    def test_empty_sweep(self, tmp_path):
        assert run(["plotdata", "--system", "pendulum", "--sweep=-0.1:-0.9:5", "--out", tmp_path]) == 1

    def test_pendulum_sweep_is_monotone(self, tmp_path):
        assert run(["plotdata", "--system", "pendulum", "--sweep=-0.9:-0.1:5", "--out", tmp_path]) == 0
        header, rows = read_csv(tmp_path / "actions.csv")
        assert header == ["J1", "I1"]
        assert np.all(np.diff(rows[:, 1]) > 0)
        _, freq = read_csv(tmp_path / "frequency.csv")
        assert np.all(np.diff(freq[:, 1]) < 0)

    def test_oscillator_action_equals_energy(self, tmp_path):
        assert run(["plotdata", "--system", "oscillator1d", "--sweep", "0.2:2.0:4", "--out", tmp_path]) == 0
        _, rows = read_csv(tmp_path / "actions.csv")
        np.testing.assert_allclose(rows[:, 1], rows[:, 0], atol=1e-6)

    def test_from_report(self, tmp_path):
        rep = tmp_path / "r.json"
        assert run(["analyze", "--system", "oscillator1d", "--report", rep, "--samples", 2]) == 0
        out = tmp_path / "plots"
        assert run(["plotdata", "--from-report", rep, "--out", out]) == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == ["actions.csv", "convergence.csv", "frequency.csv", "trajectory.csv"]
        header, traj = read_csv(out / "trajectory.csv")
        assert header == ["t", "y1", "I1"]
        # the angle advances at unit rate, the action stays put
        np.testing.assert_allclose(np.unwrap(traj[:, 1]) - traj[0, 1], traj[:, 0], atol=1e-6)
        np.testing.assert_allclose(traj[:, 2], 0.5, atol=1e-6)
