"""Command-line contracts: outputs, exit codes and the fixture workflows."""
import json

import numpy as np
import pytest

from vbspin import cli, fitting
from vbspin.data import DataSeries, read_csv, write_csv
from vbspin.fixtures import FIXTURES
from vbspin.report import REPORT_KEYS, ReportDocument


def run(*argv):
    return cli.main([str(a) for a in argv])


def report(path):
    return ReportDocument.read(path)


def test_simulate_writes_csv_and_report(tmp_path):
    assert run("simulate", "--protocol", "rabi", "--points", "21", "--out", tmp_path) == 0
    text = (tmp_path / "data.csv").read_text()
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    assert lines[0] == "x,y,y_sigma"
    assert len(lines) == 22
    doc = json.loads((tmp_path / "report.json").read_text())
    assert sorted(doc) == sorted(REPORT_KEYS)
    assert doc["config"]["run"]["protocol"] == "rabi"
    assert doc["config"]["spin"]["D"] == 3479.0  # defaults are echoed
    assert doc["fits"] == {}
    assert set(doc["timing"]) == {"simulate_s", "fit_s"}


def test_simulate_odmr_zero_field_is_bimodal(tmp_path):
    assert run("simulate", "--protocol", "odmr", "--B", 0, "--out", tmp_path) == 0
    data = read_csv(tmp_path / "data.csv")
    one = fitting.fit_named("lorentzian", data, 1)
    two = fitting.fit_named("lorentzian", data, 2)
    lo, hi = sorted((two["x0_1"], two["x0_2"]))
    assert abs(lo - 3424.5) < 15 and abs(hi - 3533.5) < 15
    # three extra parameters; a chi2 drop of 30 rules out one dip at p < 1e-6
    assert one.chi2 - two.chi2 > 30


def test_simulate_zero_tau_is_single_reference_row(tmp_path):
    assert run("simulate", "--protocol", "rabi", "--tau-max", 0, "--out", tmp_path) == 0
    data = read_csv(tmp_path / "data.csv")
    assert data.x.tolist() == [0.0]


def test_simulate_with_model_fits(tmp_path):
    assert run("simulate", "--protocol", "t1", "--points", "121", "--model", "exp",
               "--out", tmp_path) == 0
    fit = report(tmp_path / "report.json").fits["data"]
    assert abs(fit["T"] - 16.377) < 5 * fit.stderr["T"]


def test_no_timing_gives_null(tmp_path):
    assert run("simulate", "--protocol", "rabi", "--points", "5", "--out", tmp_path,
               "--no-timing") == 0
    assert json.loads((tmp_path / "report.json").read_text())["timing"] is None


@pytest.mark.parametrize("argv, fragment", [
    (["--protocol", "nmr"], "unknown protocol"),
    (["--B", "-1"], "B must be >= 0"),
    (["--points", "0"], "points"),
    (["--model", "gaussian"], "unknown model"),
])
def test_invalid_input_exits_2(tmp_path, capsys, argv, fragment):
    assert run("simulate", *argv, "--out", tmp_path) == 2
    assert fragment in capsys.readouterr().err


def test_config_error_names_the_line(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text('[run]\nprotocol = "rabi"\n\n[spin]\nB = 10\nfield = 3\n')
    assert run("simulate", "--config", cfg, "--out", tmp_path) == 2
    err = capsys.readouterr().err
    assert "line 6" in err and "field" in err


def test_coarse_rk4_step_exits_3(tmp_path, capsys):
    cfg = tmp_path / "rk4.toml"
    cfg.write_text('[run]\nprotocol = "rabi"\n[ensemble]\nmethod = "rk4"\ndt = 0.01\n')
    assert run("simulate", "--config", cfg, "--points", "5", "--out", tmp_path) == 3
    assert "too coarse" in capsys.readouterr().err


def test_fit_constant_is_exact(tmp_path):
    write_csv(DataSeries(np.arange(10.0), np.full(10, 2.5)), tmp_path / "c.csv")
    assert run("fit", tmp_path / "c.csv", "--model", "constant", "--out", tmp_path / "o") == 0
    fit = report(tmp_path / "o" / "report.json").fits["data"]
    assert fit["c"] == 2.5
    resid = read_csv(tmp_path / "o" / "residuals.csv")
    assert np.all(resid.y == 0)


def test_fit_tolerates_comments(tmp_path):
    (tmp_path / "d.csv").write_text("# a comment\nx,y\n# another\n0,1\n1,3\n2,5\n3,7\n")
    assert run("fit", tmp_path / "d.csv", "--model", "linear", "--out", tmp_path / "o") == 0
    fit = report(tmp_path / "o" / "report.json").fits["data"]
    assert fit["slope"] == pytest.approx(2.0) and fit["intercept"] == pytest.approx(1.0)


@pytest.mark.parametrize("text", ["x,y\n0,1\n1,2,3\n", "x,y\n0,one\n", "", "x,y\n1,1\n0,2\n"])
def test_fit_bad_csv_exits_2(tmp_path, text):
    (tmp_path / "d.csv").write_text(text)
    assert run("fit", tmp_path / "d.csv", "--model", "linear", "--out", tmp_path / "o") == 2


def test_fit_missing_file_exits_2(tmp_path):
    assert run("fit", tmp_path / "nope.csv", "--model", "linear", "--out", tmp_path) == 2


def test_fit_unidentifiable_exits_3(tmp_path):
    write_csv(DataSeries(np.arange(20.0), np.full(20, 1.0)), tmp_path / "c.csv")
    # a flat line gives the decay time no leverage
    assert run("fit", tmp_path / "c.csv", "--model", "exp", "--guess", "0,1,1",
               "--out", tmp_path / "o") == 3


def test_non_convergence_exits_4_with_best_so_far(tmp_path):
    # a positive slow background lets one cosine trade off against it along
    # a shallow valley that exhausts the iteration budget
    cfg = tmp_path / "pos.toml"
    cfg.write_text(FIXTURES["ramsey_44mt"].replace("background = [-0.003, 0.5, 0.0]",
                                                   "background = [0.003, 1.0, 0.0]"))
    assert run("simulate", "--config", cfg, "--seed", 0, "--out", tmp_path / "s") == 4
    doc = report(tmp_path / "s" / "report.json")
    assert not doc.fits["data"].converged
    assert run("fit", tmp_path / "s" / "data.csv", "--model", "damped_cosine",
               "--n-components", 3, "--out", tmp_path / "f") == 4
    best = report(tmp_path / "f" / "report.json").fits["data"]
    assert best.iterations == 500 and np.isfinite(best.chi2)


def test_t1_fixture_fit_recovers_input(fixture_csv, tmp_path):
    assert run("fit", fixture_csv("t1"), "--model", "exp", "--out", tmp_path) == 0
    fit = report(tmp_path / "report.json").fits["data"]
    assert abs(fit["T"] - 16.377) <= 2 * fit.stderr["T"]


def test_ramsey_44mt_fixture_spacings(fixture_csv, tmp_path):
    assert run("fit", fixture_csv("ramsey_44mt"), "--model", "damped_cosine",
               "--n-components", 3, "--out", tmp_path) == 0
    fit = report(tmp_path / "report.json").fits["data"]
    lines = sorted(fitting.resolve_comb_signs([fit[f"f{i}"] for i in (1, 2, 3)]))
    assert np.allclose(np.diff(lines), 45.0, atol=1.0)


def test_fixture_csv_reproduces_config(fixture_csv, tmp_path):
    cfg = tmp_path / "r.toml"
    cfg.write_text(FIXTURES["ramsey_44mt"])
    assert run("simulate", "--config", cfg, "--out", tmp_path / "s") == 0
    assert read_csv(tmp_path / "s" / "data.csv") == read_csv(fixture_csv("ramsey_44mt"))


def test_sweep_t1_over_field_is_flat(tmp_path):
    out = tmp_path / "sw"
    assert run("sweep", "--protocol", "t1", "--tau-max", 80, "--points", 601, "--variable",
               "B", "--values", "10,20,36,44", "--workers", 2, "--out", out) == 0
    summary = read_csv(out / "summary.csv")
    assert summary.x.tolist() == [10.0, 20.0, 36.0, 44.0]
    assert np.ptp(summary.y) / np.mean(summary.y) < 0.05
    assert (out / "000_B=10.0" / "report.json").exists()


def test_sweep_power_gives_square_root_law(tmp_path):
    out = tmp_path / "sw"
    assert run("sweep", "--protocol", "rabi", "--B", 24, "--variable", "power",
               "--values", "1,2,3,4,5,6,8,10", "--workers", 2, "--out", out) == 0
    s = read_csv(out / "summary.csv")
    root = np.sqrt(s.x)
    slope, icpt = np.polyfit(root, s.y, 1)
    r2 = 1 - np.sum((s.y - slope * root - icpt) ** 2) / np.sum((s.y - s.y.mean()) ** 2)
    assert r2 > 0.999


def test_single_value_sweep_equals_simulate_then_fit(tmp_path):
    common = ["--protocol", "t1", "--points", "101", "--seed", "3", "--no-timing"]
    assert run("sweep", *common, "--variable", "B", "--values", "20",
               "--out", tmp_path / "sw") == 0
    assert run("simulate", *common, "--B", "20", "--model", "exp", "--n-components", 1,
               "--out", tmp_path / "sim") == 0
    point = report(tmp_path / "sw" / "000_B=20.0" / "report.json")
    sim = report(tmp_path / "sim" / "report.json")
    assert point.series == sim.series
    assert point.fits["data"].params == sim.fits["data"].params
    assert run("fit", tmp_path / "sim" / "data.csv", "--model", "exp",
               "--out", tmp_path / "fit") == 0
    assert report(tmp_path / "fit" / "report.json").fits["data"].params == sim.fits["data"].params


def test_sweep_refuses_overlapping_outputs(tmp_path, capsys):
    assert run("sweep", "--protocol", "t1", "--variable", "B", "--values", "10,10.0",
               "--out", tmp_path / "a") == 2
    (tmp_path / "b").mkdir()
    (tmp_path / "b" / "keep.txt").write_text("x")
    assert run("sweep", "--protocol", "t1", "--variable", "B", "--values", "10",
               "--out", tmp_path / "b") == 2
    assert "not empty" in capsys.readouterr().err


def test_sweep_rejects_unknown_variable(tmp_path):
    assert run("sweep", "--variable", "colour", "--values", "1", "--out", tmp_path / "a") == 2
    assert run("sweep", "--variable", "spin.colour", "--values", "1",
               "--out", tmp_path / "b") == 2


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
    assert "0.1.0" in capsys.readouterr().out
