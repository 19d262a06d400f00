"""Tests for the command line interface."""

import csv
import io
import json
import subprocess
import sys

import pytest

from impurity_kit import EXIT_DOMAIN_ERROR, EXIT_OK, EXIT_USAGE, main, parse_options
from impurity_kit.__version__ import __version__
from impurity_kit.model import dump
from tests.conftest import exact_energy, random_gapped_model


def run_json(capsys, argv):
    code = main(argv)
    out = capsys.readouterr().out
    assert code == EXIT_OK, out
    return json.loads(out)


def test_version_subprocess():
    result = subprocess.run(
        [sys.executable, "-m", "impurity_kit", "--version"],
        capture_output=True,
        text=True,
    )
    assert result.returncode == 0
    assert result.stdout.strip() == f"impurity-kit v{__version__}"


def test_no_command_is_usage_error(capsys):
    assert main([]) == EXIT_USAGE
    assert "a command is required" in capsys.readouterr().err


def test_incomplete_subcommands(capsys):
    assert main(["bench"]) == EXIT_USAGE
    assert main(["bound", "sdp"]) == EXIT_USAGE
    capsys.readouterr()


def test_unknown_flag_is_usage_error(capsys):
    assert main(["pfaffian", "--no-such-flag"]) == EXIT_USAGE
    capsys.readouterr()


def test_pfaffian_of_odd_matrix(capsys, data_dir):
    report = run_json(capsys, ["pfaffian", "--file", str(data_dir / "odd_matrix.json")])
    assert report["results"] == {"pfaffian": 0.0, "dim": 3}
    assert set(report) == {"command", "inputs", "results", "seeds", "version"}
    assert report["version"] == __version__
    assert len(report["inputs"]) == 64


def test_pfaffian_inline_csv(capsys, tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps([[0, 2.5], [-2.5, 0]]))
    assert main(["pfaffian", "--file", str(path), "--format", "csv"]) == EXIT_OK
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["pfaffian_re", "pfaffian_im"]
    assert float(rows[1][0]) == 2.5
    assert float(rows[1][1]) == 0.0


def test_pfaffian_rejects_symmetric_matrix(capsys, tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps([[0, 1], [1, 0]]))
    assert main(["pfaffian", "--file", str(path)]) == EXIT_DOMAIN_ERROR
    assert "error:" in capsys.readouterr().err


def test_missing_file_is_domain_error(capsys, tmp_path):
    assert main(["pfaffian", "--file", str(tmp_path / "absent.json")]) == EXIT_DOMAIN_ERROR
    capsys.readouterr()


def test_zolotarev_csv(capsys):
    argv = ["zolotarev", "--omega", "0.1", "--d-max", "3", "--format", "csv"]
    assert main(argv) == EXIT_OK
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["omega", "d", "r", "bound"]
    assert [row[1] for row in rows[1:]] == ["1", "2", "3"]
    errors = [float(row[2]) for row in rows[1:]]
    assert errors == sorted(errors, reverse=True)
    for row in rows[1:]:
        assert float(row[2]) <= float(row[3])


def test_zolotarev_bad_gap(capsys):
    assert main(["zolotarev", "--omega", "0", "--d-max", "2"]) == EXIT_DOMAIN_ERROR
    assert "gap" in capsys.readouterr().err


def test_exact_on_model_file(capsys, data_dir):
    report = run_json(capsys, ["exact", "--model", str(data_dir / "two_mode_model.json")])
    results = report["results"]
    assert results["method"] == "dense"
    assert results["n"] == 2
    assert isinstance(results["energy"], float)


def test_bench_anderson_exact(capsys):
    report = run_json(capsys, ["bench", "anderson", "--n", "8", "--u", "1"])
    results = report["results"]
    assert results["solver"] == "exact"
    assert results["E"] == pytest.approx(-10.00932, abs=1e-4)
    assert results["E"] == results["energy"]


def test_unknown_solver(capsys, data_dir):
    argv = ["solve", "nosuch", "--model", str(data_dir / "two_mode_model.json")]
    assert main(argv) == EXIT_USAGE
    assert "unknown solver" in capsys.readouterr().err


def test_bad_option_pair(capsys, data_dir):
    argv = ["solve", "exact", "--model", str(data_dir / "two_mode_model.json"), "-o", "oops"]
    assert main(argv) == EXIT_DOMAIN_ERROR
    capsys.readouterr()


def test_parse_options():
    assert parse_options(["theta0=0.2", "window=50", "parity=even", "f-0=1e-2"]) == {
        "theta0": 0.2,
        "window": 50,
        "parity": "even",
        "f_0": 0.01,
    }


def test_timing_flag(capsys, data_dir):
    argv = ["exact", "--model", str(data_dir / "two_mode_model.json"), "--timing"]
    report = run_json(capsys, argv)
    assert report["wall_time"] >= 0.0


def test_variational_state_then_sdp_bound(capsys, data_dir, tmp_path):
    model_path = str(data_dir / "two_mode_model.json")
    exact = run_json(capsys, ["exact", "--model", model_path])["results"]["energy"]

    state = tmp_path / "state.json"
    trace = tmp_path / "trace.csv"
    solved = run_json(
        capsys,
        [
            "solve", "variational", "--model", model_path,
            "--chi", "1", "--steps", "50", "--parity", "even", "--seed", "3",
            "--state-out", str(state), "--trace-file", str(trace),
        ],
    )
    assert solved["seeds"] == {"seed": 3}
    assert solved["results"]["E_best"] >= exact - 1e-9
    assert state.exists()
    assert trace.read_text().splitlines()[0] == "step,energy,theta"

    program = tmp_path / "program.dat-s"
    cert = tmp_path / "cert.json"
    built = run_json(
        capsys,
        [
            "bound", "sdp", "build", "--model", model_path, "--state", str(state),
            "--out", str(program), "--k", "0", "--certificate-out", str(cert),
        ],
    )["results"]
    assert built["k"] == 0
    assert built["conservative_y0"] <= exact + 1e-9

    verified = run_json(
        capsys,
        [
            "bound", "sdp", "verify", "--program", str(program),
            "--certificate", str(cert), "--tol", "1e-10",
        ],
    )["results"]
    assert verified["valid"] is True
    assert verified["y0"] == built["conservative_y0"]


def test_norm_estimate_on_state(capsys, data_dir, tmp_path):
    state = tmp_path / "state.json"
    run_json(
        capsys,
        [
            "solve", "variational", "--model", str(data_dir / "two_mode_model.json"),
            "--chi", "1", "--steps", "10", "--parity", "even", "--state-out", str(state),
        ],
    )
    report = run_json(
        capsys, ["norm-estimate", "--state", str(state), "--samples", "64", "--seed", "1"]
    )
    results = report["results"]
    assert results["samples"] == 64
    assert results["xi"] > 0.0
    assert report["seeds"] == {"seed": 1}


def test_solve_quasipoly_keys(capsys, tmp_path):
    model = random_gapped_model(4, seed=7)
    path = tmp_path / "model.json"
    dump(model, path)
    report = run_json(capsys, ["solve", "quasipoly", "--model", str(path), "--gamma", "0.2"])
    results = report["results"]
    assert {"E", "s_star", "dim", "gamma", "elapsed"} <= set(results)
    assert results["gamma"] == 0.2
    assert results["elapsed"] >= 0.0
    assert results["E"] == results["energy"]
    e_g = exact_energy(model)
    assert e_g - 1e-9 <= results["E"] <= e_g + 0.2
