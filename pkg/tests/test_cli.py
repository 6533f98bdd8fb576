import csv
import subprocess
import sys

import numpy as np
import pytest

from kkreduce.cli import CURVE_COLUMNS, ESTIMATE_COLUMNS, main
from kkreduce.config import encode_complex_matrices, instance_path, load_instance, sparse_structure_constants
from kkreduce.representation import coset_rep_matrices


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1].startswith("# params={")
    return list(csv.DictReader(lines[2:]))


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def constant_config(tmp_path):
    path = tmp_path / "constant.toml"
    path.write_text(
        '[run]\ninstance = "hopf"\n'
        "[simulation]\nt_b = 0.1\ndt = 0.01\nn_paths = 100\nseed = 17\n"
        "[initial]\nx0 = [0.3, -0.2]\ny0 = [0.0, 0.1, 0.0, 0.2, 0.0]\n"
        '[observable]\ntruncation = ["trivial"]\n'
        '[[observable.coefficients]]\nirrep = "trivial"\nvalues = [["1"]]\n'
    )
    return path


def test_check_shipped_instance(tmp_path):
    assert run("check", "--config", "coset_only", "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "check.csv")
    assert rows and all(r["passed"] == "True" for r in rows)
    assert {r["instance"] for r in rows} == {"coset_only"}
    assert any(r["check"].startswith("generator_consistency") for r in rows)


def test_check_reports_an_inconsistent_algebra(tmp_path, coset_only):
    spec = coset_only.spec
    f = spec.structure_constants.copy()
    f[2, 0, 1], f[2, 1, 0] = -1.0, 1.0
    bad = tmp_path / "bad.toml"
    bad.write_text(
        "[algebra]\ndim = 3\nh = [2]\nkhat = []\nlbar = [0, 1]\nsafe_radius = 2.5\n"
        f"structure_constants = {sparse_structure_constants(f)}\n"
        f"generators = {encode_complex_matrices(spec.generators)}\n"
        '[[irreps]]\nlabel = "spin1"\nkind = "spin"\nspin = 1\n'
    )
    assert run("check", "--config", bad, "--out", tmp_path / "out") == 1
    rows = read_csv(tmp_path / "out" / "check.csv")
    failed = [r for r in rows if r["passed"] == "False"]
    assert failed and "generator_commutators" in failed[0]["check"]
    assert "(0, 1)" in failed[0]["detail"] or "0,1" in failed[0]["detail"].replace(" ", "")


def test_structural_errors_exit_2(tmp_path, capsys):
    assert run("check", "--config", tmp_path / "missing.toml") == 2
    assert "not found" in capsys.readouterr().err
    hopf_instance = instance_path("hopf")  # an instance file, not a run configuration
    assert run("simulate-full", "--config", hopf_instance, "--out", tmp_path) == 2
    assert run("simulate-full", "--config", "coset_only", "--dt", "0.3", "--out", tmp_path) == 2
    with pytest.raises(SystemExit) as info:
        main(["simulate-full"])
    assert info.value.code == 2


def test_simulate_constant_observable(constant_config, tmp_path):
    out = tmp_path / "out"
    for command in ("simulate-full", "simulate-reduced"):
        assert run(command, "--config", constant_config, "--out", out) == 0
        stem = command.replace("-", "_")
        (row,) = read_csv(out / f"{stem}.csv")
        assert list(row) == list(ESTIMATE_COLUMNS)
        assert row["value"] == "1.0" and row["value_imag"] == "0.0" and row["std_error"] == "0.0"
        assert row["n_effective"] == "100" and row["aborted"] == "0" and row["z_against_partner"] == ""
        assert not (out / f"{stem}_curve.csv").exists()


def test_reduced_decay_curve(tmp_path):
    out = tmp_path / "out"
    assert run("simulate-reduced", "--config", "coset_only", "--paths", 5, "--dt", 0.01, "--out", out) == 0
    rows = read_csv(out / "simulate_reduced_curve.csv")
    assert list(rows[0]) == list(CURVE_COLUMNS)
    assert [float(r["t"]) for r in rows] == [0.25, 0.5, 1.0]
    inst = load_instance("coset_only")
    d00 = coset_rep_matrices(inst.irrep("spin1"), inst.model.chart, np.array([[0.4, -0.3]]))[0, 0, 0].real
    for r in rows:
        exact = np.exp(-float(r["t"])) * d00  # the l = 1 zonal harmonic decays as exp(-t)
        assert float(r["estimate"]) == pytest.approx(exact, abs=5e-3)
        assert float(r["se"]) < 1e-15


def test_reruns_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ("simulate-full", "--config", "coset_only", "--paths", 50, "--dt", 0.01)
    assert run(*args, "--out", a) == 0
    assert run(*args, "--out", b) == 0
    for name in ("simulate_full.csv", "simulate_full_curve.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert run(*args, "--seed", 2, "--out", tmp_path / "c") == 0
    assert (a / "simulate_full.csv").read_bytes() != (tmp_path / "c" / "simulate_full.csv").read_bytes()
    assert "seed=2," in (tmp_path / "c" / "simulate_full.csv").read_text().splitlines()[0]


def test_compare_flags_exact_agreement(tmp_path):
    assert run("compare", "--config", "trivial", "--paths", 200, "--dt", 0.01, "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "compare.csv")
    assert [r["estimator"] for r in rows] == ["full", "reduced"]
    assert all(r["flag"] == "exact" and float(r["z_against_partner"]) == 0.0 for r in rows)
    assert rows[0]["value"] == rows[1]["value"]


def test_spectrum(tmp_path):
    assert run("spectrum", "--config", "coset_only", "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "spectrum.csv")
    spin1 = [float(r["eigenvalue"]) for r in rows if r["irrep"] == "spin1"]
    spin2 = [float(r["eigenvalue"]) for r in rows if r["irrep"] == "spin2"]
    np.testing.assert_allclose(spin1, [-1.0, -0.5, -0.5], atol=1e-14)
    np.testing.assert_allclose(spin2, [-3.0, -2.5, -2.5, -1.0, -1.0], atol=1e-14)
    assert [float(r["eigenvalue"]) for r in rows if r["irrep"] == "trivial"] == [0.0]


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("KKREDUCE_OUTPUT_DIR", str(tmp_path / "env"))
    assert run("spectrum", "--config", "coset_only") == 0
    assert (tmp_path / "env" / "spectrum.csv").is_file()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "kkreduce", "spectrum", "--config", "coset_only",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "spin1" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "kkreduce", "check", "--config", str(tmp_path / "nope.toml")],
                          capture_output=True, text=True)
    assert proc.returncode == 2
