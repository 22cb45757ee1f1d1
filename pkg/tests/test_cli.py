import csv
import json

import numpy as np
import pytest

from bbnn_imc.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main


@pytest.fixture(scope="module")
def toy_files(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    assert main(["generate", "--preset", "toy-cnn", "--n-inputs", "24", "--n-ood", "12", "-o", str(out)]) == EXIT_OK
    return out


def _model(d):
    return ["--network", str(d / "network.yaml"), "--pmap", str(d / "pmap.bbnp")]


def _rows(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def test_generate_outputs(toy_files):
    for name in ("network.yaml", "pmap.bbnp", "inputs.bbni", "ood.bbni", "run_config.yaml"):
        assert (toy_files / name).exists()


def test_analyze_desk_vgg(tmp_path):
    assert main(["analyze", "--preset", "desk-vgg", "-o", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "sparsity.csv")
    assert len(rows) == 9
    assert json.loads((tmp_path / "summary.json").read_text())["fel"] == 7


def test_clamp_and_split(toy_files, tmp_path):
    assert main(["clamp", *_model(toy_files), "-o", str(tmp_path / "c")]) == EXIT_OK
    s = json.loads((tmp_path / "c" / "summary.json").read_text())
    assert s["n_p_after_fel"] <= s["n_p_after_tau"] <= s["n_p_before"]
    assert main(["split", *_model(toy_files), "--n-mc", "10", "-o", str(tmp_path / "s")]) == EXIT_OK
    doc = json.loads((tmp_path / "s" / "split.json").read_text())
    for layer in doc["layers"]:
        assert layer["sp_subarrays"] <= layer["ls_subarrays"]


def _simulate(toy_files, out, *extra):
    args = ["simulate", *_model(toy_files), "--inputs", str(toy_files / "inputs.bbni"),
            "--ood-inputs", str(toy_files / "ood.bbni"), "--n-mc", "4", "-o", str(out), *extra]
    return main(args)


def test_simulate_rerun_is_byte_identical(toy_files, tmp_path):
    assert _simulate(toy_files, tmp_path / "a", "--seed", "3") == EXIT_OK
    assert _simulate(toy_files, tmp_path / "b", "--seed", "3") == EXIT_OK
    for name in ("predictions.csv", "predictors.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = _rows(tmp_path / "a" / "predictions.csv")
    assert len(rows) == 36 and {r["split"] for r in rows} == {"ind", "ood"}


def _ideal_device(path):
    path.write_text("format: bbnn-device\nversion: 1\nsigma_prog: 0.0\nsigma_read: 0.0\nnu_std: 0.0\n")
    return str(path)


def test_modes_agree_without_noise(toy_files, tmp_path):
    dev = _ideal_device(tmp_path / "dev.yaml")
    for mode in ("dense", "lsrs"):
        assert _simulate(toy_files, tmp_path / mode, "--mode", mode, "--device-config", dev) == EXIT_OK
    a = _rows(tmp_path / "dense" / "predictors.csv")
    b = _rows(tmp_path / "lsrs" / "predictors.csv")
    assert a == b


def test_drift_compensation_flag(toy_files, tmp_path):
    dev = _ideal_device(tmp_path / "dev.yaml")
    assert _simulate(toy_files, tmp_path / "t0", "--device-config", dev) == EXIT_OK
    assert _simulate(toy_files, tmp_path / "late", "--device-config", dev, "--drift-time", "1e7",
                     "--compensate") == EXIT_OK
    a = np.array([[float(v) for k, v in r.items() if k.startswith("p")]
                  for r in _rows(tmp_path / "t0" / "predictors.csv")])
    b = np.array([[float(v) for k, v in r.items() if k.startswith("p")]
                  for r in _rows(tmp_path / "late" / "predictors.csv")])
    np.testing.assert_allclose(b, a, rtol=1e-6)


def test_roc(toy_files, tmp_path):
    assert _simulate(toy_files, tmp_path / "sim") == EXIT_OK
    assert main(["roc", "--predictions", str(tmp_path / "sim" / "predictions.csv"), "-o", str(tmp_path / "r")]) == 0
    auc = json.loads((tmp_path / "r" / "auc.json").read_text())
    assert all(0.0 <= v <= 1.0 for v in auc.values() if isinstance(v, float))
    assert (tmp_path / "r" / "roc.csv").exists()


def test_project_and_sweep(tmp_path):
    assert main(["project", "--preset", "vgg-binaryconnect", "--mode", "lsrs", "-o", str(tmp_path / "p")]) == 0
    report = json.loads((tmp_path / "p" / "report.json").read_text())
    assert report["mode"] == "lsrs" and report["fel"] == 7
    assert main(["sweep", "--preset", "vgg-binaryconnect", "-o", str(tmp_path / "s")]) == EXIT_OK
    rows = _rows(tmp_path / "s" / "sweep.csv")
    for mode in ("dense", "ls", "lsrs"):
        assert sum(r["mode"] == mode for r in rows) == 4


def test_config_file_and_flag_precedence(toy_files, tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(f"network: {toy_files / 'network.yaml'}\npmap: {toy_files / 'pmap.bbnp'}\n"
                   "n_mc: 3\nsubarray_size: 64\n")
    assert main(["split", "--config", str(cfg), "--n-mc", "5", "-o", str(tmp_path / "o")]) == EXIT_OK
    doc = json.loads((tmp_path / "o" / "split.json").read_text())
    assert doc["n_mc"] == 5 and doc["subarray"] == 64


def test_exit_codes(toy_files, tmp_path):
    assert main(["analyze", "--network", str(tmp_path / "missing.yaml"), "--pmap", "x",
                 "-o", str(tmp_path / "m")]) == EXIT_DATA
    assert not (tmp_path / "m").exists()
    assert main(["analyze", "--bogus"]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["generate", "-o", str(tmp_path / "g")]) == EXIT_USAGE
    bad = tmp_path / "bad.yaml"
    bad.write_text("not_a_key: 1\n")
    assert main(["analyze", "--config", str(bad)]) == EXIT_DATA


def test_module_entry_point_exit_codes(tmp_path):
    import subprocess
    import sys
    run = lambda *a: subprocess.run([sys.executable, "-m", "bbnn_imc.cli", *a], capture_output=True, text=True)
    assert run("--version").returncode == 0
    assert run("analyze", "--no-such-flag").returncode == EXIT_USAGE
    bad = run("analyze", "--network", str(tmp_path / "none.yaml"), "--pmap", "none", "-o", str(tmp_path / "o"))
    assert bad.returncode == EXIT_DATA and "error" in bad.stderr
