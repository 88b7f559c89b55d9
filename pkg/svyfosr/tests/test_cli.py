"""End-to-end tests of the command-line subcommands."""
import json

import numpy as np
import pandas as pd
import pytest

from svyfosr.cli.main import main, resolve_simulation_config
from svyfosr.core.exceptions import ConfigError
from svyfosr.services.datasets import save_dataset

CONFIG = "N=2000\nH=3\nPSU_MIN=4\nPSU_MAX=5\nL=12\nPILOT_N=200\nPER_PSU_N=20\nSEED=3\n"


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    config = root / "sim.env"
    config.write_text(CONFIG)
    assert main(["simulate", "--config", str(config), "--out", str(root / "data")]) == 0
    return root


@pytest.fixture(scope="module")
def fitted(simulated):
    out = simulated / "fit"
    code = main([
        "fit", "--data", str(simulated / "data" / "dataset_r001.csv"),
        "--out", str(out), "--num-boots", "20", "--seed", "5",
    ])
    assert code == 0
    return out


def test_simulate_writes_outputs(simulated):
    """Test the files written by simulate."""
    data = simulated / "data"
    for name in ("truth.csv", "dataset_r001.csv", "probabilities_r001.csv", "manifest.json"):
        assert (data / name).is_file()
    truth = pd.read_csv(data / "truth.csv")
    assert list(truth.columns) == ["s", "intercept", "x", "closed_intercept", "closed_x"]
    assert len(truth) == 12
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["config"]["superpopulation"]["N"] == 2000
    assert manifest["config"]["sampling"]["per_psu_n"] == 20


def test_fit_writes_bands_and_manifest(fitted):
    """Test band files and the fit manifest."""
    assert (fitted / "band_intercept.csv").is_file()
    assert (fitted / "band_x.csv").is_file()
    manifest = json.loads((fitted / "manifest.json").read_text())
    assert manifest["subcommand"] == "fit"
    assert manifest["config"]["boot_type"] == "weighted"
    assert set(manifest["results"]["coefficients"]) == {"(Intercept)", "x"}


def test_fit_is_reproducible(simulated, fitted):
    """Test that repeating a fit with the same seed gives identical band files."""
    again = simulated / "fit_again"
    code = main([
        "fit", "--data", str(simulated / "data" / "dataset_r001.csv"),
        "--out", str(again), "--num-boots", "20", "--seed", "5",
    ])
    assert code == 0
    for name in ("band_intercept.csv", "band_x.csv"):
        assert (again / name).read_bytes() == (fitted / name).read_bytes()


def test_fit_rwyb_with_probabilities(simulated):
    """Test a two-stage bootstrap fit from simulated probabilities."""
    data = simulated / "data"
    code = main([
        "fit", "--data", str(data / "dataset_r001.csv"),
        "--probabilities", str(data / "probabilities_r001.csv"),
        "--boot-type", "rwyb", "--num-boots", "20", "--out", str(simulated / "rwyb"),
        "--save-replicates",
    ])
    assert code == 0
    assert (simulated / "rwyb" / "replicates.csv").is_file()


def test_evaluate(simulated, fitted):
    """Test evaluation tables against the simulated truth."""
    out = simulated / "eval"
    code = main([
        "evaluate", "--truth", str(simulated / "data" / "truth.csv"),
        "--bands", str(fitted), "--out", str(out),
    ])
    assert code == 0
    summary = pd.read_csv(out / "evaluation_summary.csv")
    assert list(summary["method"]) == ["weighted"]
    assert np.all(summary["mise"] >= 0)
    runs = pd.read_csv(out / "evaluation_runs.csv")
    assert set(runs["coefficient"]) == {"intercept", "x"}


def test_evaluate_missing_truth(simulated, fitted):
    """Test that a missing truth file is an input error."""
    code = main([
        "evaluate", "--truth", str(simulated / "nope.csv"),
        "--bands", str(fitted), "--out", str(simulated / "eval_missing"),
    ])
    assert code == 2


def test_evaluate_grid_mismatch(simulated, fitted):
    """Test that truth on a different grid is an input error."""
    truth = pd.read_csv(simulated / "data" / "truth.csv").iloc[:-1]
    path = simulated / "short_truth.csv"
    truth.to_csv(path, index=False)
    code = main([
        "evaluate", "--truth", str(path), "--bands", str(fitted),
        "--out", str(simulated / "eval_mismatch"),
    ])
    assert code == 2


def test_rwyb_without_probabilities(simulated):
    """Test that RWYB without a probability file exits with an input error."""
    code = main([
        "fit", "--data", str(simulated / "data" / "dataset_r001.csv"),
        "--boot-type", "rwyb", "--out", str(simulated / "no_probs"),
    ])
    assert code == 2
    assert not (simulated / "no_probs" / "band_x.csv").exists()


def test_unknown_config_key(tmp_path):
    """Test that an unknown configuration key exits with an input error."""
    config = tmp_path / "bad.env"
    config.write_text("N=2000\nNOT_A_KEY=1\n")
    assert main(["simulate", "--config", str(config), "--out", str(tmp_path / "out")]) == 2


def test_resolve_simulation_config(tmp_path):
    """Test config-file parsing, overrides and null SNR values."""
    config = tmp_path / "sim.env"
    config.write_text("n=5000\nsnr_b=none\nINFORMATIVENESS=high\n")
    pcfg, scfg = resolve_simulation_config(str(config), {"L": 30, "H": None})
    assert pcfg.N == 5000
    assert pcfg.L == 30
    assert pcfg.snr_b is None
    assert scfg.informativeness.value == "high"
    with pytest.raises(ConfigError) as exc:
        resolve_simulation_config(None, {"N": "-5"})
    assert exc.value.key == "N"


def test_simulate_without_random_effects(tmp_path):
    """Test that weights are constant within PSUs of a non-informative sample."""
    config = tmp_path / "sim.env"
    config.write_text(CONFIG)
    code = main([
        "simulate", "--config", str(config), "--out", str(tmp_path / "out"),
        "--re-mode", "none", "--informativeness", "none", "--per-psu-n", "15", "--seed", "4",
    ])
    assert code == 0
    data = pd.read_csv(tmp_path / "out" / "dataset_r001.csv")
    assert (data.groupby(["stratum", "psu"])["weight"].nunique() == 1).all()


def test_subsample(tmp_path, small_dataset):
    """Test subsample output and that single-stage probabilities cannot drive RWYB."""
    source = save_dataset(small_dataset, tmp_path / "full.csv")
    out = tmp_path / "sub"
    code = main([
        "subsample", "--data", str(source), "--out", str(out),
        "--scheme", "weight-based", "--n", "80", "--reps", "2", "--seed", "1",
    ])
    assert code == 0
    for name in ("truth.csv", "subsample_r001.csv", "subsample_r002.csv", "probabilities_r002.csv"):
        assert (out / name).is_file()
    code = main([
        "fit", "--data", str(out / "subsample_r001.csv"),
        "--probabilities", str(out / "probabilities_r001.csv"),
        "--boot-type", "rwyb", "--num-boots", "10", "--out", str(tmp_path / "fit"),
    ])
    assert code == 2


@pytest.mark.slow
def test_simulate_batch(tmp_path):
    """Test that a batch run writes one directory per setting."""
    config = tmp_path / "sim.env"
    config.write_text(CONFIG)
    assert main(["simulate", "--config", str(config), "--batch", "--out", str(tmp_path / "grid")]) == 0
    manifest = json.loads((tmp_path / "grid" / "manifest.json").read_text())
    for name in manifest["results"]["settings"]:
        assert (tmp_path / "grid" / name / "truth.csv").is_file()


@pytest.mark.parametrize("flags", [["--basis-dim", "3"], ["--lambda", "-1"], ["--basis-dim", "500"]])
def test_fit_rejects_bad_smoother(simulated, flags):
    """Test that invalid smoother settings exit with an input error and write no bands."""
    out = simulated / f"bad_smoother_{flags[0].strip('-')}_{flags[1]}"
    code = main([
        "fit", "--data", str(simulated / "data" / "dataset_r001.csv"),
        "--out", str(out), "--num-boots", "5", *flags,
    ])
    assert code == 2
    assert not (out / "band_x.csv").exists()


def test_fit_writes_percentile_columns(simulated):
    """Test that --percentile adds percentile columns that evaluate can read back."""
    out = simulated / "pct"
    code = main([
        "fit", "--data", str(simulated / "data" / "dataset_r001.csv"),
        "--out", str(out), "--num-boots", "20", "--seed", "5", "--percentile",
    ])
    assert code == 0
    band = pd.read_csv(out / "band_x.csv")
    assert list(band.columns[-2:]) == ["pct_lo", "pct_hi"]
    assert np.all(band["pct_lo"] <= band["pct_hi"])
    assert json.loads((out / "manifest.json").read_text())["config"]["percentile"] is True
    code = main([
        "evaluate", "--truth", str(simulated / "data" / "truth.csv"),
        "--bands", str(out), "--out", str(simulated / "eval_pct"),
    ])
    assert code == 0


def test_fit_without_percentile_keeps_band_columns(fitted):
    """Test that percentile columns are only written on request."""
    band = pd.read_csv(fitted / "band_x.csv")
    assert list(band.columns) == ["s", "beta_hat", "se", "pw_lo", "pw_hi", "cma_lo", "cma_hi"]
