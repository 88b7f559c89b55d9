"""Tests for the study runner and the simulation-study patterns it reproduces."""
import json

import numpy as np
import pandas as pd
import pytest

from svyfosr.models.dataset import FunctionalDesignDataset
from svyfosr.schemas import Informativeness, SamplingConfig, SuperpopulationConfig
from svyfosr.services.datasets import save_dataset
from svyfosr.services.evaluation import aggregate_runs
from svyfosr.services.study import AGREEMENT_COLUMNS, STUDY_BASIS_DIM, StudyService, study_smoother

METHODS = ["unweighted", "weighted", "brr", "rwyb"]


def _coverage(summary: pd.DataFrame, method: str, coefficient: str = "x") -> float:
    row = summary[(summary["method"] == method) & (summary["coefficient"] == coefficient)]
    return float(row["pointwise_coverage"].iloc[0])


def _weight_linked_population(seed: int = 12) -> FunctionalDesignDataset:
    """Population whose individual outcome level rises with the survey weight."""
    rng = np.random.default_rng(seed)
    n_strata, psus, per_psu, L = 5, 4, 100, 30
    n = n_strata * psus * per_psu
    s = np.linspace(0.0, 1.0, L)
    w = rng.lognormal(0.0, 0.5, n)
    level = 0.8 * (np.log(w) - np.log(w).mean()) / np.log(w).std() + rng.normal(0.0, 0.6, n)
    x = rng.normal(0.0, 1.0, n)
    Y = 0.5 + level[:, None] + np.outer(x, np.sin(2 * np.pi * s)) + rng.normal(0.0, 0.3, (n, L))
    return FunctionalDesignDataset.from_arrays(
        outcomes=Y,
        covariates=x,
        weights=w,
        strata=np.repeat([f"S{h}" for h in range(n_strata)], psus * per_psu),
        psus=np.tile(np.repeat([f"P{c}" for c in range(psus)], per_psu), n_strata),
        grid=s,
        covariate_names=["x"],
    )


def test_study_smoother_caps_basis_at_grid():
    """Test the study basis size and its cap at the grid length."""
    assert study_smoother(50).basis_dim == STUDY_BASIS_DIM
    assert study_smoother(20).basis_dim == 20
    assert study_smoother(50, None).basis_dim is None


def test_run_setting_reports(small_config):
    """Test one reduced setting: one report per sample and method."""
    reports = StudyService.run_setting(
        "tiny", small_config, SamplingConfig(per_psu_n=20), reps=2, num_boots=10,
        methods=["unweighted", "weighted"], sample_seed=4,
    )
    assert len(reports) == 4
    assert [r.method for r in reports] == ["unweighted", "weighted"] * 2
    assert all(r.setting == {"label": "tiny"} for r in reports)
    assert all(r.variance_proportion is not None for r in reports)
    summary = aggregate_runs(reports)
    assert set(summary["runs"]) == {2}


def test_run_empirical_agreement(small_dataset):
    """Test empirical subsampling reports and the significance agreement table."""
    reports, agreement = StudyService.run_empirical(
        small_dataset, ["uniform", "outcome-based"], n=120, reps=1, num_boots=10,
        methods=["weighted"], seed=3,
    )
    assert [r.setting["label"] for r in reports] == ["uniform", "outcome-based"]
    assert list(agreement.columns) == AGREEMENT_COLUMNS
    assert len(agreement) == 4
    assert agreement["pointwise_agreement"].between(0.0, 1.0).all()
    assert agreement["cma_agreement"].between(0.0, 1.0).all()
    summary = StudyService.summarize_agreement(agreement)
    assert set(summary["scheme"]) == {"uniform", "outcome-based"}


def test_write_tables(tmp_path):
    """Test that each table lands in its own CSV."""
    paths = StudyService.write_tables({"a": pd.DataFrame({"v": [1, 2]})}, tmp_path / "out")
    assert [p.name for p in paths] == ["a.csv"]
    assert pd.read_csv(paths[0])["v"].tolist() == [1, 2]


def test_run_study_empirical_mode(tmp_path, small_dataset):
    """Test the study driver in empirical mode end to end."""
    import run_study

    data = save_dataset(small_dataset, tmp_path / "survey.csv")
    out = tmp_path / "study"
    code = run_study.main([
        "--empirical", str(data), "--schemes", "uniform,mixed", "--n", "120",
        "--reps", "1", "--num-boots", "10", "--methods", "weighted", "--out", str(out),
    ])
    assert code == 0
    for name in ("study_runs", "study_summary", "study_agreement", "study_agreement_summary"):
        assert (out / f"{name}.csv").is_file()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["schemes"] == ["uniform", "mixed"]
    assert manifest["results"]["runs"] == 2


@pytest.mark.slow
def test_uniform_sampling_coverage():
    """Test that every method covers the slope near nominal under uniform sampling."""
    reports = StudyService.run_setting(
        "uniform", SuperpopulationConfig(N=100_000, seed=21), SamplingConfig(per_psu_n=100),
        reps=50, num_boots=100, methods=METHODS, sample_seed=21,
    )
    summary = aggregate_runs(reports)
    for method in METHODS:
        assert 0.90 <= _coverage(summary, method) <= 0.99


@pytest.mark.slow
def test_medium_informativeness_coverage():
    """Test that only the unweighted fit loses slope coverage under informative sampling,
    and that only the design-based replicates cover the intercept under random effects."""
    reports = StudyService.run_setting(
        "medium", SuperpopulationConfig(N=100_000, seed=22),
        SamplingConfig(per_psu_n=100, informativeness=Informativeness.MEDIUM),
        reps=50, num_boots=100, methods=METHODS, sample_seed=22,
    )
    summary = aggregate_runs(reports)
    assert _coverage(summary, "unweighted") <= 0.60
    for method in ("weighted", "brr", "rwyb"):
        assert _coverage(summary, method) >= 0.90
    for method in ("unweighted", "weighted"):
        assert _coverage(summary, method, "(Intercept)") <= 0.60
    for method in ("brr", "rwyb"):
        assert _coverage(summary, method, "(Intercept)") >= 0.90


@pytest.mark.slow
def test_weighting_lowers_slope_error_under_high_informativeness():
    """Test that the weighted slope has the lower ISE in at least 90% of samples."""
    reports = StudyService.run_setting(
        "high", SuperpopulationConfig(N=100_000, seed=23),
        SamplingConfig(per_psu_n=100, informativeness=Informativeness.HIGH),
        reps=50, num_boots=10, methods=["unweighted", "weighted"], sample_seed=23,
    )
    x = reports[0].coefficients.index("x")
    unweighted = np.array([r.ise[x] for r in reports if r.method == "unweighted"])
    weighted = np.array([r.ise[x] for r in reports if r.method == "weighted"])
    assert np.mean(weighted < unweighted) >= 0.90


@pytest.mark.slow
def test_outcome_based_subsampling_breaks_unweighted_intercept():
    """Test that outcome-based subsamples bias the unweighted intercept but not the weighted fits."""
    reports, _ = StudyService.run_empirical(
        _weight_linked_population(), ["outcome-based"], n=400, reps=50, num_boots=100,
        methods=["unweighted", "weighted", "brr"], seed=31,
    )
    summary = aggregate_runs(reports)
    assert _coverage(summary, "unweighted", "(Intercept)") < 0.70
    for method in ("weighted", "brr"):
        assert _coverage(summary, method, "(Intercept)") >= 0.90
