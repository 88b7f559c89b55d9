"""Tests for dataset ingestion and design summaries."""
import logging

import numpy as np
import pandas as pd
import pytest

from svyfosr.core.exceptions import DataValidationError, ProbabilityError, SchemaError
from svyfosr.models.dataset import INTERCEPT, FunctionalDesignDataset
from svyfosr.schemas import ColumnMap
from svyfosr.services.datasets import (
    load_dataset,
    load_stage_probabilities,
    outcome_column_names,
    save_dataset,
    save_stage_probabilities,
    summarize_design,
)


def _write_csv(path, rows):
    pd.DataFrame(rows).to_csv(path, index=False)
    return path


def test_load_minimal_dataset(tmp_path):
    """Test loading a 3-row CSV with L=2 and one covariate."""
    path = _write_csv(
        tmp_path / "d.csv",
        {
            "stratum": ["a", "a", "b"],
            "psu": ["1", "2", "1"],
            "weight": [1.0, 2.0, 3.0],
            "x": [0.1, 0.2, 0.3],
            "y_0001": [1.0, 2.0, 3.0],
            "y_0002": [4.0, 5.0, 6.0],
        },
    )
    ds = load_dataset(path)
    assert ds.n == 3
    assert ds.L == 2
    assert ds.covariate_names == (INTERCEPT, "x")
    assert np.array_equal(ds.grid, [0.0, 1.0])
    assert np.all(ds.covariates[:, 0] == 1.0)


def test_zero_weight_rejected_with_rows(tmp_path):
    """Test that a zero weight is a validation error naming the row."""
    path = _write_csv(
        tmp_path / "d.csv",
        {"stratum": ["a", "a"], "psu": ["1", "2"], "weight": [1.0, 0.0], "y_0001": [1.0, 2.0], "y_0002": [0.0, 1.0]},
    )
    with pytest.raises(DataValidationError) as exc:
        load_dataset(path)
    assert exc.value.rows == [1]


def test_missing_column_is_schema_error(tmp_path):
    """Test that a missing weight column raises SchemaError."""
    path = _write_csv(tmp_path / "d.csv", {"stratum": ["a"], "psu": ["1"], "y_0001": [1.0]})
    with pytest.raises(SchemaError):
        load_dataset(path)


def test_missing_outcome_rejected(tmp_path):
    """Test that incomplete functional observations are rejected."""
    path = _write_csv(
        tmp_path / "d.csv",
        {"stratum": ["a", "a"], "psu": ["1", "2"], "weight": [1.0, 1.0], "y_0001": [1.0, np.nan], "y_0002": [0.0, 1.0]},
    )
    with pytest.raises(DataValidationError):
        load_dataset(path)


def test_psu_label_reused_across_strata(caplog):
    """Test that a PSU label shared by two strata becomes two distinct PSUs."""
    with caplog.at_level(logging.WARNING):
        ds = FunctionalDesignDataset.from_arrays(
            outcomes=np.ones((4, 3)),
            covariates=np.arange(4.0),
            weights=np.ones(4),
            strata=["A", "A", "B", "B"],
            psus=["1", "1", "1", "1"],
        )
    assert ds.n_psus == 2
    assert ds.psu_ids[0] != ds.psu_ids[2]
    assert "more than one stratum" in caplog.text


def test_grid_must_increase():
    """Test that a non-increasing grid is rejected."""
    with pytest.raises(DataValidationError):
        FunctionalDesignDataset.from_arrays(
            outcomes=np.ones((3, 3)),
            covariates=np.arange(3.0),
            weights=np.ones(3),
            strata=["a"] * 3,
            psus=["1", "2", "3"],
            grid=[0.0, 0.5, 0.5],
        )


def test_grid_normalized_and_original_kept():
    """Test that grids in other units are mapped to [0, 1] with the original kept."""
    ds = FunctionalDesignDataset.from_arrays(
        outcomes=np.ones((3, 3)),
        covariates=np.arange(3.0),
        weights=np.ones(3),
        strata=["a"] * 3,
        psus=["1", "2", "3"],
        grid=[10.0, 20.0, 40.0],
    )
    assert np.allclose(ds.grid, [0.0, 1.0 / 3.0, 1.0])
    assert np.array_equal(ds.original_grid, [10.0, 20.0, 40.0])


def test_dataset_arrays_read_only(small_dataset):
    """Test that dataset arrays cannot be modified in place."""
    with pytest.raises(ValueError):
        small_dataset.weights[0] = 5.0


def test_save_then_load_is_exact(tmp_path, small_dataset):
    """Test that serialization preserves every numeric field bit for bit."""
    path = save_dataset(small_dataset, tmp_path / "d.csv")
    back = load_dataset(path)
    assert np.array_equal(back.outcomes, small_dataset.outcomes)
    assert np.array_equal(back.covariates, small_dataset.covariates)
    assert np.array_equal(back.weights, small_dataset.weights)
    assert np.array_equal(back.psu_ids, small_dataset.psu_ids)
    assert back.covariate_names == small_dataset.covariate_names


def test_custom_column_map(tmp_path):
    """Test reading a CSV with non-default column names."""
    path = _write_csv(
        tmp_path / "d.csv",
        {
            "SDMVSTRA": [1, 1, 2, 2],
            "SDMVPSU": [1, 2, 1, 2],
            "wt": [1.0, 2.0, 1.5, 2.5],
            "age": [30.0, 40.0, 50.0, 60.0],
            "other": [0, 0, 0, 0],
            "act_1": [0.1, 0.2, 0.3, 0.4],
            "act_2": [0.5, 0.6, 0.7, 0.8],
        },
    )
    cm = ColumnMap(outcome_prefix="act_", covariates=["age"], weight="wt", stratum="SDMVSTRA", psu="SDMVPSU")
    ds = load_dataset(path, cm)
    assert ds.covariate_names == (INTERCEPT, "age")
    assert ds.n_strata == 2
    assert ds.n_psus == 4


def test_summarize_design_counts():
    """Test strata, PSU and individual counts of a balanced design."""
    H, C, I = 30, 2, 100
    n = H * C * I
    ds = FunctionalDesignDataset.from_arrays(
        outcomes=np.zeros((n, 2)),
        covariates=np.arange(n, dtype=float),
        weights=np.ones(n),
        strata=np.repeat(np.arange(H), C * I),
        psus=np.tile(np.repeat(np.arange(C), I), H),
    )
    summary = summarize_design(ds)
    assert summary.n_strata == 30
    assert np.all(summary.psu_counts == 2)
    assert summary.n_individuals == 6000
    assert summary.total_weight == n
    assert summary.n_psus == 60


def test_summarize_design_row_order_invariant(small_dataset):
    """Test that the total weight does not depend on row order."""
    perm = np.random.default_rng(0).permutation(small_dataset.n)
    shuffled = small_dataset.subset(perm)
    a, b = summarize_design(small_dataset), summarize_design(shuffled)
    assert a.total_weight == b.total_weight
    assert np.array_equal(np.sort(a.individuals_per_psu), np.sort(b.individuals_per_psu))
    assert a.total_weight == pytest.approx(float(np.sum(small_dataset.weights)))


def test_outcome_column_names():
    """Test default outcome names."""
    assert outcome_column_names(3) == ["y_0001", "y_0002", "y_0003"]


def test_stage_probabilities_roundtrip(tmp_path, small_dataset, stage_probs):
    """Test writing and reading stage probabilities aligned to a dataset."""
    path = save_stage_probabilities(stage_probs, tmp_path / "p.csv", small_dataset)
    back = load_stage_probabilities(path, small_dataset)
    assert np.array_equal(back.pi1, stage_probs.pi1)
    assert np.array_equal(back.pi2, stage_probs.pi2)
    assert not back.single_stage


def test_stage_probabilities_pi1_constant_within_psu(tmp_path, small_dataset, stage_probs):
    """Test that pi1 varying inside a PSU is rejected."""
    pi1 = np.array(stage_probs.pi1)
    pi1[0] = 0.99
    pd.DataFrame({"pi1": pi1, "pi2": stage_probs.pi2}).to_csv(tmp_path / "p.csv", index=False)
    with pytest.raises(ProbabilityError):
        load_stage_probabilities(tmp_path / "p.csv", small_dataset)


def test_stage_probabilities_out_of_range(tmp_path):
    """Test that probabilities outside (0, 1] are rejected."""
    pd.DataFrame({"pi1": [0.5, 1.2], "pi2": [0.5, 0.5]}).to_csv(tmp_path / "p.csv", index=False)
    with pytest.raises(ProbabilityError):
        load_stage_probabilities(tmp_path / "p.csv")


def test_na_like_labels_are_kept(tmp_path):
    """Test that strata and PSUs named NA or null survive a save and reload."""
    ds = FunctionalDesignDataset.from_arrays(
        outcomes=np.arange(12.0).reshape(4, 3),
        covariates=np.array([0.1, 0.2, 0.3, 0.4]),
        weights=np.ones(4),
        strata=["NA", "NA", "null", "null"],
        psus=["NA", "1", "NA", "2"],
        covariate_names=["x"],
    )
    back = load_dataset(save_dataset(ds, tmp_path / "d.csv"))
    assert back.n_strata == 2
    assert back.n_psus == 4
    assert set(back.stratum_labels) == {"NA", "null"}
    assert np.array_equal(back.outcomes, ds.outcomes)


def test_na_token_in_outcome_rejected(tmp_path):
    """Test that an NA outcome cell still counts as missing."""
    path = tmp_path / "d.csv"
    path.write_text("stratum,psu,weight,y_0001,y_0002\nNA,1,1.0,NA,1.0\nNA,2,1.0,2.0,3.0\n")
    with pytest.raises(DataValidationError):
        load_dataset(path)
