"""CSV ingestion and serialization of survey functional datasets."""
import logging
import math
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd

from svyfosr.core.exceptions import DataValidationError, ProbabilityError, SchemaError
from svyfosr.models.dataset import DesignSummary, FunctionalDesignDataset
from svyfosr.models.replicates import StageProbabilities
from svyfosr.schemas import ColumnMap

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

NA_TOKENS = ["", "NA", "N/A", "NaN", "nan", "NULL", "null", "None"]


def _require_columns(df: pd.DataFrame, columns: List[str], path: PathLike) -> None:
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {missing}")


def _numeric_block(df: pd.DataFrame, columns: List[str], what: str) -> np.ndarray:
    block = df[columns].apply(pd.to_numeric, errors="coerce")
    bad = block.isna().to_numpy() & df[columns].notna().to_numpy()
    if bad.any():
        raise DataValidationError(f"non-numeric {what} values", rows=np.flatnonzero(bad.any(axis=1)))
    return block.to_numpy(dtype=float)


def outcome_column_names(L: int, prefix: str = "y_") -> List[str]:
    """Default outcome column names ``y_0001 .. y_LLLL``."""
    width = max(4, len(str(L)))
    return [f"{prefix}{l + 1:0{width}d}" for l in range(L)]


def load_dataset(
    path: PathLike,
    column_map: Optional[ColumnMap] = None,
    grid: Optional[np.ndarray] = None,
) -> FunctionalDesignDataset:
    """
    Read a survey functional dataset from CSV.

    Args:
        path: CSV file with a header row
        column_map: Column names; defaults to ``stratum``, ``psu``, ``weight`` and ``y_*`` outcomes
        grid: Optional grid of the outcome columns; equispaced on [0, 1] when omitted

    Returns:
        Validated FunctionalDesignDataset

    Raises:
        SchemaError if a required column is missing
        DataValidationError if values violate the dataset invariants
    """
    cm = column_map or ColumnMap()
    labels = (cm.stratum, cm.psu)
    # labels such as "NA" or "null" are real stratum/PSU names; only empty cells are missing
    header = pd.read_csv(path, nrows=0).columns
    na_values = {c: [""] if c in labels else NA_TOKENS for c in header}
    df = pd.read_csv(
        path,
        float_precision="round_trip",
        dtype={cm.stratum: str, cm.psu: str},
        keep_default_na=False,
        na_values=na_values,
    )
    _require_columns(df, [cm.weight, cm.stratum, cm.psu], path)

    outcome_cols = [c for c in df.columns if str(c).startswith(cm.outcome_prefix)]
    if not outcome_cols:
        raise SchemaError(f"{path}: no outcome columns with prefix {cm.outcome_prefix!r}")
    design_cols = {cm.weight, cm.stratum, cm.psu}
    if cm.covariates is None:
        covariate_cols = [c for c in df.columns if c not in design_cols and c not in outcome_cols]
    else:
        covariate_cols = list(cm.covariates)
        _require_columns(df, covariate_cols, path)

    missing_labels = df[[cm.stratum, cm.psu]].isna().any(axis=1).to_numpy()
    if missing_labels.any():
        raise DataValidationError(
            "stratum and PSU labels must be present", rows=np.flatnonzero(missing_labels)
        )

    ds = FunctionalDesignDataset.from_arrays(
        outcomes=_numeric_block(df, outcome_cols, "outcome"),
        covariates=(
            _numeric_block(df, covariate_cols, "covariate")
            if covariate_cols
            else np.empty((len(df), 0))
        ),
        weights=_numeric_block(df, [cm.weight], "weight")[:, 0],
        strata=df[cm.stratum].to_numpy(),
        psus=df[cm.psu].to_numpy(),
        grid=grid,
        covariate_names=covariate_cols,
        add_intercept=cm.add_intercept,
        outcome_names=outcome_cols,
    )
    logger.info("loaded %s: n=%d, L=%d, P=%d", path, ds.n, ds.L, ds.P)
    return ds


def dataset_to_frame(ds: FunctionalDesignDataset, column_map: Optional[ColumnMap] = None) -> pd.DataFrame:
    """Dataset as a DataFrame in the input schema; an added intercept is omitted."""
    cm = column_map or ColumnMap()
    X = ds.covariates
    names = list(ds.covariate_names)
    if ds.added_intercept:
        X, names = X[:, 1:], names[1:]
    outcome_cols = list(ds.outcome_names) or outcome_column_names(ds.L, cm.outcome_prefix)
    parts = [
        pd.DataFrame(
            {
                cm.stratum: np.asarray(ds.stratum_labels, dtype=object)[ds.stratum_ids],
                cm.psu: np.asarray(ds.psu_labels, dtype=object)[ds.psu_ids],
                cm.weight: ds.weights,
            }
        ),
        pd.DataFrame(X, columns=names),
        pd.DataFrame(ds.outcomes, columns=outcome_cols),
    ]
    return pd.concat(parts, axis=1)


def save_dataset(ds: FunctionalDesignDataset, path: PathLike, column_map: Optional[ColumnMap] = None) -> Path:
    """Write a dataset as CSV readable by ``load_dataset``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dataset_to_frame(ds, column_map).to_csv(path, index=False)
    return path


def summarize_design(ds: FunctionalDesignDataset) -> DesignSummary:
    """
    Count strata, PSUs and individuals of a dataset.

    Args:
        ds: Dataset

    Returns:
        DesignSummary; the total weight is an exactly rounded sum, so it does not
        depend on row order
    """
    psu_stratum = ds.psu_stratum()
    return DesignSummary(
        n_strata=ds.n_strata,
        psu_counts=np.bincount(psu_stratum, minlength=ds.n_strata),
        stratum_psus=tuple(np.flatnonzero(psu_stratum == h) for h in range(ds.n_strata)),
        individuals_per_psu=np.bincount(ds.psu_ids, minlength=ds.n_psus),
        n_individuals=ds.n,
        total_weight=math.fsum(ds.weights),
        stratum_labels=ds.stratum_labels,
        psu_labels=ds.psu_labels,
        psu_of=np.asarray(ds.psu_ids),
        stratum_of=np.asarray(ds.stratum_ids),
    )


def save_stage_probabilities(
    probs: StageProbabilities, path: PathLike, ds: Optional[FunctionalDesignDataset] = None
) -> Path:
    """Write per-individual stage probabilities, with design labels when a dataset is given."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"pi1": probs.pi1, "pi2": probs.pi2, "single_stage": probs.single_stage})
    if ds is not None:
        frame.insert(0, "psu", np.asarray(ds.psu_labels, dtype=object)[ds.psu_ids])
        frame.insert(0, "stratum", np.asarray(ds.stratum_labels, dtype=object)[ds.stratum_ids])
    frame.to_csv(path, index=False)
    return path


def load_stage_probabilities(
    path: PathLike, ds: Optional[FunctionalDesignDataset] = None
) -> StageProbabilities:
    """
    Read stage probabilities aligned row by row with a dataset.

    Args:
        path: CSV with ``pi1`` and ``pi2`` columns (optionally ``single_stage``)
        ds: Dataset the rows belong to; checked for size and within-PSU constancy

    Returns:
        Validated StageProbabilities
    """
    df = pd.read_csv(path, float_precision="round_trip")
    _require_columns(df, ["pi1", "pi2"], path)
    single = bool(df["single_stage"].astype(bool).any()) if "single_stage" in df.columns else False
    probs = StageProbabilities(
        pi1=df["pi1"].to_numpy(dtype=float),
        pi2=df["pi2"].to_numpy(dtype=float),
        single_stage=single,
    )
    if ds is not None and len(df) != ds.n:
        raise ProbabilityError(f"{path}: {len(df)} probability rows for a dataset of {ds.n}")
    probs.validate(None if ds is None else ds.psu_ids)
    return probs
