"""Survey-structured functional dataset and its design summary."""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from svyfosr.core.exceptions import DataValidationError

logger = logging.getLogger(__name__)

INTERCEPT = "(Intercept)"


def _frozen(a: np.ndarray, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def normalize_grid(grid: np.ndarray) -> np.ndarray:
    """Map a strictly increasing grid affinely onto [0, 1]."""
    grid = np.asarray(grid, dtype=float)
    return (grid - grid[0]) / (grid[-1] - grid[0])


@dataclass(frozen=True)
class FunctionalDesignDataset:
    """
    n individuals with an L-point functional outcome, P covariates, a survey weight,
    a stratum and a PSU.

    Stratum and PSU labels are mapped to dense integer indices; PSU indices are unique
    across strata. Arrays are read-only once constructed.
    """
    outcomes: np.ndarray
    covariates: np.ndarray
    weights: np.ndarray
    stratum_ids: np.ndarray
    psu_ids: np.ndarray
    grid: np.ndarray
    original_grid: np.ndarray
    covariate_names: Tuple[str, ...]
    stratum_labels: Tuple[str, ...]
    psu_labels: Tuple[str, ...]
    added_intercept: bool = False
    outcome_names: Tuple[str, ...] = field(default=())

    @property
    def n(self) -> int:
        return self.outcomes.shape[0]

    @property
    def L(self) -> int:
        return self.outcomes.shape[1]

    @property
    def P(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_psus(self) -> int:
        return len(self.psu_labels)

    @property
    def n_strata(self) -> int:
        return len(self.stratum_labels)

    def psu_stratum(self) -> np.ndarray:
        """Stratum index of every internal PSU index."""
        out = np.empty(self.n_psus, dtype=int)
        out[self.psu_ids] = self.stratum_ids
        return out

    @classmethod
    def from_arrays(
        cls,
        outcomes: np.ndarray,
        covariates: np.ndarray,
        weights: np.ndarray,
        strata: Sequence,
        psus: Sequence,
        grid: Optional[np.ndarray] = None,
        covariate_names: Optional[Sequence[str]] = None,
        add_intercept: bool = True,
        outcome_names: Optional[Sequence[str]] = None,
    ) -> "FunctionalDesignDataset":
        """
        Build and validate a dataset from raw arrays.

        Args:
            outcomes: n x L functional outcomes
            covariates: n x P' covariates (without intercept when add_intercept)
            weights: length-n survey weights
            strata: length-n stratum labels (any hashable; compared as strings)
            psus: length-n PSU labels, unique within a stratum
            grid: length-L strictly increasing grid; defaults to linspace(0, 1, L)
            covariate_names: names for the covariate columns
            add_intercept: prepend an intercept column unless one is already present
            outcome_names: names of the outcome columns, kept for serialization

        Returns:
            Validated FunctionalDesignDataset

        Raises:
            DataValidationError on any invariant violation
        """
        Y = np.asarray(outcomes, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        X = np.asarray(covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n, L = Y.shape
        names = list(covariate_names) if covariate_names is not None else [
            f"x{j + 1}" for j in range(X.shape[1])
        ]
        if X.shape[0] != n or len(names) != X.shape[1]:
            raise DataValidationError("covariates do not match outcomes in shape")

        added = False
        has_intercept = X.shape[1] > 0 and np.any(np.all(X == 1.0, axis=0))
        if add_intercept and not has_intercept:
            X = np.column_stack([np.ones(n), X])
            names = [INTERCEPT] + names
            added = True

        w = np.asarray(weights, dtype=float)
        if w.shape != (n,):
            raise DataValidationError("weights must have one entry per individual")
        bad_w = ~np.isfinite(w) | (w <= 0)
        if bad_w.any():
            raise DataValidationError(
                "weights must be finite and positive", rows=np.flatnonzero(bad_w)
            )

        bad_y = ~np.isfinite(Y).all(axis=1)
        if bad_y.any():
            raise DataValidationError(
                "outcomes must be complete and finite", rows=np.flatnonzero(bad_y)
            )
        bad_x = ~np.isfinite(X).all(axis=1)
        if bad_x.any():
            raise DataValidationError("covariates must be finite", rows=np.flatnonzero(bad_x))
        if n < X.shape[1]:
            raise DataValidationError(f"need n >= P, got n={n}, P={X.shape[1]}")

        if grid is None:
            grid = np.linspace(0.0, 1.0, L)
        grid = np.asarray(grid, dtype=float)
        if grid.shape != (L,) or L < 2:
            raise DataValidationError(f"grid must have length L={L} >= 2")
        if not np.all(np.diff(grid) > 0):
            raise DataValidationError("grid must be strictly increasing")

        strata_s = pd.Series(np.asarray(strata)).astype(str)
        psus_s = pd.Series(np.asarray(psus)).astype(str)
        if len(strata_s) != n or len(psus_s) != n:
            raise DataValidationError("stratum and PSU labels must have one entry per individual")
        stratum_ids, stratum_labels = pd.factorize(strata_s, sort=True)

        pairs = pd.DataFrame({"stratum": strata_s, "psu": psus_s})
        strata_per_psu = pairs.drop_duplicates().groupby("psu")["stratum"].nunique()
        reused = strata_per_psu.index[strata_per_psu > 1].tolist()
        if reused:
            logger.warning(
                "PSU labels %s appear in more than one stratum; treated as distinct PSUs",
                reused[:10],
            )
        psu_ids = pairs.groupby(["stratum", "psu"], sort=True).ngroup().to_numpy()
        psu_index = pairs.drop_duplicates().sort_values(["stratum", "psu"])
        psu_labels = tuple(psu_index["psu"].tolist())

        return cls(
            outcomes=_frozen(Y),
            covariates=_frozen(X),
            weights=_frozen(w),
            stratum_ids=_frozen(stratum_ids, dtype=int),
            psu_ids=_frozen(psu_ids, dtype=int),
            grid=_frozen(normalize_grid(grid)),
            original_grid=_frozen(grid),
            covariate_names=tuple(names),
            stratum_labels=tuple(str(s) for s in stratum_labels),
            psu_labels=psu_labels,
            added_intercept=added,
            outcome_names=tuple(outcome_names) if outcome_names is not None else (),
        )

    def with_weights(self, weights: np.ndarray) -> "FunctionalDesignDataset":
        """Copy of the dataset carrying different survey weights."""
        w = np.asarray(weights, dtype=float)
        bad = ~np.isfinite(w) | (w <= 0)
        if w.shape != (self.n,) or bad.any():
            raise DataValidationError(
                "weights must be finite, positive, one per individual",
                rows=np.flatnonzero(bad) if w.shape == (self.n,) else None,
            )
        return replace(self, weights=_frozen(w))

    def subset(self, rows: np.ndarray, weights: Optional[np.ndarray] = None) -> "FunctionalDesignDataset":
        """Rows of the dataset as a new dataset; labels are re-canonicalized."""
        rows = np.asarray(rows)
        strata = np.asarray(self.stratum_labels, dtype=object)[self.stratum_ids[rows]]
        psu_raw = np.asarray(self.psu_labels, dtype=object)[self.psu_ids[rows]]
        X = self.covariates[rows]
        names = list(self.covariate_names)
        if self.added_intercept:
            X = X[:, 1:]
            names = names[1:]
        return FunctionalDesignDataset.from_arrays(
            outcomes=self.outcomes[rows],
            covariates=X,
            weights=self.weights[rows] if weights is None else weights,
            strata=strata,
            psus=psu_raw,
            grid=self.original_grid,
            covariate_names=names,
            add_intercept=self.added_intercept,
            outcome_names=self.outcome_names or None,
        )


@dataclass(frozen=True)
class DesignSummary:
    """Counts of the stratified two-stage design behind a dataset."""
    n_strata: int
    psu_counts: np.ndarray
    stratum_psus: Tuple[np.ndarray, ...]
    individuals_per_psu: np.ndarray
    n_individuals: int
    total_weight: float
    stratum_labels: Tuple[str, ...]
    psu_labels: Tuple[str, ...]
    psu_of: np.ndarray
    stratum_of: np.ndarray

    @property
    def n_psus(self) -> int:
        return int(self.psu_counts.sum())
