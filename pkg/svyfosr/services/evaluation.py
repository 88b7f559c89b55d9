"""Accuracy, coverage and design diagnostics of fitted coefficient functions."""
import logging
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from svyfosr.core.exceptions import DesignError, GridMismatchError, ParameterError
from svyfosr.models.bands import BandEstimate
from svyfosr.models.dataset import FunctionalDesignDataset, normalize_grid
from svyfosr.schemas import EvalReport
from svyfosr.services.inference import band_excludes_zero

logger = logging.getLogger(__name__)

TABLE_MULTIPLIER = 2.0


def ise(beta_hat: np.ndarray, beta_true: np.ndarray, grid: np.ndarray) -> float:
    """
    Integrated squared error by the trapezoidal rule.

    Args:
        beta_hat: Estimated function on the grid
        beta_true: True function on the same grid
        grid: Grid points in [0, 1] (either orientation)

    Returns:
        Nonnegative ISE
    """
    beta_hat = np.asarray(beta_hat, dtype=float)
    beta_true = np.asarray(beta_true, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if not (beta_hat.shape == beta_true.shape == grid.shape):
        raise GridMismatchError(
            f"shapes differ: estimate {beta_hat.shape}, truth {beta_true.shape}, grid {grid.shape}"
        )
    return float(abs(trapezoid((beta_hat - beta_true) ** 2, grid)))


def coverage(
    bands: BandEstimate, beta_true: np.ndarray, multiplier: float = TABLE_MULTIPLIER
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pointwise and joint coverage of the truth.

    Args:
        bands: Fitted bands
        beta_true: P x L true coefficient functions on the band grid
        multiplier: Pointwise half-width in standard errors

    Returns:
        (length-P fraction of grid points inside beta_hat +/- multiplier * se,
         length-P 0/1 indicator of the truth lying inside the joint band everywhere)
    """
    truth = np.asarray(beta_true, dtype=float)
    if truth.shape != bands.beta_hat.shape:
        raise GridMismatchError(f"truth has shape {truth.shape}, bands {bands.beta_hat.shape}")
    half = multiplier * bands.se
    inside = np.abs(truth - bands.beta_hat) <= half
    joint = (truth >= bands.cma_lo) & (truth <= bands.cma_hi)
    return inside.mean(axis=1), joint.all(axis=1).astype(int)


def variance_proportion(ds: FunctionalDesignDataset) -> float:
    """
    Share of outcome variation between (stratum, PSU) cells.

    Functional one-way ANOVA: the integrated between-PSU sum of squares over the
    integrated total sum of squares.

    Raises:
        DesignError with fewer than two PSUs
    """
    if ds.n_psus < 2:
        raise DesignError("variance proportion needs at least two PSUs")
    Y = np.asarray(ds.outcomes, dtype=float)
    grand = Y.mean(axis=0)
    counts = np.bincount(ds.psu_ids, minlength=ds.n_psus)
    sums = np.zeros((ds.n_psus, ds.L))
    np.add.at(sums, ds.psu_ids, Y)
    means = sums / counts[:, None]
    between = (counts[:, None] * (means - grand) ** 2).sum(axis=0)
    total = ((Y - grand) ** 2).sum(axis=0)
    s = ds.grid
    total_int = trapezoid(total, s)
    if not total_int > 0:
        return 0.0
    return float(np.clip(trapezoid(between, s) / total_int, 0.0, 1.0))


def evaluate_run(
    bands: BandEstimate,
    beta_true: np.ndarray,
    method: str,
    setting: Optional[Dict] = None,
    ds: Optional[FunctionalDesignDataset] = None,
    multiplier: float = TABLE_MULTIPLIER,
) -> EvalReport:
    """Accuracy and coverage of one fit, as an EvalReport."""
    truth = np.asarray(beta_true, dtype=float)
    pointwise, joint = coverage(bands, truth, multiplier)
    return EvalReport(
        setting=setting or {},
        method=method,
        coefficients=list(bands.coefficient_names),
        ise=[ise(bands.beta_hat[p], truth[p], bands.grid) for p in range(bands.P)],
        pointwise_coverage=[float(v) for v in pointwise],
        joint_coverage=[int(v) for v in joint],
        mean_se=[float(v) for v in bands.se.mean(axis=1)],
        variance_proportion=variance_proportion(ds) if ds is not None else None,
    )


def reports_to_frame(reports: Iterable[EvalReport]) -> pd.DataFrame:
    """Long format: one row per (run, coefficient)."""
    rows = []
    for run, report in enumerate(reports):
        for p, name in enumerate(report.coefficients):
            row = {f"setting_{k}": v for k, v in report.setting.items()}
            row.update(
                run=run,
                method=report.method,
                coefficient=name,
                ise=report.ise[p],
                pointwise_coverage=report.pointwise_coverage[p],
                joint_coverage=report.joint_coverage[p],
                mean_se=report.mean_se[p] if report.mean_se else np.nan,
                variance_proportion=report.variance_proportion,
            )
            rows.append(row)
    return pd.DataFrame(rows)


def aggregate_runs(
    reports: Sequence[EvalReport], keys: Optional[List[str]] = None
) -> pd.DataFrame:
    """
    Average per-run metrics into a summary table.

    Args:
        reports: Evaluation reports of individual runs
        keys: Grouping columns; method and coefficient are always included, setting
            fields are addressed as ``setting_<name>``

    Returns:
        One row per group with MISE, log10 MISE, mean coverages and the run count
    """
    if not reports:
        raise ParameterError("need at least one evaluation report")
    frame = reports_to_frame(reports)
    group = list(keys or [c for c in frame.columns if c.startswith("setting_")])
    group += [k for k in ("method", "coefficient") if k not in group]
    summary = (
        frame.groupby(group, sort=False, dropna=False)
        .agg(
            mise=("ise", "mean"),
            pointwise_coverage=("pointwise_coverage", "mean"),
            joint_coverage=("joint_coverage", "mean"),
            mean_se=("mean_se", "mean"),
            runs=("run", "count"),
        )
        .reset_index()
    )
    with np.errstate(divide="ignore"):
        summary["log10_mise"] = np.log10(summary["mise"])
    return summary


def band_width_difference(reference: BandEstimate, other: BandEstimate, kind: str = "pointwise") -> np.ndarray:
    """
    P x L percent difference of band widths, 100 * (other - reference) / reference.

    Grid points where the reference band has zero width are NaN.
    """
    if reference.beta_hat.shape != other.beta_hat.shape:
        raise GridMismatchError("band estimates are on different grids or coefficient sets")
    if kind == "pointwise":
        w_ref = reference.pointwise_hi - reference.pointwise_lo
        w_oth = other.pointwise_hi - other.pointwise_lo
    elif kind == "cma":
        w_ref = reference.cma_hi - reference.cma_lo
        w_oth = other.cma_hi - other.cma_lo
    else:
        raise ParameterError(f"kind must be 'pointwise' or 'cma', got {kind!r}")
    safe = np.where(w_ref > 0, w_ref, 1.0)
    return np.where(w_ref > 0, 100.0 * (w_oth - w_ref) / safe, np.nan)


def significance_agreement(a: BandEstimate, b: BandEstimate, kind: str = "pointwise") -> np.ndarray:
    """Length-P share of grid points where two fits agree on whether the band excludes zero."""
    if a.beta_hat.shape != b.beta_hat.shape:
        raise GridMismatchError("band estimates are on different grids or coefficient sets")
    return (band_excludes_zero(a, kind) == band_excludes_zero(b, kind)).mean(axis=1)


def weight_tertile_profiles(ds: FunctionalDesignDataset) -> np.ndarray:
    """3 x L mean outcome curves of the lowest, middle and highest survey-weight tertiles."""
    tertile = pd.qcut(pd.Series(ds.weights).rank(method="first"), 3, labels=False).to_numpy()
    return np.vstack([ds.outcomes[tertile == t].mean(axis=0) for t in range(3)])


def truth_on_grid(truth: np.ndarray, truth_grid: np.ndarray, band_grid: np.ndarray) -> np.ndarray:
    """Check that truth and bands share a grid (after normalization) and return the truth."""
    if np.asarray(truth_grid).shape != np.asarray(band_grid).shape or not np.allclose(
        normalize_grid(truth_grid), normalize_grid(band_grid), rtol=0, atol=1e-10
    ):
        raise GridMismatchError("truth and bands are defined on different grids")
    return np.asarray(truth, dtype=float)
