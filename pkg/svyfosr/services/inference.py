"""Survey-aware function-on-scalar regression: estimation and replicate-based bands."""
import logging
import re
from functools import partial
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
from scipy.stats import norm

from svyfosr.core.config import settings
from svyfosr.core.exceptions import GridMismatchError, InferenceError, ParameterError, SchemaError
from svyfosr.models.bands import BandEstimate
from svyfosr.models.dataset import FunctionalDesignDataset, normalize_grid
from svyfosr.models.family import GlmFamily, get_family
from svyfosr.models.replicates import BootType, StageProbabilities
from svyfosr.schemas import SmootherSpec
from svyfosr.services.glm import fit_pointwise
from svyfosr.services.resampling import generate_replicates
from svyfosr.services.smoothing import smooth_coefficients
from svyfosr.utils.seeding import Stream, stream_rng
from svyfosr.workers.tasks import ReplicateFitContext, fit_replicate_task, run_parallel

logger = logging.getLogger(__name__)

BAND_COLUMNS = ["s", "beta_hat", "se", "pw_lo", "pw_hi", "cma_lo", "cma_hi"]
PERCENTILE_COLUMNS = ["pct_lo", "pct_hi"]

# Monte Carlo draws per chunk when simulating the max statistic.
_MC_CHUNK = 2000


def replicate_correlation(replicates: np.ndarray) -> np.ndarray:
    """
    L x L correlation of replicate curves over the grid.

    Grid points with zero replicate variance are uncorrelated with every other point.
    """
    reps = np.asarray(replicates, dtype=float)
    B, L = reps.shape
    sd = reps.std(axis=0, ddof=1)
    ok = sd > 0
    corr = np.eye(L)
    if ok.any():
        z = (reps[:, ok] - reps[:, ok].mean(axis=0)) / sd[ok]
        corr[np.ix_(ok, ok)] = z.T @ z / (B - 1)
        np.fill_diagonal(corr, 1.0)
    return corr


def max_statistic_quantile(
    corr: np.ndarray,
    alpha: float,
    mc_samples: int,
    rng: np.random.Generator,
) -> float:
    """
    (1 - alpha) quantile of max_s |Z(s)| for Z ~ N(0, corr), by Monte Carlo.

    Negative eigenvalues of ``corr`` are clipped at 1e-10; a warning is logged when the
    matrix is materially indefinite.
    """
    vals, vecs = np.linalg.eigh(np.asarray(corr, dtype=float))
    if vals.min() < -1e-8:
        logger.warning(
            "replicate correlation matrix is not positive semi-definite (min eigenvalue %.3g); "
            "clipping eigenvalues at 1e-10",
            vals.min(),
        )
    root = vecs * np.sqrt(np.clip(vals, 1e-10, None))
    L = root.shape[0]
    maxima = np.empty(mc_samples)
    for start in range(0, mc_samples, _MC_CHUNK):
        stop = min(start + _MC_CHUNK, mc_samples)
        draws = rng.standard_normal((stop - start, L)) @ root.T
        maxima[start:stop] = np.abs(draws).max(axis=1)
    return float(np.quantile(maxima, 1.0 - alpha))


def cma_quantile(
    replicates: np.ndarray,
    alpha: Optional[float] = None,
    mc_samples: Optional[int] = None,
    seed: int = 0,
    index: int = 0,
) -> float:
    """
    Joint-band multiplier for one coefficient from its replicate curves.

    Args:
        replicates: B x L replicate estimates
        alpha: Level; settings.DEFAULT_ALPHA when omitted
        mc_samples: Monte Carlo draws; settings.CMA_MC_SAMPLES when omitted
        seed: Base seed
        index: Coefficient index, selecting an independent random stream

    Returns:
        Quantile of the max absolute statistic, never below z_{1-alpha/2}
    """
    alpha = settings.DEFAULT_ALPHA if alpha is None else alpha
    mc_samples = settings.CMA_MC_SAMPLES if mc_samples is None else mc_samples
    reps = np.asarray(replicates, dtype=float)
    if reps.ndim != 2 or reps.shape[0] < 2:
        raise ParameterError("need a B x L replicate matrix with B >= 2")
    if not np.all(np.isfinite(reps)):
        raise ParameterError("replicate estimates must be finite")
    z = norm.ppf(1.0 - alpha / 2.0)
    q = max_statistic_quantile(
        replicate_correlation(reps), alpha, mc_samples, stream_rng(seed, Stream.CMA, index)
    )
    return max(q, float(z))


def fit_svy_fosr(
    ds: FunctionalDesignDataset,
    family: Union[GlmFamily, str] = "gaussian",
    scheme: Union[BootType, str] = BootType.WEIGHTED,
    B: Optional[int] = None,
    smoother: Optional[SmootherSpec] = None,
    alpha: Optional[float] = None,
    seed: int = 0,
    probs: Optional[StageProbabilities] = None,
    m1: Optional[int] = None,
    weighted: Optional[bool] = None,
    pointwise_multiplier: Optional[float] = None,
    percentile: bool = False,
    keep_replicates: bool = False,
    store_corr: bool = False,
    mc_samples: Optional[int] = None,
    n_workers: Optional[int] = None,
) -> BandEstimate:
    """
    Fit pointwise survey-weighted GLMs, smooth them and build replicate bands.

    Args:
        ds: Dataset
        family: Outcome family
        scheme: Replication scheme (unweighted, weighted, brr, rwyb)
        B: Number of replicates; settings.DEFAULT_NUM_BOOTS when omitted
        smoother: Smoother settings
        alpha: Band level
        seed: Base seed of replicates and the joint-band Monte Carlo
        probs: Stage probabilities, required for rwyb
        m1: RWYB PSU resample size
        weighted: Use survey weights in the fits; defaults to every scheme but unweighted
        pointwise_multiplier: Pointwise band multiplier instead of z_{1-alpha/2}
        percentile: Also compute percentile bands
        keep_replicates: Keep the B x P x L replicate estimates on the result
        store_corr: Keep the per-coefficient replicate correlation matrices
        mc_samples: Monte Carlo draws for the joint quantile
        n_workers: Worker threads for replicate fits

    Returns:
        BandEstimate

    Raises:
        InferenceError if more than MAX_FAILED_REPLICATE_FRACTION of the replicate fits fail
    """
    family = get_family(family)
    scheme = BootType(scheme)
    B = settings.DEFAULT_NUM_BOOTS if B is None else B
    alpha = settings.DEFAULT_ALPHA if alpha is None else alpha
    smoother = smoother or SmootherSpec()
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if B < 2:
        raise ParameterError(f"need at least two replicates, got B={B}")
    if B < settings.MIN_REPLICATES_WARNING:
        logger.warning("B=%d replicates is below %d; bands may be unstable", B, settings.MIN_REPLICATES_WARNING)
    if B < ds.L / 2:
        logger.warning("B=%d is below L/2=%g; the replicate correlation matrix is poorly estimated", B, ds.L / 2)

    if weighted is None:
        weighted = scheme is not BootType.UNWEIGHTED
    base = np.asarray(ds.weights) if weighted else np.ones(ds.n)

    raw = fit_pointwise(ds.covariates, ds.outcomes, base, family, covariate_names=ds.covariate_names)
    if not raw.all_converged:
        logger.warning("point estimate did not converge at %d grid points", int(np.sum(~raw.converged)))
    smoothed = smooth_coefficients(raw, ds.grid, smoother)

    rset = generate_replicates(ds, scheme, B, seed, probs=probs, m1=m1)
    replicate_weights = rset.as_weights(base)
    context = ReplicateFitContext(
        X=ds.covariates,
        Y=ds.outcomes,
        family=family,
        basis=smoothed.basis,
        lambdas=smoothed.lambdas,
        covariate_names=ds.covariate_names,
        tol=settings.IRLS_TOL,
        max_iter=settings.IRLS_MAX_ITER,
    )
    task = partial(_run_replicate, context, replicate_weights)
    results = run_parallel(task, range(B), n_workers)

    failed = [r for r in results if r.beta is None]
    if len(failed) > settings.MAX_FAILED_REPLICATE_FRACTION * B:
        raise InferenceError(
            f"{len(failed)} of {B} replicate fits failed (first: {failed[0].error})",
            failures=len(failed),
            total=B,
        )
    if failed:
        logger.warning("dropping %d of %d failed replicate fits", len(failed), B)
    reps = np.stack([r.beta for r in results if r.beta is not None])  # B' x P x L
    if reps.shape[0] < 2:
        raise InferenceError("fewer than two replicate fits succeeded", failures=len(failed), total=B)

    beta_hat = smoothed.beta_hat
    se = reps.std(axis=0, ddof=1)
    z = float(norm.ppf(1.0 - alpha / 2.0))
    mult = z if pointwise_multiplier is None else float(pointwise_multiplier)
    q95 = np.array([
        cma_quantile(reps[:, p, :], alpha, mc_samples, seed=seed, index=p) for p in range(ds.P)
    ])
    # joint band never inside the pointwise band
    q95 = np.maximum(q95, mult)
    pct_lo = pct_hi = None
    if percentile:
        pct_lo, pct_hi = np.quantile(reps, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0)

    logger.info(
        "fitted %s/%s: B=%d (%d failed), lambdas=%s, q=%s",
        family.kind.value, scheme.value, B, len(failed), smoothed.lambdas, q95,
    )
    return BandEstimate(
        beta_hat=beta_hat,
        se=se,
        pointwise_lo=beta_hat - mult * se,
        pointwise_hi=beta_hat + mult * se,
        cma_lo=beta_hat - q95[:, None] * se,
        cma_hi=beta_hat + q95[:, None] * se,
        q95=q95,
        alpha=alpha,
        z=mult,
        grid=np.asarray(ds.grid),
        original_grid=np.asarray(ds.original_grid),
        coefficient_names=ds.covariate_names,
        lambdas=smoothed.lambdas,
        scheme=scheme.value,
        n_replicates=int(reps.shape[0]),
        n_failed=len(failed),
        seed=seed,
        corr=tuple(replicate_correlation(reps[:, p, :]) for p in range(ds.P)) if store_corr else None,
        percentile_lo=pct_lo,
        percentile_hi=pct_hi,
        replicate_betas=reps if keep_replicates else None,
    )


def _run_replicate(context: ReplicateFitContext, weights: np.ndarray, b: int):
    return fit_replicate_task(context, b, weights[b])


def band_excludes_zero(bands: BandEstimate, kind: str = "pointwise") -> np.ndarray:
    """P x L mask of grid points where the band lies entirely above or below zero."""
    if kind == "pointwise":
        lo, hi = bands.pointwise_lo, bands.pointwise_hi
    elif kind == "cma":
        lo, hi = bands.cma_lo, bands.cma_hi
    else:
        raise ParameterError(f"kind must be 'pointwise' or 'cma', got {kind!r}")
    return (lo > 0) | (hi < 0)


def coefficient_key(name: str) -> str:
    """File-safe key of a coefficient name, e.g. ``(Intercept)`` -> ``intercept``."""
    return re.sub(r"[^0-9a-z]+", "_", name.lower()).strip("_") or "coef"


def band_frame(bands: BandEstimate, p: int) -> pd.DataFrame:
    """Band of coefficient ``p`` as a table over the original grid, with percentile columns when fitted."""
    frame = pd.DataFrame(
        {
            "s": bands.original_grid,
            "beta_hat": bands.beta_hat[p],
            "se": bands.se[p],
            "pw_lo": bands.pointwise_lo[p],
            "pw_hi": bands.pointwise_hi[p],
            "cma_lo": bands.cma_lo[p],
            "cma_hi": bands.cma_hi[p],
        },
        columns=BAND_COLUMNS,
    )
    if bands.percentile_lo is not None:
        frame[PERCENTILE_COLUMNS[0]] = bands.percentile_lo[p]
        frame[PERCENTILE_COLUMNS[1]] = bands.percentile_hi[p]
    return frame


def write_band_csvs(bands: BandEstimate, out_dir: Union[str, Path], prefix: str = "band") -> List[Path]:
    """
    Write one CSV per coefficient.

    Args:
        bands: Fitted bands
        out_dir: Output directory
        prefix: File name prefix

    Returns:
        Paths written, in coefficient order
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for p, name in enumerate(bands.coefficient_names):
        path = out_dir / f"{prefix}_{coefficient_key(name)}.csv"
        band_frame(bands, p).to_csv(path, index=False)
        paths.append(path)
    return paths


def load_band_csvs(paths: Dict[str, Union[str, Path]], alpha: float = 0.05, scheme: str = "") -> BandEstimate:
    """
    Rebuild a BandEstimate from per-coefficient band CSVs.

    Args:
        paths: Coefficient key -> CSV path, in coefficient order
        alpha: Level the bands were built at
        scheme: Replication scheme label

    Returns:
        BandEstimate without replicate detail
    """
    frames = []
    for key, path in paths.items():
        frame = pd.read_csv(path, float_precision="round_trip")
        missing = [c for c in BAND_COLUMNS if c not in frame.columns]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        frames.append(frame)
    grid = frames[0]["s"].to_numpy(dtype=float)
    for frame, path in zip(frames[1:], list(paths.values())[1:]):
        if not np.array_equal(frame["s"].to_numpy(dtype=float), grid):
            raise GridMismatchError(f"{path}: grid differs from the other band files")

    def stack(col: str) -> np.ndarray:
        return np.stack([f[col].to_numpy(dtype=float) for f in frames])

    beta_hat, se = stack("beta_hat"), stack("se")
    z = float(norm.ppf(1.0 - alpha / 2.0))
    positive = se > 0
    safe_se = np.where(positive, se, 1.0)
    q = np.where(positive, (stack("cma_hi") - beta_hat) / safe_se, -np.inf).max(axis=1)
    q = np.where(np.isfinite(q), q, z)
    mult = np.where(positive, (stack("pw_hi") - beta_hat) / safe_se, -np.inf).max()
    has_pct = all(c in f.columns for f in frames for c in PERCENTILE_COLUMNS)
    return BandEstimate(
        beta_hat=beta_hat,
        se=se,
        pointwise_lo=stack("pw_lo"),
        pointwise_hi=stack("pw_hi"),
        cma_lo=stack("cma_lo"),
        cma_hi=stack("cma_hi"),
        q95=q,
        alpha=alpha,
        z=float(mult) if np.isfinite(mult) else z,
        grid=normalize_grid(grid),
        original_grid=grid,
        coefficient_names=tuple(paths.keys()),
        lambdas=np.full(len(frames), np.nan),
        scheme=scheme,
        n_replicates=0,
        percentile_lo=stack("pct_lo") if has_pct else None,
        percentile_hi=stack("pct_hi") if has_pct else None,
    )


def bands_summary(bands: BandEstimate) -> Dict[str, Dict[str, float]]:
    """Per-coefficient penalty and joint quantile, for run manifests."""
    return {
        name: {"lambda": float(bands.lambdas[p]), "q95": float(bands.q95[p])}
        for p, name in enumerate(bands.coefficient_names)
    }
