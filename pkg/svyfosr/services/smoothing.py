"""Penalized B-spline (P-spline) smoothing of raw coefficient functions."""
import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import LinAlgError, eigh
from scipy.optimize import minimize_scalar

from svyfosr.core.config import settings
from svyfosr.core.exceptions import NumericalError, SmootherSpecError
from svyfosr.models.coefficients import RawCoefficientMatrix, SmoothedCoefficients, SplineBasis
from svyfosr.models.dataset import normalize_grid
from svyfosr.schemas import SmootherSpec

logger = logging.getLogger(__name__)


def default_basis_dim(L: int, degree: int = 3, penalty_order: int = 2) -> int:
    """min(ceil(L/4), MAX_DEFAULT_BASIS_DIM), raised to the smallest usable size."""
    needed = max(penalty_order + 2, degree + 1)
    return max(needed, min(math.ceil(L / 4), settings.MAX_DEFAULT_BASIS_DIM))


def padded_knots(n_basis: int, degree: int) -> np.ndarray:
    """Equally spaced knots on [0, 1] padded with ``degree`` knots on each side."""
    inner = np.linspace(0.0, 1.0, n_basis - degree + 1)
    dx = inner[1] - inner[0]
    pad = dx * np.arange(degree, 0, -1)
    return np.concatenate([inner[0] - pad, inner, inner[-1] + pad[::-1]])


def build_basis(grid: np.ndarray, spec: Optional[SmootherSpec] = None) -> SplineBasis:
    """
    Evaluate the P-spline basis on a grid and decompose its penalty.

    Args:
        grid: Strictly increasing grid, any units (normalized to [0, 1] internally)
        spec: Smoother settings; defaults when omitted

    Returns:
        SplineBasis ready for repeated smoothing

    Raises:
        SmootherSpecError if the grid is shorter than the basis
    """
    spec = spec or SmootherSpec()
    s = normalize_grid(grid)
    L = s.size
    K = spec.basis_dim or default_basis_dim(L, spec.degree, spec.penalty_order)
    if L < K:
        raise SmootherSpecError(
            f"grid has L={L} points but the basis needs K={K}; use a smaller basis_dim"
        )
    if K - spec.degree + 1 < 2:
        raise SmootherSpecError(f"basis_dim must exceed the spline degree {spec.degree}")

    knots = padded_knots(K, spec.degree)
    B = BSpline.design_matrix(s, knots, spec.degree).toarray()
    D = np.diff(np.eye(K), n=spec.penalty_order, axis=0)
    penalty = D.T @ D
    try:
        eigvals, V = eigh(penalty, B.T @ B)
    except LinAlgError as e:
        raise SmootherSpecError(f"spline basis is degenerate on this grid: {e}") from e
    # Penalty null space (polynomials of degree < penalty_order) is exactly unpenalized.
    eigvals = np.where(eigvals < 1e-10 * eigvals.max(), 0.0, eigvals)

    return SplineBasis(
        grid=s,
        basis=B,
        penalty=penalty,
        knots=knots,
        degree=spec.degree,
        penalty_order=spec.penalty_order,
        eigvals=eigvals,
        rotated=B @ V,
    )


def gcv_score(y: np.ndarray, basis: SplineBasis, lam: float) -> float:
    """Generalized cross-validation score L * RSS / (L - edf)^2 of one row."""
    A = basis.rotated
    coef = A.T @ y
    shrink = basis.shrinkage(lam)
    # Columns of A are orthonormal, so the residual splits into the part outside
    # span(A) and the shrunken part inside it.
    outside = float(y @ y - coef @ coef)
    rss = max(outside, 0.0) + float(np.sum(((1.0 - shrink) * coef) ** 2))
    L = y.size
    dof = L - shrink.sum()
    if dof <= 0:
        return math.inf
    return L * rss / dof**2


def select_lambda(y: np.ndarray, basis: SplineBasis) -> Tuple[float, float]:
    """
    GCV-optimal penalty for one row: log-grid search refined by a bounded 1-D search.

    Returns:
        (lambda, GCV score)
    """
    logs = np.linspace(
        settings.GCV_LOG10_LAMBDA_MIN, settings.GCV_LOG10_LAMBDA_MAX, settings.GCV_GRID_SIZE
    )
    scores = np.array([gcv_score(y, basis, 10.0**g) for g in logs])
    i = int(np.argmin(scores))
    best_log, best_score = float(logs[i]), float(scores[i])
    lo, hi = logs[max(i - 1, 0)], logs[min(i + 1, logs.size - 1)]
    if hi > lo:
        res = minimize_scalar(
            lambda g: gcv_score(y, basis, 10.0**g), bounds=(lo, hi), method="bounded"
        )
        if res.success and res.fun < best_score:
            best_log, best_score = float(res.x), float(res.fun)
    return 10.0**best_log, best_score


def smooth_with_fixed_lambda(
    raw: RawCoefficientMatrix, lambdas: Sequence[float], basis: SplineBasis
) -> SmoothedCoefficients:
    """
    Smooth every raw coefficient row with a given penalty, without any search.

    Args:
        raw: Pointwise estimates on the basis grid
        lambdas: One nonnegative penalty per coefficient
        basis: Basis built for the same grid

    Returns:
        SmoothedCoefficients
    """
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.shape != (raw.P,):
        raise SmootherSpecError(f"expected {raw.P} smoothing parameters, got {lambdas.shape}")
    if np.any(~np.isfinite(lambdas) | (lambdas < 0)):
        raise SmootherSpecError("smoothing parameters must be nonnegative and finite")
    if basis.grid.size != raw.L:
        raise SmootherSpecError(f"basis grid has {basis.grid.size} points, raw fit has {raw.L}")
    if not np.all(np.isfinite(raw.beta_tilde)):
        raise NumericalError("raw coefficient functions contain non-finite values")

    beta_hat = np.empty_like(raw.beta_tilde, dtype=float)
    for p in range(raw.P):
        beta_hat[p] = basis.smoother_matrix(lambdas[p]) @ raw.beta_tilde[p]
    return SmoothedCoefficients(beta_hat=beta_hat, lambdas=lambdas, basis=basis)


def smooth_coefficients(
    raw: RawCoefficientMatrix,
    grid: np.ndarray,
    spec: Optional[SmootherSpec] = None,
    basis: Optional[SplineBasis] = None,
) -> SmoothedCoefficients:
    """
    Smooth raw coefficient functions along the grid.

    Args:
        raw: Pointwise estimates
        grid: Grid of the outcome
        spec: Smoother settings; ``lam="auto"`` selects each row's penalty by GCV
        basis: Prebuilt basis for this grid (built from ``spec`` when omitted)

    Returns:
        SmoothedCoefficients carrying the basis and the chosen penalties
    """
    spec = spec or SmootherSpec()
    if basis is None:
        basis = build_basis(grid, spec)
    if spec.lam == "auto":
        chosen = [select_lambda(np.asarray(row, dtype=float), basis) for row in raw.beta_tilde]
        lambdas = np.array([lam for lam, _ in chosen])
        scores = tuple(score for _, score in chosen)
        logger.debug("GCV penalties: %s", lambdas)
    else:
        lambdas = np.full(raw.P, float(spec.lam))
        scores = None
    smoothed = smooth_with_fixed_lambda(raw, lambdas, basis)
    return SmoothedCoefficients(
        beta_hat=smoothed.beta_hat, lambdas=lambdas, basis=basis, gcv_scores=scores
    )
