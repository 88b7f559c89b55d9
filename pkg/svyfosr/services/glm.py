"""Pointwise survey-weighted GLMs, batched over the functional grid.

All L grid points share the design matrix, so the Gaussian fit is a single
weighted QR factorization applied to every outcome column; non-Gaussian fits run
IRLS with every still-active column solved together at each iteration.
"""
import logging
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from svyfosr.core.config import settings
from svyfosr.core.exceptions import DataValidationError, SingularDesignError
from svyfosr.models.coefficients import RawCoefficientMatrix
from svyfosr.models.dataset import FunctionalDesignDataset
from svyfosr.models.family import FamilyKind, GlmFamily, get_family

logger = logging.getLogger(__name__)

# Upper bound on the entries of one stacked (columns x n x P) IRLS system.
_STACK_BUDGET = 4_000_000


def _check_weights(w: np.ndarray, n: int) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise DataValidationError(f"expected {n} weights, got shape {w.shape}")
    bad = ~np.isfinite(w) | (w < 0)
    if bad.any():
        raise DataValidationError("weights must be finite and nonnegative", rows=np.flatnonzero(bad))
    if not w.sum() > 0:
        raise DataValidationError("weights must have a positive sum")
    return w


def _column_name(names: Optional[Sequence[str]], j: int) -> str:
    return names[j] if names is not None and j < len(names) else f"column {j}"


def _check_rank(diag_r: np.ndarray, names: Optional[Sequence[str]], rank_tol: float) -> None:
    """Raise on the first pivot of R that is negligible relative to the largest."""
    scale = diag_r.max()
    small = diag_r <= rank_tol * scale if scale > 0 else np.ones_like(diag_r, dtype=bool)
    if small.any():
        j = int(np.argmax(small))
        name = _column_name(names, j)
        raise SingularDesignError(
            f"weighted design matrix is rank deficient at pivot column {name!r}", column=name
        )


def solve_wls(
    X: np.ndarray,
    Y: np.ndarray,
    w: np.ndarray,
    covariate_names: Optional[Sequence[str]] = None,
    rank_tol: Optional[float] = None,
) -> np.ndarray:
    """
    Weighted least squares for every column of Y through one QR factorization.

    With ``X_w = W^{1/2} X = QR`` the coefficients are ``R^{-1} Q' W^{1/2} Y``.

    Args:
        X: n x P design matrix
        Y: n x L outcomes
        w: length-n nonnegative weights with positive sum
        covariate_names: Names used in the singular-design error
        rank_tol: Relative pivot tolerance; settings.RANK_TOL when omitted

    Returns:
        P x L coefficient matrix

    Raises:
        SingularDesignError if the weighted design is rank deficient
    """
    X = np.asarray(X, dtype=float)
    w = _check_weights(w, X.shape[0])
    sqrt_w = np.sqrt(w)
    Q, R = np.linalg.qr(sqrt_w[:, None] * X)
    _check_rank(np.abs(np.diag(R)), covariate_names, settings.RANK_TOL if rank_tol is None else rank_tol)
    return solve_triangular(R, Q.T @ (sqrt_w[:, None] * np.asarray(Y, dtype=float)))


def _stacked_wls(
    X: np.ndarray,
    Z: np.ndarray,
    W: np.ndarray,
    covariate_names: Optional[Sequence[str]],
    rank_tol: float,
) -> np.ndarray:
    """Column-specific WLS solved as a stack of QR factorizations; returns P x m."""
    n, P = X.shape
    m = Z.shape[1]
    out = np.empty((P, m))
    chunk = max(1, _STACK_BUDGET // max(1, n * P))
    for start in range(0, m, chunk):
        cols = slice(start, min(start + chunk, m))
        sw = np.sqrt(W[:, cols]).T  # m_c x n
        Q, R = np.linalg.qr(sw[:, :, None] * X[None, :, :])
        diag_r = np.abs(np.diagonal(R, axis1=1, axis2=2))
        for row in diag_r:
            _check_rank(row, covariate_names, rank_tol)
        qtz = np.einsum("knp,kn->kp", Q, sw * Z[:, cols].T)
        out[:, cols] = np.linalg.solve(R, qtz[..., None])[..., 0].T
    return out


def irls_batched(
    X: np.ndarray,
    Y: np.ndarray,
    w: np.ndarray,
    family: GlmFamily,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    covariate_names: Optional[Sequence[str]] = None,
) -> RawCoefficientMatrix:
    """
    Survey-weighted IRLS for all grid points at once.

    The working weights are the survey weight times the family IRLS weight
    ``(dmu/deta)^2 / V(mu)``. Columns whose coefficients stop moving
    (``max|delta beta| <= tol * (1 + max|beta|)``) are frozen while the rest iterate.

    Args:
        X: n x P design matrix
        Y: n x L outcomes in the family's support
        w: length-n survey (or replicate) weights
        family: Non-Gaussian GLM family
        tol: Convergence tolerance; settings.IRLS_TOL when omitted
        max_iter: Iteration cap; settings.IRLS_MAX_ITER when omitted
        covariate_names: Names used in error messages

    Returns:
        RawCoefficientMatrix; columns that hit max_iter or needed the Bernoulli
        linear-predictor clamp are flagged converged=False
    """
    tol = settings.IRLS_TOL if tol is None else tol
    max_iter = settings.IRLS_MAX_ITER if max_iter is None else max_iter
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    w = _check_weights(w, X.shape[0])
    family.check_support(Y[w > 0])
    rank_tol = settings.RANK_TOL
    L = Y.shape[1]

    beta = solve_wls(X, family.link(family.initial_mu(Y)), w, covariate_names)
    converged = np.zeros(L, dtype=bool)
    clamped = np.zeros(L, dtype=bool)
    iterations = np.zeros(L, dtype=int)
    active = np.arange(L)
    clamp = settings.ETA_CLAMP

    for it in range(1, max_iter + 1):
        if active.size == 0:
            break
        current = beta[:, active]
        eta = X @ current
        if family.kind is FamilyKind.BERNOULLI:
            over = np.abs(eta) > clamp
            if over.any():
                clamped[active[over.any(axis=0)]] = True
                eta = np.clip(eta, -clamp, clamp)
        mu = family.inverse_link(eta)
        dmu = family.mu_eta(eta)
        z = eta + (Y[:, active] - mu) / dmu
        W = w[:, None] * dmu**2 / family.variance(mu)
        updated = _stacked_wls(X, z, W, covariate_names, rank_tol)
        delta = np.max(np.abs(updated - current), axis=0)
        beta[:, active] = updated
        iterations[active] = it
        done = delta <= tol * (1.0 + np.max(np.abs(updated), axis=0))
        converged[active[done]] = True
        active = active[~done]

    if active.size:
        logger.warning("IRLS did not converge at %d of %d grid points", active.size, L)
    if clamped.any():
        logger.warning(
            "linear predictor clamped at |eta|=%g at %d grid points (separation)", clamp, clamped.sum()
        )
    return RawCoefficientMatrix(
        beta_tilde=beta,
        converged=converged & ~clamped,
        iterations=iterations,
        clamped=clamped,
    )


def fit_pointwise(
    X: np.ndarray,
    Y: np.ndarray,
    w: np.ndarray,
    family: "GlmFamily | str" = "gaussian",
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    covariate_names: Optional[Sequence[str]] = None,
) -> RawCoefficientMatrix:
    """Fit the L pointwise GLMs, using the shared-QR path for Gaussian outcomes."""
    family = get_family(family)
    if family.is_gaussian:
        beta = solve_wls(X, Y, w, covariate_names)
        L = beta.shape[1]
        return RawCoefficientMatrix(
            beta_tilde=beta,
            converged=np.ones(L, dtype=bool),
            iterations=np.ones(L, dtype=int),
        )
    return irls_batched(X, Y, w, family, tol, max_iter, covariate_names)


def fit_pointwise_gaussian(
    ds: FunctionalDesignDataset, w: Optional[np.ndarray] = None
) -> RawCoefficientMatrix:
    """
    Gaussian pointwise fit of a dataset.

    Args:
        ds: Dataset
        w: Weights to use instead of the dataset's survey weights (e.g. replicate weights)

    Returns:
        RawCoefficientMatrix with every column converged
    """
    return fit_pointwise(
        ds.covariates, ds.outcomes, ds.weights if w is None else w, "gaussian",
        covariate_names=ds.covariate_names,
    )


def fit_pointwise_irls(
    ds: FunctionalDesignDataset,
    w: Optional[np.ndarray] = None,
    family: "GlmFamily | str" = "bernoulli",
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> RawCoefficientMatrix:
    """
    Non-Gaussian pointwise fit of a dataset by batched IRLS.

    Args:
        ds: Dataset
        w: Weights to use instead of the dataset's survey weights
        family: GLM family
        tol: Convergence tolerance
        max_iter: Iteration cap

    Returns:
        RawCoefficientMatrix
    """
    return fit_pointwise(
        ds.covariates, ds.outcomes, ds.weights if w is None else w, family,
        tol=tol, max_iter=max_iter, covariate_names=ds.covariate_names,
    )
