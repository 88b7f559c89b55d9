"""Worker tasks for replicate fitting, executed on a thread pool."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, TypeVar

import numpy as np

from svyfosr.core.config import settings
from svyfosr.core.exceptions import NumericalError
from svyfosr.models.coefficients import SplineBasis
from svyfosr.models.family import GlmFamily
from svyfosr.services.glm import fit_pointwise
from svyfosr.services.smoothing import smooth_with_fixed_lambda

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def run_parallel(
    func: Callable[[T], R],
    items: Iterable[T],
    n_workers: Optional[int] = None,
) -> List[R]:
    """
    Apply ``func`` to every item, preserving input order.

    Args:
        func: Task function
        items: Task inputs
        n_workers: Pool size; settings.N_WORKERS when omitted, inline when 1

    Returns:
        Results in the order of ``items``
    """
    workers = settings.N_WORKERS if n_workers is None else n_workers
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, items))


@dataclass(frozen=True)
class ReplicateFitContext:
    """Shared, read-only inputs of every replicate fit."""
    X: np.ndarray
    Y: np.ndarray
    family: GlmFamily
    basis: SplineBasis
    lambdas: np.ndarray
    covariate_names: tuple
    tol: float
    max_iter: int


@dataclass(frozen=True)
class ReplicateFitResult:
    """Smoothed replicate estimate, or the reason it failed."""
    index: int
    beta: Optional[np.ndarray]
    error: Optional[str] = None


def fit_replicate_task(context: ReplicateFitContext, index: int, weights: np.ndarray) -> ReplicateFitResult:
    """
    Background task for one replicate: refit the pointwise GLMs under replicate
    weights and smooth with the original penalties.

    Args:
        context: Shared fit inputs
        index: Replicate number
        weights: Replicate weight vector

    Returns:
        ReplicateFitResult; failures (singular design, non-convergence) are reported,
        not raised
    """
    try:
        raw = fit_pointwise(
            context.X, context.Y, weights, context.family,
            tol=context.tol, max_iter=context.max_iter,
            covariate_names=context.covariate_names,
        )
    except NumericalError as e:
        return ReplicateFitResult(index=index, beta=None, error=str(e))
    if not raw.all_converged:
        n_bad = int(np.sum(~raw.converged))
        return ReplicateFitResult(index=index, beta=None, error=f"{n_bad} grid points did not converge")
    smoothed = smooth_with_fixed_lambda(raw, context.lambdas, context.basis)
    return ReplicateFitResult(index=index, beta=smoothed.beta_hat)
