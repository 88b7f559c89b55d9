"""Pointwise and joint confidence bands."""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class BandEstimate:
    """
    Smoothed estimates with replicate standard errors, pointwise bands and
    correlation-and-multiplicity adjusted (CMA) joint bands; arrays are P x L.
    """
    beta_hat: np.ndarray
    se: np.ndarray
    pointwise_lo: np.ndarray
    pointwise_hi: np.ndarray
    cma_lo: np.ndarray
    cma_hi: np.ndarray
    q95: np.ndarray  # P, joint quantile per coefficient
    alpha: float
    z: float  # pointwise multiplier actually used
    grid: np.ndarray
    original_grid: np.ndarray
    coefficient_names: Tuple[str, ...]
    lambdas: np.ndarray
    scheme: str
    n_replicates: int
    n_failed: int = 0
    seed: Optional[int] = None
    corr: Optional[Tuple[np.ndarray, ...]] = None
    percentile_lo: Optional[np.ndarray] = None
    percentile_hi: Optional[np.ndarray] = None
    replicate_betas: Optional[np.ndarray] = None  # B x P x L

    @property
    def P(self) -> int:
        return self.beta_hat.shape[0]

    @property
    def L(self) -> int:
        return self.beta_hat.shape[1]

    def index(self, name: str) -> int:
        return self.coefficient_names.index(name)
