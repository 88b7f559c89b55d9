"""Coefficient-function containers."""
import threading
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class RawCoefficientMatrix:
    """Unsmoothed pointwise estimates, one column per grid point."""
    beta_tilde: np.ndarray  # P x L
    converged: np.ndarray  # L
    iterations: np.ndarray  # L
    clamped: Optional[np.ndarray] = None  # L, Bernoulli separation flag

    @property
    def P(self) -> int:
        return self.beta_tilde.shape[0]

    @property
    def L(self) -> int:
        return self.beta_tilde.shape[1]

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))


@dataclass(frozen=True)
class SplineBasis:
    """
    P-spline basis evaluated on a grid, with the generalized eigen-decomposition
    of the penalty against B'B.

    With ``A = B V`` and ``V' B'B V = I``, ``V' D'D V = diag(s)`` the smoother for
    penalty ``lam`` is ``A diag(1 / (1 + lam * s)) A'``.
    """
    grid: np.ndarray
    basis: np.ndarray  # L x K
    penalty: np.ndarray  # K x K, D'D
    knots: np.ndarray
    degree: int
    penalty_order: int
    eigvals: np.ndarray  # K
    rotated: np.ndarray  # L x K, A = B V
    _cache: Dict[float, np.ndarray] = field(default_factory=dict, repr=False, compare=False)
    _cache_lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def shrinkage(self, lam: float) -> np.ndarray:
        return 1.0 / (1.0 + lam * self.eigvals)

    def smoother_matrix(self, lam: float) -> np.ndarray:
        """L x L hat matrix for a fixed penalty, memoized per lambda."""
        key = float(lam)
        with self._cache_lock:
            hat = self._cache.get(key)
            if hat is None:
                hat = (self.rotated * self.shrinkage(key)) @ self.rotated.T
                hat.setflags(write=False)
                self._cache[key] = hat
        return hat

    def edf(self, lam: float) -> float:
        """Effective degrees of freedom (trace of the hat matrix)."""
        return float(self.shrinkage(lam).sum())


@dataclass(frozen=True)
class SmoothedCoefficients:
    """Smoothed coefficient functions and the penalties that produced them."""
    beta_hat: np.ndarray  # P x L
    lambdas: np.ndarray  # P
    basis: SplineBasis
    gcv_scores: Optional[Tuple[float, ...]] = None
