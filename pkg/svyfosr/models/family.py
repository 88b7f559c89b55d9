"""GLM families used by the pointwise fits and the simulator."""
import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit, logit

from svyfosr.core.exceptions import DataValidationError, ParameterError


class FamilyKind(str, enum.Enum):
    """Supported exponential families with their canonical links."""
    GAUSSIAN = "gaussian"
    BERNOULLI = "bernoulli"
    POISSON = "poisson"


ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GlmFamily:
    """Link, inverse link, derivative of the inverse link and variance function."""
    kind: FamilyKind
    link: ArrayFn
    inverse_link: ArrayFn
    mu_eta: ArrayFn
    variance: ArrayFn

    @property
    def is_gaussian(self) -> bool:
        return self.kind is FamilyKind.GAUSSIAN

    def initial_mu(self, y: np.ndarray) -> np.ndarray:
        """Starting mean for IRLS, kept strictly inside the family's mean space."""
        if self.kind is FamilyKind.BERNOULLI:
            return (y + 0.5) / 2.0
        if self.kind is FamilyKind.POISSON:
            return y + 0.1
        return np.asarray(y, dtype=float).copy()

    def check_support(self, y: np.ndarray) -> None:
        """
        Validate that outcomes lie in the family's support.

        Raises:
            DataValidationError listing the offending rows
        """
        if self.kind is FamilyKind.BERNOULLI:
            bad = ~np.isin(y, (0.0, 1.0))
        elif self.kind is FamilyKind.POISSON:
            bad = (y < 0) | (y != np.round(y))
        else:
            bad = ~np.isfinite(y)
        if bad.ndim > 1:
            bad = bad.any(axis=1)
        if bad.any():
            raise DataValidationError(
                f"outcomes outside the {self.kind.value} support",
                rows=np.flatnonzero(bad),
            )

    def sample(self, eta: np.ndarray, rng: np.random.Generator, sigma: float = 1.0) -> np.ndarray:
        """Draw outcomes with linear predictor ``eta``."""
        if self.kind is FamilyKind.BERNOULLI:
            return (rng.random(eta.shape) < expit(eta)).astype(float)
        if self.kind is FamilyKind.POISSON:
            return rng.poisson(np.exp(eta)).astype(float)
        return eta + sigma * rng.standard_normal(eta.shape)


def _identity(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=float)


def _ones(x: np.ndarray) -> np.ndarray:
    return np.ones_like(x, dtype=float)


def _bernoulli_mu_eta(eta: np.ndarray) -> np.ndarray:
    p = expit(eta)
    return np.maximum(p * (1.0 - p), np.finfo(float).tiny)


def _bernoulli_variance(mu: np.ndarray) -> np.ndarray:
    return np.maximum(mu * (1.0 - mu), np.finfo(float).tiny)


def _poisson_mu_eta(eta: np.ndarray) -> np.ndarray:
    return np.maximum(np.exp(eta), np.finfo(float).tiny)


def _poisson_variance(mu: np.ndarray) -> np.ndarray:
    return np.maximum(mu, np.finfo(float).tiny)


GAUSSIAN = GlmFamily(FamilyKind.GAUSSIAN, _identity, _identity, _ones, _ones)
BERNOULLI = GlmFamily(FamilyKind.BERNOULLI, logit, expit, _bernoulli_mu_eta, _bernoulli_variance)
POISSON = GlmFamily(FamilyKind.POISSON, np.log, np.exp, _poisson_mu_eta, _poisson_variance)

_FAMILIES = {
    FamilyKind.GAUSSIAN: GAUSSIAN,
    FamilyKind.BERNOULLI: BERNOULLI,
    FamilyKind.POISSON: POISSON,
}

_ALIASES = {"normal": "gaussian", "binomial": "bernoulli", "logistic": "bernoulli"}


def get_family(name: "str | FamilyKind | GlmFamily") -> GlmFamily:
    """
    Resolve a family by name.

    Args:
        name: "gaussian", "bernoulli" ("binomial") or "poisson", or a family object

    Returns:
        GlmFamily instance
    """
    if isinstance(name, GlmFamily):
        return name
    key = name.value if isinstance(name, FamilyKind) else _ALIASES.get(name.lower(), name.lower())
    try:
        return _FAMILIES[FamilyKind(key)]
    except ValueError:
        raise ParameterError(
            f"unknown family {name!r}; expected one of {[k.value for k in FamilyKind]}"
        ) from None
