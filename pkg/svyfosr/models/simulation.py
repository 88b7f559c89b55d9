"""Superpopulation and sample containers of the simulation study."""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from svyfosr.models.dataset import FunctionalDesignDataset
from svyfosr.models.family import GlmFamily
from svyfosr.models.replicates import StageProbabilities
from svyfosr.schemas import SuperpopulationConfig


@dataclass(frozen=True)
class TrueCoefficients:
    """Closed-form intercept and slope functions with the per-stratum slope scales."""
    grid: np.ndarray
    beta0: np.ndarray
    beta1: np.ndarray
    gamma: np.ndarray  # H

    def stacked(self) -> np.ndarray:
        """2 x L matrix (intercept, slope)."""
        return np.vstack([self.beta0, self.beta1])


@dataclass(frozen=True)
class Superpopulation:
    """
    Stratified population with PSU membership, a scalar covariate and functional
    outcomes. Individuals are stored stratum by stratum; ``offsets[h]:offsets[h+1]``
    are the rows of stratum ``h``.

    Outcomes are held in memory unless the population was generated in streaming
    mode, in which case ``regenerate`` rebuilds a stratum's outcomes from its random
    stream on demand.
    """
    config: SuperpopulationConfig
    family: GlmFamily
    grid: np.ndarray
    offsets: np.ndarray  # H + 1
    psu: np.ndarray  # N, global PSU index
    psu_stratum: np.ndarray  # C, stratum of every PSU
    x: np.ndarray  # N
    truth: TrueCoefficients
    xi: np.ndarray  # H x K stratum random-effect coefficients
    zeta: np.ndarray  # C x K PSU random-effect coefficients
    re_basis: np.ndarray  # L x K
    sigma_h: float
    sigma_eps: float
    reference: np.ndarray  # 2 x L unweighted pointwise fit over the population
    outcomes: Optional[np.ndarray]
    regenerate: Callable[[int], np.ndarray]

    @property
    def N(self) -> int:
        return self.x.size

    @property
    def H(self) -> int:
        return self.offsets.size - 1

    @property
    def L(self) -> int:
        return self.grid.size

    @property
    def streaming(self) -> bool:
        return self.outcomes is None

    def stratum_rows(self, h: int) -> slice:
        return slice(int(self.offsets[h]), int(self.offsets[h + 1]))

    def stratum_outcomes(self, h: int) -> np.ndarray:
        """Outcomes of every individual in stratum ``h``."""
        if self.outcomes is not None:
            return self.outcomes[self.stratum_rows(h)]
        return self.regenerate(h)

    def psu_sizes(self) -> np.ndarray:
        return np.bincount(self.psu, minlength=self.psu_stratum.size)


@dataclass(frozen=True)
class SampleDraw:
    """A realized sample with its stage probabilities and the evaluation truth."""
    dataset: FunctionalDesignDataset
    probs: StageProbabilities
    rows: np.ndarray  # population rows of the sampled individuals
    reference: Optional[np.ndarray] = None  # P x L target of evaluation
    truth: Optional[TrueCoefficients] = None
