"""Replicate resamples and stage-wise selection probabilities."""
import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from svyfosr.core.exceptions import ProbabilityError


class BootType(str, enum.Enum):
    """Replication schemes."""
    UNWEIGHTED = "unweighted"
    WEIGHTED = "weighted"
    BRR = "brr"
    RWYB = "rwyb"

    @property
    def uses_indices(self) -> bool:
        return self in (BootType.UNWEIGHTED, BootType.WEIGHTED)


@dataclass(frozen=True)
class ReplicateWeightSet:
    """
    B replicates from one scheme.

    Bootstrap schemes hold a B x n matrix of resampled row indices; BRR and RWYB
    hold a B x n matrix of replicate weights.
    """
    scheme: BootType
    replicates: np.ndarray
    seed: int

    @property
    def B(self) -> int:
        return self.replicates.shape[0]

    @property
    def n(self) -> int:
        return self.replicates.shape[1]

    def as_weights(self, base_weights: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Replicate weights, B x n.

        Index resamples become multiplicity counts times ``base_weights``
        (all ones when not given); weight replicates are returned as stored.
        """
        if not self.scheme.uses_indices:
            return self.replicates
        base = np.ones(self.n) if base_weights is None else np.asarray(base_weights, float)
        counts = np.stack([np.bincount(row, minlength=self.n) for row in self.replicates])
        return counts * base[None, :]


@dataclass(frozen=True)
class StageProbabilities:
    """
    First-stage (PSU) and second-stage (individual) selection probabilities, stored
    per individual. ``single_stage`` marks probabilities from a one-stage design
    (pi1 all ones), which cannot drive the two-stage bootstrap.
    """
    pi1: np.ndarray
    pi2: np.ndarray
    single_stage: bool = False

    def validate(self, psu_ids: Optional[np.ndarray] = None) -> None:
        """
        Check ranges and that pi1 is constant within each PSU.

        Raises:
            ProbabilityError
        """
        for name, pi in (("pi1", self.pi1), ("pi2", self.pi2)):
            bad = ~np.isfinite(pi) | (pi <= 0) | (pi > 1)
            if bad.any():
                raise ProbabilityError(
                    f"{name} must lie in (0, 1]; violated at rows {np.flatnonzero(bad)[:20].tolist()}"
                )
        if psu_ids is not None:
            if len(psu_ids) != len(self.pi1) or len(self.pi2) != len(self.pi1):
                raise ProbabilityError("stage probabilities do not match the dataset size")
            n_psu = int(psu_ids.max()) + 1
            lo = np.full(n_psu, np.inf)
            hi = np.full(n_psu, -np.inf)
            np.minimum.at(lo, psu_ids, self.pi1)
            np.maximum.at(hi, psu_ids, self.pi1)
            if np.any(hi - lo > 1e-12):
                raise ProbabilityError("pi1 must be constant within each PSU")

    def per_psu(self, psu_ids: np.ndarray) -> np.ndarray:
        """First-stage probability of every internal PSU index."""
        out = np.empty(int(psu_ids.max()) + 1)
        out[psu_ids] = self.pi1
        return out
