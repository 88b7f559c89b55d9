"""Replicate generation: unweighted and survey-weighted bootstraps, BRR and RWYB."""
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from svyfosr.core.exceptions import DesignError, ParameterError, ProbabilityError
from svyfosr.models.dataset import DesignSummary, FunctionalDesignDataset
from svyfosr.models.replicates import BootType, ReplicateWeightSet, StageProbabilities
from svyfosr.services.datasets import summarize_design
from svyfosr.utils.seeding import Stream, stream_rng

logger = logging.getLogger(__name__)


def _check_counts(n: int, B: int) -> None:
    if n < 1:
        raise ParameterError(f"need at least one individual, got n={n}")
    if B < 1:
        raise ParameterError(f"need at least one replicate, got B={B}")


def _positive_weights(weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or np.any(~np.isfinite(w) | (w <= 0)):
        raise ParameterError("base weights must be a vector of positive finite values")
    return w


def resample_unweighted(n: int, B: int, seed: int) -> ReplicateWeightSet:
    """
    Equal-probability bootstrap of the row indices.

    Args:
        n: Number of individuals
        B: Number of replicates
        seed: Base seed

    Returns:
        ReplicateWeightSet of B x n index resamples
    """
    _check_counts(n, B)
    reps = np.stack(
        [stream_rng(seed, Stream.BOOTSTRAP, b).integers(0, n, size=n) for b in range(B)]
    )
    return ReplicateWeightSet(scheme=BootType.UNWEIGHTED, replicates=reps, seed=seed)


def resample_survey_weighted(weights: np.ndarray, B: int, seed: int) -> ReplicateWeightSet:
    """
    Bootstrap of the row indices with selection probability proportional to the
    survey weight.

    Args:
        weights: Positive survey weights
        B: Number of replicates
        seed: Base seed

    Returns:
        ReplicateWeightSet of B x n index resamples
    """
    w = _positive_weights(weights)
    n = w.size
    _check_counts(n, B)
    p = w / w.sum()
    reps = np.stack(
        [
            stream_rng(seed, Stream.BOOTSTRAP, b).choice(n, size=n, replace=True, p=p)
            for b in range(B)
        ]
    )
    return ReplicateWeightSet(scheme=BootType.WEIGHTED, replicates=reps, seed=seed)


def resample_brr(
    design: DesignSummary, base_weights: np.ndarray, B: int, seed: int
) -> ReplicateWeightSet:
    """
    Balanced repeated replication by random half-samples.

    Each replicate keeps half of every stratum's PSUs, chosen uniformly at random,
    doubles the weights of their members and zeroes everyone else.

    Args:
        design: Design summary of the dataset
        base_weights: Survey weights
        B: Number of replicates
        seed: Base seed

    Returns:
        ReplicateWeightSet of B x n replicate weights

    Raises:
        DesignError if a stratum has an odd number of PSUs
    """
    w = _positive_weights(base_weights)
    _check_counts(w.size, B)
    for h, psus in enumerate(design.stratum_psus):
        if psus.size % 2:
            label = design.stratum_labels[h]
            raise DesignError(
                f"BRR needs an even number of PSUs per stratum; stratum {label!r} has {psus.size}",
                stratum=label,
            )

    reps = np.empty((B, w.size))
    for b in range(B):
        rng = stream_rng(seed, Stream.BRR, b)
        active = np.zeros(design.n_psus, dtype=bool)
        for psus in design.stratum_psus:
            active[rng.choice(psus, size=psus.size // 2, replace=False)] = True
        reps[b] = np.where(active[design.psu_of], 2.0 * w, 0.0)
    return ReplicateWeightSet(scheme=BootType.BRR, replicates=reps, seed=seed)


def rwyb_stage_one_adjustments(pi1: np.ndarray, m1: int, m_star: np.ndarray) -> np.ndarray:
    """
    Uncalibrated first-stage adjustments of one stratum's sampled PSUs,
    ``1 - c + c * (n1 / m1) * m*`` with ``c = sqrt(m1 (1 - pi1) / (n1 - 1))``.

    Args:
        pi1: First-stage probabilities of the stratum's n1 PSUs
        m1: Bootstrap PSU sample size
        m_star: Multinomial PSU counts summing to m1

    Returns:
        Adjustment per PSU; certainty PSUs (pi1 = 1) get exactly 1
    """
    pi1 = np.asarray(pi1, dtype=float)
    n1 = pi1.size
    c = np.sqrt(m1 * (1.0 - pi1) / (n1 - 1))
    return 1.0 - c + c * (n1 / m1) * np.asarray(m_star, dtype=float)


def calibrate_stage_one(a1: np.ndarray, certainty: np.ndarray) -> np.ndarray:
    """
    Rescale first-stage adjustments so they sum to the stratum's PSU count.

    Certainty PSUs keep 1 and the others share the remaining total.
    """
    out = np.ones_like(a1, dtype=float)
    free = ~certainty
    if free.any():
        out[free] = a1[free] * free.sum() / a1[free].sum()
    return out


def rwyb_stage_two_adjustments(
    pi1: np.ndarray, pi2: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """
    Second-stage adjustments ``1 - r + r * a~`` with ``r = sqrt(pi1 / (2 - pi1))`` and
    ``a~ ~ Gamma(shape=1/(1-pi2), scale=1-pi2)``; units with pi2 = 1 take a~ = 1.

    Args:
        pi1: First-stage probability of each individual's PSU
        pi2: Second-stage probability of each individual
        rng: Random generator

    Returns:
        Adjustment per individual
    """
    pi1 = np.asarray(pi1, dtype=float)
    pi2 = np.asarray(pi2, dtype=float)
    tilde = np.ones_like(pi2)
    free = pi2 < 1.0
    scale = 1.0 - pi2[free]
    tilde[free] = rng.gamma(shape=1.0 / scale, scale=scale)
    r = np.sqrt(pi1 / (2.0 - pi1))
    return 1.0 - r + r * tilde


def _resolve_m1(n1: int, m1: Optional[int], label: str) -> int:
    if m1 is None:
        return n1 - 1
    if not 1 <= m1 <= n1 - 1:
        raise ParameterError(
            f"m1={m1} outside [1, {n1 - 1}] for stratum {label!r} with {n1} PSUs"
        )
    return int(m1)


def make_rwyb_weights(
    design: DesignSummary,
    base_weights: np.ndarray,
    probs: StageProbabilities,
    m1: Optional[int] = None,
    B: int = 100,
    seed: int = 0,
) -> ReplicateWeightSet:
    """
    Rao-Wu-Yue-Beaumont bootstrap weights for a two-stage design (PPSWOR PSUs,
    Poisson sampling of individuals), computed within each stratum.

    Args:
        design: Design summary of the dataset
        base_weights: Survey weights
        probs: Per-individual first- and second-stage selection probabilities
        m1: PSUs resampled per stratum; n1 - 1 when omitted
        B: Number of replicates
        seed: Base seed

    Returns:
        ReplicateWeightSet of B x n replicate weights ``w * a1_cal * a2``

    Raises:
        ProbabilityError if probabilities are missing stage information or out of range
        DesignError if a stratum has fewer than two PSUs
    """
    w = _positive_weights(base_weights)
    _check_counts(w.size, B)
    if probs.single_stage:
        raise ProbabilityError(
            "RWYB requires selection probabilities at both sampling stages; "
            "these probabilities come from a single-stage design"
        )
    probs.validate(design.psu_of)
    pi1_psu = probs.per_psu(design.psu_of)
    pi1_ind = np.asarray(probs.pi1, dtype=float)
    pi2 = np.asarray(probs.pi2, dtype=float)

    strata = []
    for h, psus in enumerate(design.stratum_psus):
        label = design.stratum_labels[h]
        if psus.size < 2:
            raise DesignError(
                f"RWYB needs at least two sampled PSUs per stratum; stratum {label!r} has {psus.size}",
                stratum=label,
            )
        strata.append((psus, _resolve_m1(psus.size, m1, label), pi1_psu[psus] >= 1.0))

    reps = np.empty((B, w.size))
    for b in range(B):
        rng = stream_rng(seed, Stream.RWYB, b)
        a1 = np.ones(design.n_psus)
        for psus, m, certainty in strata:
            n1 = psus.size
            m_star = rng.multinomial(m, np.full(n1, 1.0 / n1))
            raw = rwyb_stage_one_adjustments(pi1_psu[psus], m, m_star)
            a1[psus] = calibrate_stage_one(raw, certainty)
        a2 = rwyb_stage_two_adjustments(pi1_ind, pi2, rng)
        reps[b] = w * a1[design.psu_of] * a2
    return ReplicateWeightSet(scheme=BootType.RWYB, replicates=reps, seed=seed)


def generate_replicates(
    ds: FunctionalDesignDataset,
    scheme: Union[BootType, str],
    B: int,
    seed: int,
    probs: Optional[StageProbabilities] = None,
    m1: Optional[int] = None,
) -> ReplicateWeightSet:
    """
    Replicates of a dataset under the named scheme.

    Args:
        ds: Dataset
        scheme: unweighted, weighted, brr or rwyb
        B: Number of replicates
        seed: Base seed
        probs: Stage probabilities (required for rwyb)
        m1: RWYB PSU resample size

    Returns:
        ReplicateWeightSet
    """
    scheme = BootType(scheme)
    if scheme is BootType.UNWEIGHTED:
        return resample_unweighted(ds.n, B, seed)
    if scheme is BootType.WEIGHTED:
        return resample_survey_weighted(ds.weights, B, seed)
    design = summarize_design(ds)
    if scheme is BootType.BRR:
        return resample_brr(design, ds.weights, B, seed)
    if probs is None:
        raise ProbabilityError(
            "RWYB requires first- and second-stage selection probabilities "
            "(pass a stage-probability file)"
        )
    return make_rwyb_weights(design, ds.weights, probs, m1=m1, B=B, seed=seed)


def replicates_to_frame(
    rset: ReplicateWeightSet, base_weights: Optional[np.ndarray] = None
) -> pd.DataFrame:
    """Replicate weights as an n x B frame with columns ``rep_0001 ..``."""
    weights = rset.as_weights(base_weights)
    columns = [f"rep_{b + 1:04d}" for b in range(rset.B)]
    return pd.DataFrame(weights.T, columns=columns)


def save_replicates(
    rset: ReplicateWeightSet, path: Union[str, Path], base_weights: Optional[np.ndarray] = None
) -> Path:
    """Write replicate weights to CSV for audit."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    replicates_to_frame(rset, base_weights).to_csv(path, index=False)
    logger.info("wrote %d %s replicates to %s", rset.B, rset.scheme.value, path)
    return path
