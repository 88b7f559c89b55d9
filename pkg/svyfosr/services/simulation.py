"""
Superpopulation simulator and sampling schemes.

The superpopulation has H strata, each split into PSUs, with functional outcomes
driven by a global intercept, a stratum-scaled slope on a scalar covariate and
smooth stratum- and PSU-level random effects. Samples are drawn in two stages
(PPSWOR of PSUs, Poisson sampling of individuals, optionally informative), or in
one stage by informative Poisson subsampling of an existing dataset.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.interpolate import BSpline
from scipy.special import expit
from scipy.stats import norm

from svyfosr.core.config import settings
from svyfosr.core.exceptions import CapacityError, DesignError, ParameterError
from svyfosr.models.dataset import FunctionalDesignDataset
from svyfosr.models.family import FamilyKind, GlmFamily, get_family
from svyfosr.models.replicates import StageProbabilities
from svyfosr.models.simulation import SampleDraw, Superpopulation, TrueCoefficients
from svyfosr.schemas import (
    Informativeness,
    ReMode,
    SamplingConfig,
    SubsampleScheme,
    SuperpopulationConfig,
)
from svyfosr.services.glm import fit_pointwise
from svyfosr.services.smoothing import padded_knots
from svyfosr.utils.seeding import Stream, stream_rng
from svyfosr.workers.tasks import run_parallel

logger = logging.getLogger(__name__)

INFORMATIVENESS_SLOPE = {
    Informativeness.NONE: 0.0,
    Informativeness.MEDIUM: 1.5,
    Informativeness.HIGH: 2.0,
}


def true_beta0(s: np.ndarray) -> np.ndarray:
    """Global intercept function."""
    s = np.asarray(s, dtype=float)
    return 0.53 + 0.06 * np.sin(3 * np.pi * s) - 0.03 * np.cos(6.5 * np.pi * s)


def true_beta1(s: np.ndarray) -> np.ndarray:
    """Global slope function, a narrow bump centred at 0.6."""
    return norm.pdf((np.asarray(s, dtype=float) - 0.6) / 0.0225) / 20.0


def random_effect_basis(grid: np.ndarray, K: int) -> np.ndarray:
    """Cubic B-spline basis of dimension K on [0, 1], evaluated on the grid (L x K)."""
    degree = min(3, K - 1)
    return BSpline.design_matrix(np.asarray(grid, float), padded_knots(K, degree), degree).toarray()


def standardize(v: np.ndarray) -> np.ndarray:
    """Mean 0, variance 1; a constant vector maps to zeros."""
    v = np.asarray(v, dtype=float)
    sd = v.std()
    if not sd > 0:
        return np.zeros_like(v)
    return (v - v.mean()) / sd


def selection_index(outcomes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """
    Informative-selection index of the members of one PSU: the standardized mean
    outcome tilted by the standardized covariate, restandardized and truncated at +/-2.
    """
    y_sc = standardize(np.asarray(outcomes, dtype=float).mean(axis=1))
    return np.clip(standardize(y_sc * (1.0 + standardize(x))), -2.0, 2.0)


def capped_inclusion(score: np.ndarray, expected: float) -> Tuple[np.ndarray, bool]:
    """
    Poisson inclusion probabilities proportional to ``score`` with the given expected
    sample size, capped at 1 with the excess spread over the remaining units.

    Returns:
        (probabilities, whether any capping was needed)
    """
    score = np.asarray(score, dtype=float)
    target = float(expected)
    clipped = target > score.size
    target = min(target, float(score.size))
    pi = np.zeros_like(score)
    free = np.ones(score.size, dtype=bool)
    while free.any():
        remaining = target - np.count_nonzero(~free)
        pi[free] = remaining * score[free] / score[free].sum()
        over = free & (pi >= 1.0)
        if not over.any():
            break
        clipped = True
        pi[over] = 1.0
        free &= ~over
    return pi, clipped


def _ppswor(sizes: np.ndarray, m: int, rng: np.random.Generator) -> List[int]:
    """Sequential probability-proportional-to-size draws without replacement."""
    available = np.ones(sizes.size, dtype=bool)
    chosen = []
    for _ in range(m):
        weights = np.where(available, sizes, 0).astype(float)
        j = int(rng.choice(sizes.size, p=weights / weights.sum()))
        chosen.append(j)
        available[j] = False
    return chosen


@dataclass(frozen=True)
class _OutcomeGenerator:
    """Builds one stratum's outcomes from the stratum's own random stream."""
    seed: int
    family: GlmFamily
    sigma_eps: float
    beta0: np.ndarray
    beta1: np.ndarray
    gamma: np.ndarray
    x: np.ndarray
    psu: np.ndarray
    offsets: np.ndarray
    xi: np.ndarray
    zeta: np.ndarray
    re_basis: np.ndarray

    def linear_predictor(self, h: int) -> np.ndarray:
        rows = slice(int(self.offsets[h]), int(self.offsets[h + 1]))
        x = self.x[rows]
        stratum_re = self.re_basis @ self.xi[h]
        psu_re = self.zeta[self.psu[rows]] @ self.re_basis.T
        return (
            self.beta0[None, :]
            + x[:, None] * (self.gamma[h] * self.beta1)[None, :]
            + stratum_re[None, :]
            + psu_re
        )

    def __call__(self, h: int) -> np.ndarray:
        rng = stream_rng(self.seed, Stream.OUTCOME, h)
        return self.family.sample(self.linear_predictor(h), rng, self.sigma_eps)


def calibrate_variances(
    cfg: SuperpopulationConfig,
    snr_b: Optional[float] = None,
    snr_eps: Optional[float] = None,
) -> Tuple[float, float]:
    """
    Random-effect and noise SDs that hit target signal-to-noise ratios on a pilot.

    ``snr_b`` is the SD of the fixed-effect part of the linear predictor over the SD
    of the random-effect part; ``snr_eps`` the SD of the linear predictor over the
    noise SD. A ratio left as None keeps the configured SD.

    Args:
        cfg: Superpopulation configuration (structure, family, seed, pilot size)
        snr_b: Target fixed/random effect ratio; infinity removes random effects
        snr_eps: Target linear-predictor/noise ratio

    Returns:
        (sigma_h, sigma_eps)

    Raises:
        ParameterError if a ratio is not positive
    """
    for name, value in (("snr_b", snr_b), ("snr_eps", snr_eps)):
        if value is not None and not value > 0:
            raise ParameterError(f"{name} must be positive, got {value}")

    rng = stream_rng(cfg.seed, Stream.PILOT)
    n = cfg.pilot_n
    s = np.linspace(0.0, 1.0, cfg.L)
    phi = random_effect_basis(s, cfg.K)
    n_psu = (cfg.psu_min + cfg.psu_max) // 2

    x = rng.normal(0.0, math.sqrt(cfg.x_variance), n)
    stratum = rng.integers(0, cfg.H, n)
    psu = stratum * n_psu + rng.integers(0, n_psu, n)
    gamma = rng.normal(1.0, cfg.sigma_s, cfg.H)
    if cfg.re_mode is not ReMode.SCALING_AND_NOISE:
        gamma = np.ones(cfg.H)
    fixed = true_beta0(s)[None, :] + (x * gamma[stratum])[:, None] * true_beta1(s)[None, :]
    xi = rng.standard_normal((cfg.H, cfg.K))
    zeta = rng.standard_normal((cfg.H * n_psu, cfg.K)) / math.sqrt(2.0)
    unit_re = (xi[stratum] + zeta[psu]) @ phi.T

    sigma_h = cfg.sigma_h
    if cfg.re_mode is ReMode.NONE:
        sigma_h = 0.0
    elif snr_b is not None:
        sigma_h = 0.0 if math.isinf(snr_b) else float(fixed.std() / (snr_b * unit_re.std()))

    sigma_eps = cfg.sigma_eps
    if snr_eps is not None:
        sigma_eps = float((fixed + sigma_h * unit_re).std() / snr_eps)
    logger.info("calibrated sigma_h=%.4g, sigma_eps=%.4g from a pilot of %d", sigma_h, sigma_eps, n)
    return sigma_h, sigma_eps


def _reference_fit(
    x: np.ndarray,
    offsets: np.ndarray,
    outcomes_of,
    family: GlmFamily,
    L: int,
) -> np.ndarray:
    """
    Unweighted pointwise GLM of Y on (1, x) over all strata, accumulated stratum by
    stratum through the normal equations; IRLS passes for non-Gaussian families.
    """
    H = offsets.size - 1

    def design(h):
        xs = x[int(offsets[h]):int(offsets[h + 1])]
        return xs, outcomes_of(h)

    def solve(A, b):
        return np.linalg.solve(A, b[..., None])[..., 0].T  # 2 x L

    A = np.zeros((L, 2, 2))
    b = np.zeros((L, 2))
    for h in range(H):
        xs, Y = design(h)
        z = Y if family.is_gaussian else family.link(family.initial_mu(Y))
        A += np.array([[xs.size, xs.sum()], [xs.sum(), xs @ xs]])[None, :, :]
        b += np.column_stack([z.sum(axis=0), xs @ z])
    beta = solve(A, b)
    if family.is_gaussian:
        return beta

    clamp = settings.ETA_CLAMP
    for _ in range(settings.IRLS_MAX_ITER):
        A = np.zeros((L, 2, 2))
        b = np.zeros((L, 2))
        for h in range(H):
            xs, Y = design(h)
            eta = beta[0][None, :] + xs[:, None] * beta[1][None, :]
            if family.kind is FamilyKind.BERNOULLI:
                eta = np.clip(eta, -clamp, clamp)
            mu = family.inverse_link(eta)
            dmu = family.mu_eta(eta)
            W = dmu**2 / family.variance(mu)
            z = eta + (Y - mu) / dmu
            Wx = W * xs[:, None]
            A[:, 0, 0] += W.sum(axis=0)
            A[:, 0, 1] += Wx.sum(axis=0)
            A[:, 1, 1] += (Wx * xs[:, None]).sum(axis=0)
            b[:, 0] += (W * z).sum(axis=0)
            b[:, 1] += (Wx * z).sum(axis=0)
        A[:, 1, 0] = A[:, 0, 1]
        updated = solve(A, b)
        done = np.max(np.abs(updated - beta)) <= settings.IRLS_TOL * (1.0 + np.max(np.abs(updated)))
        beta = updated
        if done:
            break
    else:
        logger.warning("reference fit did not converge in %d IRLS passes", settings.IRLS_MAX_ITER)
    return beta


def reference_fit(pop: Superpopulation) -> np.ndarray:
    """2 x L unweighted pointwise fit over the whole superpopulation."""
    return _reference_fit(pop.x, pop.offsets, pop.stratum_outcomes, pop.family, pop.L)


def generate_superpopulation(
    cfg: SuperpopulationConfig, n_workers: Optional[int] = None
) -> Superpopulation:
    """
    Generate a stratified superpopulation with functional outcomes.

    Stratum sizes and PSU sizes are Dirichlet-multinomial; PSUs left empty are dropped.
    Every stratum draws its covariates and outcomes from its own random stream, so
    the result does not depend on the number of workers.

    Args:
        cfg: Generation parameters; SNR targets, when set, override sigma_h/sigma_eps
        n_workers: Worker threads for per-stratum generation

    Returns:
        Superpopulation

    Raises:
        CapacityError if N x L exceeds MEMORY_CAP_CELLS outside streaming mode
    """
    cells = cfg.N * cfg.L
    if cells > settings.MEMORY_CAP_CELLS and not cfg.streaming:
        raise CapacityError(
            f"N*L={cells:.3g} outcome cells exceed the cap of {settings.MEMORY_CAP_CELLS:.3g}; "
            "set streaming=true to regenerate outcomes per stratum"
        )
    family = get_family(cfg.family)
    sigma_h, sigma_eps = calibrate_variances(cfg, cfg.snr_b, cfg.snr_eps)
    grid = np.linspace(0.0, 1.0, cfg.L)

    rng = stream_rng(cfg.seed, Stream.STRUCTURE)
    stratum_sizes = rng.multinomial(cfg.N, rng.dirichlet(np.full(cfg.H, cfg.dirichlet_strata)))
    psu_counts = rng.integers(cfg.psu_min, cfg.psu_max + 1, size=cfg.H)
    psu_sizes, psu_stratum = [], []
    for h in range(cfg.H):
        q = rng.dirichlet(np.full(psu_counts[h], cfg.dirichlet_psu))
        sizes = rng.multinomial(stratum_sizes[h], q)
        sizes = sizes[sizes > 0]
        psu_sizes.append(sizes)
        psu_stratum.append(np.full(sizes.size, h))
    psu_sizes_all = np.concatenate(psu_sizes)
    psu_stratum_all = np.concatenate(psu_stratum)
    C = psu_sizes_all.size
    gamma = rng.normal(1.0, cfg.sigma_s, cfg.H)
    xi_unit = rng.standard_normal((cfg.H, cfg.K))
    zeta_unit = rng.standard_normal((C, cfg.K))
    if cfg.re_mode is not ReMode.SCALING_AND_NOISE:
        gamma = np.ones(cfg.H)
    if cfg.re_mode is ReMode.NONE:
        xi, zeta = np.zeros_like(xi_unit), np.zeros_like(zeta_unit)
    else:
        xi, zeta = sigma_h * xi_unit, (sigma_h / math.sqrt(2.0)) * zeta_unit

    offsets = np.concatenate([[0], np.cumsum(stratum_sizes)])
    psu = np.repeat(np.arange(C), psu_sizes_all)
    x_sd = math.sqrt(cfg.x_variance)
    x = np.concatenate(
        run_parallel(
            lambda h: stream_rng(cfg.seed, Stream.STRATUM, h).normal(0.0, x_sd, stratum_sizes[h]),
            range(cfg.H),
            n_workers,
        )
    )
    truth = TrueCoefficients(grid=grid, beta0=true_beta0(grid), beta1=true_beta1(grid), gamma=gamma)
    generator = _OutcomeGenerator(
        seed=cfg.seed,
        family=family,
        sigma_eps=sigma_eps,
        beta0=truth.beta0,
        beta1=truth.beta1,
        gamma=gamma,
        x=x,
        psu=psu,
        offsets=offsets,
        xi=xi,
        zeta=zeta,
        re_basis=random_effect_basis(grid, cfg.K),
    )
    outcomes = None
    if not cfg.streaming:
        outcomes = np.vstack(run_parallel(generator, range(cfg.H), n_workers))

    def outcomes_of(h: int) -> np.ndarray:
        if outcomes is not None:
            return outcomes[int(offsets[h]):int(offsets[h + 1])]
        return generator(h)

    reference = _reference_fit(x, offsets, outcomes_of, family, cfg.L)
    logger.info(
        "generated superpopulation: N=%d, H=%d, C=%d, L=%d, %s, re_mode=%s%s",
        cfg.N, cfg.H, C, cfg.L, family.kind.value, cfg.re_mode.value,
        " (streaming)" if cfg.streaming else "",
    )
    return Superpopulation(
        config=cfg,
        family=family,
        grid=grid,
        offsets=offsets,
        psu=psu,
        psu_stratum=psu_stratum_all,
        x=x,
        truth=truth,
        xi=xi,
        zeta=zeta,
        re_basis=generator.re_basis,
        sigma_h=sigma_h,
        sigma_eps=sigma_eps,
        reference=reference,
        outcomes=outcomes,
        regenerate=generator,
    )


def draw_two_stage_sample(
    pop: Superpopulation,
    per_psu_n: int = 100,
    informativeness: Union[Informativeness, str] = Informativeness.NONE,
    seed: int = 0,
    psus_per_stratum: int = 2,
) -> SampleDraw:
    """
    Two-stage stratified sample: PPSWOR of PSUs within each stratum, then Poisson
    sampling of individuals within each selected PSU.

    Second-stage probabilities are proportional to ``expit(kappa * selection_index)``,
    the index being ``Ybar_sc * (1 + x_sc)`` standardized and truncated at +/-2, with
    ``Ybar_sc`` the mean outcome and ``x_sc`` the covariate, both standardized within
    the PSU. Heavy weights go to low outcomes, and to outcomes that run against the
    covariate, so both the unweighted intercept and slope are biased. kappa is 0, 1.5
    or 2 for none, medium or high informativeness.

    Args:
        pop: Superpopulation
        per_psu_n: Expected number of individuals taken per selected PSU
        informativeness: Strength of outcome-dependent selection
        seed: Sampling seed (independent of the generation seed)
        psus_per_stratum: PSUs selected per stratum

    Returns:
        SampleDraw with weights 1 / (pi1 * pi2) and both stage probabilities

    Raises:
        DesignError if a stratum has fewer than psus_per_stratum PSUs
    """
    if per_psu_n < 1:
        raise ParameterError(f"per_psu_n must be positive, got {per_psu_n}")
    kappa = INFORMATIVENESS_SLOPE[Informativeness(informativeness)]
    cap = settings.PSU_CERTAINTY_CAP
    psu_sizes = pop.psu_sizes()

    rows, pi1, pi2, outcomes, strata, psus = [], [], [], [], [], []
    clipped_psus = 0
    empty_psus = 0
    for h in range(pop.H):
        rng = stream_rng(seed, Stream.SAMPLING, h)
        candidates = np.flatnonzero(pop.psu_stratum == h)
        if candidates.size < psus_per_stratum:
            raise DesignError(
                f"stratum {h + 1} has {candidates.size} PSUs; need {psus_per_stratum}",
                stratum=f"{h + 1:02d}",
            )
        sizes = psu_sizes[candidates]
        stratum_slice = pop.stratum_rows(h)
        stratum_psu = pop.psu[stratum_slice]
        Y_h = pop.stratum_outcomes(h)
        for j in _ppswor(sizes, psus_per_stratum, rng):
            c = candidates[j]
            local = np.flatnonzero(stratum_psu == c)
            p1 = min(psus_per_stratum * sizes[j] / sizes.sum(), cap)
            score = expit(kappa * selection_index(Y_h[local], pop.x[stratum_slice.start + local]))
            p2, clipped = capped_inclusion(score, per_psu_n)
            clipped_psus += clipped
            take = rng.random(local.size) < p2
            if not take.any():
                empty_psus += 1
                continue
            rows.append(stratum_slice.start + local[take])
            outcomes.append(Y_h[local[take]])
            pi1.append(np.full(take.sum(), p1))
            pi2.append(p2[take])
            strata.append(np.full(take.sum(), f"{h + 1:02d}"))
            psus.append(np.full(take.sum(), f"{c + 1:05d}"))

    if clipped_psus:
        logger.warning(
            "second-stage probabilities clipped at 1 and renormalized in %d PSUs "
            "(expected take %d exceeds what the PSU supports)",
            clipped_psus, per_psu_n,
        )
    if empty_psus:
        logger.warning("%d selected PSUs contributed no individuals", empty_psus)

    rows_all = np.concatenate(rows)
    pi1_all, pi2_all = np.concatenate(pi1), np.concatenate(pi2)
    ds = FunctionalDesignDataset.from_arrays(
        outcomes=np.vstack(outcomes),
        covariates=pop.x[rows_all],
        weights=1.0 / (pi1_all * pi2_all),
        strata=np.concatenate(strata),
        psus=np.concatenate(psus),
        grid=pop.grid,
        covariate_names=["x"],
    )
    logger.info("drew %d individuals from %d strata", ds.n, ds.n_strata)
    return SampleDraw(
        dataset=ds,
        probs=StageProbabilities(pi1=pi1_all, pi2=pi2_all),
        rows=rows_all,
        reference=pop.reference,
        truth=pop.truth,
    )


def empirical_subsample(
    pop: FunctionalDesignDataset,
    scheme: Union[SubsampleScheme, str],
    n: int,
    seed: int = 0,
    family: Union[GlmFamily, str] = "gaussian",
    reference: Optional[np.ndarray] = None,
) -> SampleDraw:
    """
    Informative single-stage Poisson subsample of an observed dataset.

    Survey weights and mean outcomes are standardized and truncated at +/-2; the
    inclusion probability is proportional to the logistic of the weight score, the
    outcome score, or their average, and scaled to sum to ``n``.

    Args:
        pop: Dataset treated as the population
        scheme: uniform, weight-based, outcome-based or mixed
        n: Expected subsample size
        seed: Sampling seed
        family: Family of the unweighted reference fit on the population
        reference: Precomputed P x L reference fit, reused across subsamples

    Returns:
        SampleDraw with weights 1 / pi and single-stage probabilities
    """
    scheme = SubsampleScheme(scheme)
    if not 1 <= n <= pop.n:
        raise ParameterError(f"subsample size must lie in [1, {pop.n}], got {n}")
    w_sc = np.clip(standardize(pop.weights), -2.0, 2.0)
    m_sc = np.clip(standardize(pop.outcomes.mean(axis=1)), -2.0, 2.0)
    score = {
        SubsampleScheme.UNIFORM: np.ones(pop.n),
        SubsampleScheme.WEIGHT: expit(w_sc),
        SubsampleScheme.OUTCOME: expit(m_sc),
        SubsampleScheme.MIXED: expit(0.5 * w_sc + 0.5 * m_sc),
    }[scheme]
    pi, clipped = capped_inclusion(score, n)
    if clipped:
        logger.warning("subsampling probabilities clipped at 1 and renormalized")
    take = stream_rng(seed, Stream.SUBSAMPLE).random(pop.n) < pi
    rows = np.flatnonzero(take)
    ds = pop.subset(rows, weights=1.0 / pi[rows])
    if reference is None:
        reference = fit_pointwise(
            pop.covariates, pop.outcomes, np.ones(pop.n), family,
            covariate_names=pop.covariate_names,
        ).beta_tilde
    return SampleDraw(
        dataset=ds,
        probs=StageProbabilities(pi1=np.ones(rows.size), pi2=pi[rows], single_stage=True),
        rows=rows,
        reference=reference,
    )


_GRID_VALUES = {
    "family": ["gaussian", "bernoulli", "poisson"],
    "L": [50, 100, 1440],
    "snr_b": [0.5, 1.0, 5.0],
    "snr_eps": [0.5, 1.0, 5.0],
    "re_mode": list(ReMode),
}
_SAMPLING_GRID_VALUES = {
    "per_psu_n": [100, 500],
    "informativeness": list(Informativeness),
}


def settings_grid(
    baseline: SuperpopulationConfig, sampling: Optional[SamplingConfig] = None
) -> List[Tuple[str, SuperpopulationConfig, SamplingConfig]]:
    """
    Baseline setting plus one-at-a-time variations of each study factor.

    Returns:
        (name, superpopulation config, sampling config) triples; the first is the baseline
    """
    sampling = sampling or SamplingConfig()
    out = [("baseline", baseline, sampling)]
    for key, values in _GRID_VALUES.items():
        if key == "snr_eps" and get_family(baseline.family).kind is not FamilyKind.GAUSSIAN:
            continue
        for value in values:
            if value == getattr(baseline, key):
                continue
            update = {key: value}
            if key == "L" and baseline.N * value > settings.MEMORY_CAP_CELLS:
                update["streaming"] = True
            label = value.value if isinstance(value, ReMode) else value
            out.append((f"{key}={label}", baseline.model_copy(update=update), sampling))
    for key, values in _SAMPLING_GRID_VALUES.items():
        for value in values:
            if value == getattr(sampling, key):
                continue
            label = value.value if isinstance(value, Informativeness) else value
            out.append((f"{key}={label}", baseline, sampling.model_copy(update={key: value})))
    return out
