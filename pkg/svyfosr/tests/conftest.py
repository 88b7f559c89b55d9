"""Pytest configuration and fixtures."""
import numpy as np
import pytest

from svyfosr.models.dataset import FunctionalDesignDataset
from svyfosr.models.replicates import StageProbabilities
from svyfosr.schemas import SuperpopulationConfig
from svyfosr.services.simulation import generate_superpopulation


def make_dataset(
    n_strata: int = 4,
    psus_per_stratum: int = 4,
    per_psu: int = 15,
    L: int = 20,
    seed: int = 11,
    family: str = "gaussian",
) -> FunctionalDesignDataset:
    """Small stratified two-stage dataset with a known linear signal."""
    rng = np.random.default_rng(seed)
    n = n_strata * psus_per_stratum * per_psu
    s = np.linspace(0.0, 1.0, L)
    strata = np.repeat([f"S{h}" for h in range(n_strata)], psus_per_stratum * per_psu)
    psus = np.tile(np.repeat([f"P{c}" for c in range(psus_per_stratum)], per_psu), n_strata)
    x = rng.normal(0.0, 1.0, n)
    eta = 0.5 + np.outer(x, np.sin(2 * np.pi * s))
    if family == "bernoulli":
        Y = (rng.random(eta.shape) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    elif family == "poisson":
        Y = rng.poisson(np.exp(0.3 * eta)).astype(float)
    else:
        Y = eta + rng.normal(0.0, 0.3, eta.shape)
    return FunctionalDesignDataset.from_arrays(
        outcomes=Y,
        covariates=x,
        weights=rng.uniform(1.0, 3.0, n),
        strata=strata,
        psus=psus,
        grid=s,
        covariate_names=["x"],
    )


@pytest.fixture
def small_dataset():
    """Gaussian dataset: 4 strata x 4 PSUs x 15 individuals, L=20."""
    return make_dataset()


@pytest.fixture
def stage_probs(small_dataset):
    """Two-stage probabilities aligned with ``small_dataset`` (pi1 constant per PSU)."""
    n_psus = small_dataset.n_psus
    pi1_psu = np.linspace(0.2, 0.6, n_psus)
    pi2 = np.random.default_rng(5).uniform(0.3, 0.9, small_dataset.n)
    return StageProbabilities(pi1=pi1_psu[small_dataset.psu_ids], pi2=pi2)


@pytest.fixture
def small_config():
    """Superpopulation small enough to generate in well under a second."""
    return SuperpopulationConfig(
        N=3000, H=4, psu_min=4, psu_max=6, L=20, pilot_n=500, seed=7
    )


@pytest.fixture
def small_population(small_config):
    """Generated superpopulation for ``small_config``."""
    return generate_superpopulation(small_config)
