"""Domain models."""
from svyfosr.models.bands import BandEstimate
from svyfosr.models.coefficients import RawCoefficientMatrix, SmoothedCoefficients, SplineBasis
from svyfosr.models.dataset import DesignSummary, FunctionalDesignDataset
from svyfosr.models.family import GlmFamily, get_family
from svyfosr.models.replicates import BootType, ReplicateWeightSet, StageProbabilities
from svyfosr.models.simulation import SampleDraw, Superpopulation, TrueCoefficients

__all__ = [
    "BandEstimate",
    "RawCoefficientMatrix",
    "SmoothedCoefficients",
    "SplineBasis",
    "DesignSummary",
    "FunctionalDesignDataset",
    "GlmFamily",
    "get_family",
    "BootType",
    "ReplicateWeightSet",
    "StageProbabilities",
    "SampleDraw",
    "Superpopulation",
    "TrueCoefficients",
]
