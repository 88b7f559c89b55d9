"""Pydantic schemas for configuration, run manifests and evaluation reports."""
import enum
import math
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# Ingestion schemas
class ColumnMap(BaseModel):
    """Column names of a survey functional CSV."""
    outcome_prefix: str = Field("y_", description="Prefix shared by outcome columns")
    covariates: Optional[List[str]] = Field(
        None, description="Covariate columns; all remaining columns when omitted"
    )
    weight: str = Field("weight", description="Survey weight column")
    stratum: str = Field("stratum", description="Stratum label column")
    psu: str = Field("psu", description="PSU label column")
    add_intercept: bool = Field(True, description="Prepend an intercept column")


# Smoothing schemas
class SmootherSpec(BaseModel):
    """Penalized B-spline smoother settings."""
    basis_dim: Optional[int] = Field(
        None, ge=2, description="Basis dimension K_s; min(ceil(L/4), 35) when omitted"
    )
    degree: int = Field(3, ge=1, description="Spline degree")
    penalty_order: int = Field(2, ge=1, description="Order of the difference penalty")
    lam: Union[float, Literal["auto"]] = Field(
        "auto", description="Smoothing parameter, or 'auto' for GCV selection"
    )

    @field_validator("lam")
    @classmethod
    def _nonnegative(cls, v):
        if v != "auto" and (not math.isfinite(v) or v < 0):
            raise ValueError("lam must be a nonnegative finite number or 'auto'")
        return v

    @model_validator(mode="after")
    def _basis_large_enough(self):
        if self.basis_dim is not None:
            needed = max(self.penalty_order + 2, self.degree + 1)
            if self.basis_dim < needed:
                raise ValueError(f"basis_dim must be at least {needed}")
        return self


# Simulation schemas
class ReMode(str, enum.Enum):
    """Stratum/PSU random-effect structure of the superpopulation."""
    NONE = "none"
    NOISE_ONLY = "noise-only"
    SCALING_AND_NOISE = "scaling-and-noise"


class Informativeness(str, enum.Enum):
    """Strength of outcome-dependent second-stage selection."""
    NONE = "none"
    MEDIUM = "medium"
    HIGH = "high"


class SubsampleScheme(str, enum.Enum):
    """Single-stage informative subsampling schemes."""
    UNIFORM = "uniform"
    WEIGHT = "weight-based"
    OUTCOME = "outcome-based"
    MIXED = "mixed"


class SuperpopulationConfig(BaseModel):
    """Generation parameters of the stratified superpopulation."""
    model_config = ConfigDict(extra="forbid")

    N: int = Field(100_000, ge=10, description="Superpopulation size")
    H: int = Field(30, ge=1, description="Number of strata")
    psu_min: int = Field(75, ge=2, description="Smallest PSU count per stratum")
    psu_max: int = Field(125, ge=2, description="Largest PSU count per stratum")
    dirichlet_strata: float = Field(4.0, gt=0, description="Stratum assignment concentration")
    dirichlet_psu: float = Field(10.0, gt=0, description="PSU assignment concentration")
    family: str = Field("gaussian", description="Outcome family")
    K: int = Field(5, ge=2, description="Random-effect B-spline basis dimension")
    sigma_s: float = Field(0.5, ge=0, description="SD of the stratum slope scaling")
    sigma_h: float = Field(1.0, ge=0, description="Stratum random-effect SD")
    sigma_eps: float = Field(1.0, ge=0, description="Gaussian noise SD")
    snr_b: Optional[float] = Field(0.5, gt=0, description="Fixed/random effect SD ratio")
    snr_eps: Optional[float] = Field(1.0, gt=0, description="Linear predictor/noise SD ratio")
    re_mode: ReMode = Field(ReMode.SCALING_AND_NOISE)
    L: int = Field(50, ge=2, description="Grid length")
    x_variance: float = Field(2.0, gt=0, description="Variance of the scalar covariate")
    seed: int = Field(2213, ge=0)
    streaming: bool = Field(False, description="Regenerate outcomes per stratum on demand")
    pilot_n: int = Field(10_000, ge=100, description="Pilot size for SNR calibration")

    @model_validator(mode="after")
    def _psu_range(self):
        if self.psu_max < self.psu_min:
            raise ValueError("psu_max must be >= psu_min")
        return self


class SamplingConfig(BaseModel):
    """Two-stage sampling parameters applied to a superpopulation."""
    model_config = ConfigDict(extra="forbid")

    per_psu_n: int = Field(100, ge=1, description="Expected individuals taken per PSU")
    informativeness: Informativeness = Field(Informativeness.NONE)
    psus_per_stratum: int = Field(2, ge=2, description="PSUs drawn per stratum")


# Run manifests
class RunManifest(BaseModel):
    """Audit record written next to every CLI output."""
    subcommand: str
    version: str
    seed: Optional[int] = None
    config: Dict[str, Any] = Field(default_factory=dict)
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)
    wall_time_seconds: float = 0.0
    replicate_failures: int = 0
    results: Dict[str, Any] = Field(default_factory=dict)


# Evaluation
class EvalReport(BaseModel):
    """Accuracy and coverage of one fitted run against the truth."""
    setting: Dict[str, Any] = Field(default_factory=dict)
    method: str
    coefficients: List[str]
    ise: List[float]
    pointwise_coverage: List[float]
    joint_coverage: List[int]
    mean_se: List[float] = Field(default_factory=list)
    variance_proportion: Optional[float] = None

    @field_validator("pointwise_coverage")
    @classmethod
    def _fractions(cls, v):
        if any(not (0.0 <= x <= 1.0) for x in v):
            raise ValueError("coverage fractions must lie in [0, 1]")
        return v

    @field_validator("ise")
    @classmethod
    def _nonnegative_ise(cls, v):
        if any(x < 0 for x in v):
            raise ValueError("ISE must be nonnegative")
        return v
