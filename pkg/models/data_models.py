from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import List, Dict, Any, Literal, Optional, Tuple


# ============================================================================
# Value types shared by the numerical core
# ============================================================================


class RateVariant(BaseModel):
    """Choice of local rate density: Phi1 = min(rho, 1-rho) or Phi2 = rho(1-rho)."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    variant: Literal[1, 2] = Field(default=2, description="Mobility bound variant")
    truncation_a: Optional[float] = Field(default=None, gt=0, lt=0.5, description="Truncation level a in (0, 1/2)")


class RegionTriplet(BaseModel):
    """Flux, density and speed carried by one region of a zoned partition."""
    model_config = ConfigDict(frozen=True)

    kappa: float = Field(gt=0, description="Flux")
    rho: float = Field(gt=0, lt=1, description="Density")
    lam: float = Field(gt=0, description="Speed")

    @model_validator(mode="after")
    def _flux_matches(self):
        expected = self.lam * self.rho * (1 - self.rho)
        if abs(self.kappa - expected) > 1e-12 * max(abs(self.kappa), abs(expected)):
            raise ValueError(f"kappa={self.kappa!r} differs from lam rho (1-rho)={expected!r}")
        return self

    @classmethod
    def from_flux(cls, kappa: float, rho: float) -> "RegionTriplet":
        return cls(kappa=kappa, rho=rho, lam=kappa / (rho * (1 - rho)))

    @classmethod
    def from_speed(cls, lam: float, rho: float) -> "RegionTriplet":
        return cls(kappa=lam * rho * (1 - rho), rho=rho, lam=lam)


class InvariantViolation(BaseModel):
    """One failed identity on a partition edge or region."""
    edge_id: str = Field(description="Edge or region identifier")
    identity: str = Field(description="Name of the failed identity")
    detail: str = Field(default="", description="Values involved")


class PartitionReport(BaseModel):
    """Outcome of validating a zoned partition."""
    regions: int = Field(description="Number of regions")
    checked_edges: int = Field(default=0, description="Number of adjacent region pairs checked")
    covered_area: float = Field(description="Total area of the regions")
    expected_area: float = Field(description="Area of [0,T] x [-r*, r*]")
    violations: List[InvariantViolation] = Field(default_factory=list, description="Every failed check")

    @property
    def passed(self) -> bool:
        return not self.violations


class EntropyBreakdown(BaseModel):
    inner: float = Field(description="Contribution of triangles inside [-r_*, r_*]")
    tail: float = Field(description="Contribution of the tail band")


class EntropyReport(BaseModel):
    """Monte Carlo and theoretical relative-entropy densities."""
    mc_estimate: Optional[float] = Field(default=None, description="Replica mean of the entropy density")
    std_error: Optional[float] = Field(default=None, ge=0, description="Standard error of the replica mean")
    replicas: Optional[int] = Field(default=None, ge=1, description="Number of replicas")
    theoretical_bound: Optional[float] = Field(default=None, description="inner + tail")
    breakdown: Optional[EntropyBreakdown] = Field(default=None, description="Split of the theoretical bound")

    @model_validator(mode="after")
    def _breakdown_sums(self):
        if self.breakdown is not None and self.theoretical_bound is not None:
            total = self.breakdown.inner + self.breakdown.tail
            if abs(total - self.theoretical_bound) > 1e-12 * max(1.0, abs(self.theoretical_bound)):
                raise ValueError("breakdown does not sum to the theoretical bound")
        return self


class ClosedFormParams(BaseModel):
    """Parameters of the explicit piecewise-linear Hopf-Lax solutions."""
    model_config = ConfigDict(extra="forbid")

    case: Literal["a", "b", "c", "d"] = Field(description="global, vertical cut, diagonal cut or shock")
    lam: float = Field(default=1.0, gt=0, description="Speed for case a")
    rho: float = Field(default=0.5, ge=0, le=1, description="Density for case a")
    lam_minus: float = Field(default=1.0, gt=0, description="Speed left of the cut")
    lam_plus: float = Field(default=1.0, gt=0, description="Speed right of the cut")
    rho_minus: float = Field(default=0.5, ge=0, le=1, description="Density left of the cut")
    rho_plus: float = Field(default=0.5, ge=0, le=1, description="Density right of the cut")
    zeta0: float = Field(default=0.0, description="Position of the cut at time s0")
    s0: float = Field(default=0.0, ge=0, description="Start time")
    f_anchor: float = Field(default=0.0, description="Value at (s0, zeta0)")
    slope: float = Field(default=1.0, gt=0, description="Diagonal slope b/tau for case c")


# ============================================================================
# Experiment configuration documents
# ============================================================================


class ExperimentConfig(BaseModel):
    """Fields shared by every subcommand; unknown keys are rejected."""
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(default=20240611, ge=0, description="Global seed")
    replicas: int = Field(default=1, ge=1, description="Independent replicas")
    out_dir: Optional[str] = Field(default=None, description="Output directory")


class GridSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dt: float = Field(gt=0, description="Time step")
    dxi: float = Field(gt=0, description="Space step")


class SpeedSpec(BaseModel):
    """Either a constant speed or a SimpleSpeed JSON file."""
    model_config = ConfigDict(extra="forbid")

    constant: Optional[float] = Field(default=None, gt=0, description="Constant speed")
    speed_json: Optional[str] = Field(default=None, description="Path of a SimpleSpeed JSON document")

    @model_validator(mode="after")
    def _exactly_one(self):
        if (self.constant is None) == (self.speed_json is None):
            raise ValueError("give exactly one of 'constant' and 'speed_json'")
        return self


class InitialSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["wedge", "flat", "linear", "bernoulli", "two_phase"] = Field(description="Initial profile family")
    rho: float = Field(default=0.5, ge=0, le=1, description="Density for linear and bernoulli")
    rho_left: float = Field(default=0.8, ge=0, le=1, description="Left density for two_phase")
    rho_right: float = Field(default=0.2, ge=0, le=1, description="Right density for two_phase")


class HydroConfig(ExperimentConfig):
    initial_spec: InitialSpec = Field(default_factory=lambda: InitialSpec(kind="wedge"))
    speed_spec: SpeedSpec = Field(default_factory=lambda: SpeedSpec(constant=1.0))
    N_list: List[int] = Field(default_factory=lambda: [250, 500, 1000, 2000], min_length=1)
    T: float = Field(default=1.0, gt=0)
    grid: GridSpec = Field(default_factory=lambda: GridSpec(dt=1 / 400, dxi=1 / 400))
    r: float = Field(default=2.0, gt=0, description="Half-width of the comparison window")
    max_final_error: Optional[float] = Field(default=None, gt=0, description="Self-check bound at the largest N")

    @field_validator("N_list")
    @classmethod
    def _positive(cls, value):
        if any(n < 1 for n in value):
            raise ValueError("every N must be positive")
        return value


class TiltConfig(ExperimentConfig):
    rho: float = Field(default=0.5, gt=0, lt=1)
    speed: float = Field(default=2.0, gt=0)
    N: int = Field(default=1000, ge=1)
    T: float = Field(default=1.0, gt=0)
    width: float = Field(default=2.0, gt=0, description="Torus length in macro units")
    flux_tolerance: float = Field(default=0.02, gt=0)
    entropy_rel_tolerance: float = Field(default=0.05, gt=0)


class IntermittentConfig(ExperimentConfig):
    kappa: float = Field(default=0.16, gt=0, lt=0.25)
    rho_bar: float = Field(default=0.5, gt=0, lt=1)
    m: int = Field(default=8, ge=8)
    n_list: List[int] = Field(default_factory=lambda: [4, 8], min_length=1)
    T: float = Field(default=1.0, gt=0, description="Horizon, a whole number of slabs tau")
    N: int = Field(default=1000, ge=1)
    tau: float = Field(default=0.5, gt=0)
    b: float = Field(default=0.5, gt=0)
    r_star: float = Field(default=0.5, gt=0)
    flux_tolerance: float = Field(default=0.01, gt=0)
    decay_range: Tuple[float, float] = Field(default=(0.35, 0.65))


class SpeedBuildConfig(ExperimentConfig):
    g_csv: Optional[str] = Field(default=None, description="MacroField CSV of the deviation g")
    g_vertices: Optional[List[List[float]]] = Field(default=None, description="Vertex heights instead of a CSV")
    T: float = Field(default=1.0, gt=0)
    tau: float = Field(gt=0)
    b: float = Field(gt=0)
    m: int = Field(ge=8)
    n: int = Field(ge=2)
    r_star: float = Field(gt=0)

    @model_validator(mode="after")
    def _one_source(self):
        if (self.g_csv is None) == (self.g_vertices is None):
            raise ValueError("give exactly one of 'g_csv' and 'g_vertices'")
        return self


class LinearProfile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rho: float = Field(ge=0, le=1)
    anchor: float = Field(default=0.0)


class HopflaxConfig(ExperimentConfig):
    speed_spec: SpeedSpec = Field(default_factory=lambda: SpeedSpec(constant=1.0))
    f0_csv: Optional[str] = Field(default=None, description="MacroField CSV whose first row is f0")
    f0_linear: Optional[LinearProfile] = Field(default=None, description="Linear f0 instead of a CSV")
    T: float = Field(default=1.0, gt=0)
    dt: float = Field(default=1 / 100, gt=0)
    dxi: float = Field(default=1 / 100, gt=0)
    L: float = Field(default=3.0, gt=0)
    oracle: Optional[ClosedFormParams] = Field(default=None, description="Closed-form solution to compare with")

    @model_validator(mode="after")
    def _one_source(self):
        if self.oracle is None and (self.f0_csv is None) == (self.f0_linear is None):
            raise ValueError("give exactly one of 'f0_csv' and 'f0_linear' (or an oracle)")
        return self


class EnvelopeStep(BaseModel):
    model_config = ConfigDict(extra="forbid")

    time: float = Field(ge=0, description="Time from which the bounds hold")
    lower: List[Optional[int]] = Field(description="Strict lower bounds per site (null: none)")
    upper: List[Optional[int]] = Field(description="Strict upper bounds per site (null: none)")


class RandomDoobSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    count: int = Field(default=20, ge=1)
    k_max: int = Field(default=6, ge=1, le=12)
    T_max: float = Field(default=2.0, gt=0)


class DoobCheckConfig(ExperimentConfig):
    k: Optional[int] = Field(default=None, ge=1, le=12)
    initial: Optional[List[int]] = Field(default=None)
    envelopes: Optional[List[EnvelopeStep]] = Field(default=None)
    T: float = Field(default=1.0, gt=0)
    random: Optional[RandomDoobSpec] = Field(default=None, description="Random systems instead of an explicit one")
    tolerance: float = Field(default=1e-6, gt=0)

    @model_validator(mode="after")
    def _explicit_or_random(self):
        explicit = self.k is not None and self.initial is not None and self.envelopes is not None
        if not explicit and self.random is None:
            raise ValueError("give k, initial and envelopes, or a random block")
        if explicit and len(self.initial) != self.k:
            raise ValueError("initial must have k entries")
        return self


class RateEvalConfig(ExperimentConfig):
    field_csv: str = Field(description="MacroField CSV")
    variant: Literal[1, 2] = Field(default=2)
    truncation_a: Optional[float] = Field(default=None, gt=0, lt=0.5)
    r: float = Field(default=1.0, gt=0)
    cells: int = Field(default=16, ge=1)


class OneBlockConfig(ExperimentConfig):
    N: int = Field(default=1000, ge=1)
    rho: float = Field(default=0.5, gt=0, lt=1)
    T: float = Field(default=1.0, gt=0)
    width: float = Field(default=1.0, gt=0, description="Torus length in macro units")
    k_list: List[int] = Field(default_factory=lambda: [4, 32], min_length=1)
    decay_factor: float = Field(default=0.5, gt=0)


CONFIG_MODELS: Dict[str, Any] = {
    "hydro": HydroConfig,
    "tilt": TiltConfig,
    "intermittent": IntermittentConfig,
    "speed-build": SpeedBuildConfig,
    "hopflax": HopflaxConfig,
    "doob-check": DoobCheckConfig,
    "rate-eval": RateEvalConfig,
    "oneblock": OneBlockConfig,
}
