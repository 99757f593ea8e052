# sgdlab/app/schemas.py
from enum import Enum
from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import AfterValidator, BaseModel, BeforeValidator, ConfigDict, Field, field_validator, model_validator


class NoiseKind(str, Enum):
    RADEMACHER = "rademacher"
    GAUSSIAN = "gaussian"
    MINIBATCH = "minibatch"
    CUSTOM = "custom"


class ExpansionMethod(str, Enum):
    CLOSED_FORM = "closed_form"
    NUMERIC = "numeric"


class ConvexityCertificate(BaseModel):
    """Convexity and noise constants on the working ball B(x*, R), with the step cap they allow."""

    model_config = ConfigDict(frozen=True)

    gamma: float = Field(gt=0)
    b: float = Field(ge=0)
    L: float = Field(ge=0)
    R1: float
    R: float
    R0: float
    eta0: float
    b_estimated: bool = False

    @model_validator(mode="after")
    def check_radii(self):
        if not self.R0 < self.R <= self.R1:
            raise ValueError(f"need R0 < R <= R1, got R0={self.R0}, R={self.R}, R1={self.R1}")
        return self

    def admits(self, eta: float) -> bool:
        return 0 <= eta <= self.eta0


class ChainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    eta: float = Field(ge=0)
    n_steps: int = Field(ge=0)
    x0: Union[float, List[float]] = 0.0
    seed: int = Field(default=0, ge=0, lt=2**64)

    def x0_array(self, dim: int) -> np.ndarray:
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.size == 1 and dim > 1:
            x0 = np.full(dim, float(x0[0]))
        if x0.shape != (dim,):
            raise ValueError(f"x0 has {x0.size} components, family has dim {dim}")
        return x0


class EstimateWithError(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: float
    std_error: float = Field(ge=0)
    n_samples: int = Field(ge=2)
    escaped: int = 0

    def within(self, target: float, sigmas: float = 4.0, slack: float = 0.0) -> bool:
        return abs(self.value - target) <= sigmas * self.std_error + slack


class SdeConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    eta: float = Field(ge=0)
    dt: Optional[float] = None
    t_end: float = Field(ge=0)
    x0: Union[float, List[float]] = 0.0
    seed: int = Field(default=0, ge=0, lt=2**64)

    @model_validator(mode="before")
    @classmethod
    def default_dt(cls, data):
        if isinstance(data, dict) and data.get("dt") is None:
            eta = float(data.get("eta", 0.0))
            if eta <= 0:
                raise ValueError("dt is required when eta = 0")
            data = {**data, "dt": eta / 10}
        return data

    @model_validator(mode="after")
    def check_dt(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.eta > 0 and self.dt > self.eta * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} must not exceed eta={self.eta}")
        return self

    @property
    def n_steps(self) -> int:
        return max(int(round(self.t_end / self.dt)), 1) if self.t_end > 0 else 0

    def x0_array(self, dim: int) -> np.ndarray:
        return ChainConfig(eta=self.eta, n_steps=0, x0=self.x0).x0_array(dim)


class ExpansionEvaluation(BaseModel):
    model_config = ConfigDict(frozen=True)

    u0: float
    u1: float
    u_trunc: float
    method: ExpansionMethod
    x: List[float]
    t: float
    eta: float

    @classmethod
    def combine(cls, u0: float, u1: float, eta: float, method, x, t: float) -> "ExpansionEvaluation":
        return cls(
            u0=u0,
            u1=u1,
            u_trunc=u0 + eta * u1,
            method=method,
            x=np.atleast_1d(np.asarray(x, dtype=float)).tolist(),
            t=t,
            eta=eta,
        )


class WeakErrorCurve(BaseModel):
    model_config = ConfigDict(frozen=True)

    eta_grid: List[float]
    horizon: float
    n_steps: List[int]
    errors: List[float]
    std_errors: List[float]
    u_mc: List[float]
    u_trunc: List[float]
    noise_floor: List[bool]
    in_certificate: List[bool]
    slope: float
    intercept: float
    slope_ci: Tuple[float, float]
    slope_certified_only: Optional[float] = None

    @field_validator("eta_grid")
    @classmethod
    def strictly_decreasing(cls, grid):
        if any(b >= a for a, b in zip(grid, grid[1:])):
            raise ValueError("eta_grid must be strictly decreasing")
        return grid

    @field_validator("errors")
    @classmethod
    def non_negative(cls, errors):
        if any(e < 0 for e in errors):
            raise ValueError("errors must be non-negative")
        return errors


class UniformityReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    eta: float
    n_list: List[int]
    errors: List[float]
    std_errors: List[float]
    noise_floor: List[bool]
    max_error: float
    median_error: float
    growth_ok: bool
    reference_n: int
    reference_error: float
    bounded_by_reference: bool


class W2DecayCurve(BaseModel):
    model_config = ConfigDict(frozen=True)

    eta: float
    n_grid: List[int]
    w2_values: List[float]
    rho_ref: float
    initial_distance: float
    reference: List[float]
    fitted_rate: Optional[float] = None

    @field_validator("w2_values")
    @classmethod
    def non_negative(cls, values):
        if any(v < 0 for v in values):
            raise ValueError("w2 values must be non-negative")
        return values


class DescentTimeRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    eta: float
    n_star: int
    gap: float
    gap_std_error: float
    ratio: float
    plateau_gap: float


class DescentTimeReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    rows: List[DescentTimeRow]
    ratio_spread: float
    stable: bool


# --- experiment files -------------------------------------------------------


class ExperimentKind(str, Enum):
    WEAK_ERROR = "weak-error"
    UNIFORMITY = "uniformity"
    STATIONARY = "stationary"
    W2_DECAY = "w2-decay"
    DESCENT_TIME = "descent-time"
    EXPANSION_GRID = "expansion-grid"
    OU_CHECK = "ou-check"


def _split_csv(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


def _positive_decreasing(grid: List[float]) -> List[float]:
    if not grid or any(eta <= 0 for eta in grid):
        raise ValueError("eta_grid must hold positive step sizes")
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise ValueError("eta_grid must be strictly decreasing")
    return grid


def _nonnegative_increasing(grid: List[int]) -> List[int]:
    if not grid or any(n < 0 for n in grid):
        raise ValueError("step counts must be non-negative")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("step counts must be strictly increasing")
    return grid


# INI values arrive as "a, b, c".
StepSizeGrid = Annotated[List[float], BeforeValidator(_split_csv), AfterValidator(_positive_decreasing)]
StepCountGrid = Annotated[List[int], BeforeValidator(_split_csv), AfterValidator(_nonnegative_increasing)]


class ExperimentBase(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    family_id: str = "example1"
    phi_id: str = "sin"
    seed: int = Field(default=7, ge=0, lt=2**64)
    output: str = "results/run"
    radius: Optional[float] = Field(default=None, gt=0)
    threads: Optional[int] = Field(default=None, ge=0)


class WeakErrorConfig(ExperimentBase):
    experiment: Literal["weak-error"]
    x: float = 1.0
    horizon: float = Field(default=5.0, gt=0)
    eta_grid: StepSizeGrid = [0.5, 0.25, 0.125, 0.0625]
    n_samples: int = Field(default=10**6, ge=2)
    antithetic: bool = True
    method: ExpansionMethod = ExpansionMethod.NUMERIC
    slope_min: float = 1.6
    slope_max: float = 2.4


class UniformityConfig(ExperimentBase):
    experiment: Literal["uniformity"]
    x: float = 1.0
    eta: float = Field(default=0.125, gt=0)
    n_list: StepCountGrid = [1, 5, 20, 100, 500, 2000]
    n_samples: int = Field(default=10**6, ge=2)
    antithetic: bool = True
    growth_factor: float = Field(default=2.0, gt=0)
    reference_time: float = Field(default=5.0, gt=0)


class StationaryConfig(ExperimentBase):
    experiment: Literal["stationary"]
    eta: float = Field(default=0.5, gt=0)
    x0: float = 1.0
    burn_in: int = Field(default=100, ge=0)
    n_samples: int = Field(default=10**5, ge=2)
    reference: Optional[Literal["uniform01"]] = None
    ks_max: float = Field(default=0.01, gt=0)
    bins: int = Field(default=50, ge=1)


class W2DecayConfig(ExperimentBase):
    experiment: Literal["w2-decay"]
    eta: float = Field(default=0.1, gt=0)
    x0_a: float = 0.5
    x0_b: float = -0.5
    n_grid: StepCountGrid = [0, 5, 10, 20, 40]
    n_samples: int = Field(default=10**5, ge=2)
    rate_slack: float = Field(default=0.05, ge=0)


class DescentTimeConfig(ExperimentBase):
    experiment: Literal["descent-time"]
    eta_grid: StepSizeGrid = [0.25, 0.125, 0.0625]
    x0: float = 1.0
    n_samples: int = Field(default=10**5, ge=2)
    max_ratio_spread: float = Field(default=3.0, gt=1)

    @field_validator("eta_grid")
    @classmethod
    def below_one(cls, grid):
        if grid[0] >= 1:
            raise ValueError("eta_grid must lie below 1")
        return grid


class ExpansionGridConfig(ExperimentBase):
    experiment: Literal["expansion-grid"]
    eta: float = Field(default=0.01, ge=0)
    x_min: float = -4.0
    x_max: float = 4.0
    nx: int = Field(default=81, ge=1)
    t_min: float = Field(default=0.0, ge=0)
    t_max: float = Field(default=2.0, ge=0)
    nt: int = Field(default=21, ge=1)
    method: ExpansionMethod = ExpansionMethod.NUMERIC
    mc_samples: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def check_grid(self):
        if self.t_max < self.t_min:
            raise ValueError(f"t_max={self.t_max} is below t_min={self.t_min}")
        if self.mc_samples > 0 and self.eta <= 0:
            raise ValueError("mc_samples needs eta > 0")
        return self


class OuCheckConfig(ExperimentBase):
    experiment: Literal["ou-check"]
    family_id: str = "ou"
    eta: float = Field(default=0.1, gt=0)
    x0: float = 1.0
    t_end: float = Field(default=1.0, gt=0)
    dt: Optional[float] = Field(default=None, gt=0)
    n_samples: int = Field(default=10**5, ge=2)
    bias_constant: float = Field(default=1.0, ge=0)

    @model_validator(mode="after")
    def check_dt(self):
        if self.dt is not None and self.dt > self.eta * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} must not exceed eta={self.eta}")
        return self

    def sde_config(self) -> SdeConfig:
        return SdeConfig(eta=self.eta, dt=self.dt, t_end=self.t_end, x0=self.x0, seed=self.seed)


ExperimentConfig = Annotated[
    Union[
        WeakErrorConfig,
        UniformityConfig,
        StationaryConfig,
        W2DecayConfig,
        DescentTimeConfig,
        ExpansionGridConfig,
        OuCheckConfig,
    ],
    Field(discriminator="experiment"),
]
