import json
import math
from enum import Enum
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.core.config import settings
from app.core.exceptions import ConfigError
from app.models.graphon import KernelKind
from app.models.scenario import ProfileKind


class SolverMode(str, Enum):
    """HJB iteration schemes"""
    PSEUDO_TIME = "pseudo_time"
    DAMPED_PICARD = "damped_picard"


class CaseName(str, Enum):
    """Case taxonomy of the fishery study"""
    A = "A"
    B = "B"
    C = "C"
    D = "D"
    R = "R"
    M = "M"


class CostVariant(str, Enum):
    DEFAULT = "default"
    HIGH = "high"


class StrictModel(BaseModel):
    """Base for config sections: unknown keys are errors"""
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridSection(StrictModel):
    nx: int = Field(300, ge=2, description="Number of action cells")
    ny: int = Field(300, ge=1, description="Number of type cells")


class SolverConfig(StrictModel):
    dt: float = Field(settings.DEFAULT_DT, gt=0, description="Pseudo-time increment")
    eps: float = Field(settings.DEFAULT_EPS, gt=0, description="Increment stopping threshold")
    max_iter: int = Field(settings.DEFAULT_MAX_ITER, ge=1, description="Iteration cap")
    mode: SolverMode = Field(SolverMode.PSEUDO_TIME, description="Iteration scheme")
    omega: float = Field(settings.DEFAULT_OMEGA, gt=0, le=1, description="Damping weight (damped_picard only)")


class GraphonSection(StrictModel):
    kind: KernelKind = Field(KernelKind.GAUSSIAN, description="Kernel family")
    theta: Optional[float] = Field(0.5, gt=0, description="Gaussian width in type space")
    path: Optional[str] = Field(None, description="l,j,w CSV for custom kernels")
    normalize: bool = Field(True, description="Per-column normalization of custom kernels")

    @model_validator(mode="after")
    def check_kind_fields(self):
        if self.kind is KernelKind.GAUSSIAN and self.theta is None:
            raise ValueError("gaussian kernel requires theta")
        if self.kind is KernelKind.CUSTOM and not self.path:
            raise ValueError("custom kernel requires path")
        return self


class RateSpec(StrictModel):
    kind: ProfileKind = Field(ProfileKind.CONSTANT, description="Profile shape")
    value: Optional[float] = Field(None, gt=0, description="Constant value")

    @model_validator(mode="after")
    def check_value(self):
        if self.kind is ProfileKind.CONSTANT and self.value is None:
            raise ValueError("constant rate profile requires value")
        return self


class RatesSection(StrictModel):
    delta: RateSpec = Field(default_factory=lambda: RateSpec(kind=ProfileKind.CONSTANT, value=0.5))
    eta: RateSpec = Field(default_factory=lambda: RateSpec(kind=ProfileKind.CONSTANT, value=2.0))


class UtilitySection(StrictModel):
    c0: float = Field(math.sqrt(2.0), gt=0, description="Downstream cost")
    c1: float = Field(math.sqrt(10.0), gt=0, description="Upstream cost")
    rho: float = Field(0.05, gt=0, description="Cost transition sharpness")
    gamma: float = Field(settings.DEFAULT_GAMMA, ge=0, description="Gain regularizer under the square root")


class InitialSection(StrictModel):
    kind: Literal["uniform", "file"] = "uniform"
    path: Optional[str] = None

    @model_validator(mode="after")
    def check_path(self):
        if self.kind == "file" and not self.path:
            raise ValueError("file initial measure requires path")
        return self


EmitName = Literal["phi", "p", "alpha", "report"]


class OutputsSection(StrictModel):
    dir: str = Field(settings.OUTPUT_DIR, description="Output directory")
    emit: List[EmitName] = Field(default_factory=lambda: ["phi", "p", "alpha", "report"])


class RunConfig(StrictModel):
    grid: GridSection = Field(default_factory=GridSection)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    graphon: GraphonSection = Field(default_factory=GraphonSection)
    rates: RatesSection = Field(default_factory=RatesSection)
    utility: UtilitySection = Field(default_factory=UtilitySection)
    initial: InitialSection = Field(default_factory=InitialSection)
    outputs: OutputsSection = Field(default_factory=OutputsSection)

    def updated(self, **sections) -> "RunConfig":
        """Copy with whole sections or section fields replaced, re-validated"""
        data = self.model_dump(mode="json")
        for name, value in sections.items():
            if isinstance(value, BaseModel):
                data[name] = value.model_dump(mode="json")
            else:
                data[name] = {**data[name], **value}
        return validate_run_config(data)


class CasePreset(StrictModel):
    name: CaseName
    delta: RateSpec
    eta: RateSpec
    graphon: bool = True
    costs: CostVariant = CostVariant.DEFAULT


_CASE_RATES = {
    CaseName.A: (RateSpec(kind=ProfileKind.CONSTANT, value=0.5), 1 / 0.5),
    CaseName.B: (RateSpec(kind=ProfileKind.CONSTANT, value=0.5), 1 / 0.005),
    CaseName.C: (RateSpec(kind=ProfileKind.CONSTANT, value=0.005), 1 / 0.5),
    CaseName.D: (RateSpec(kind=ProfileKind.CONSTANT, value=0.005), 1 / 0.005),
    CaseName.R: (RateSpec(kind=ProfileKind.LINEAR_R), 1 / 0.005),
    CaseName.M: (RateSpec(kind=ProfileKind.LINEAR_M), 1 / 0.005),
}

_COSTS = {
    CostVariant.DEFAULT: (math.sqrt(2.0), math.sqrt(10.0)),
    CostVariant.HIGH: (math.sqrt(4.0), math.sqrt(14.0)),
}


def make_preset(
    name: Union[CaseName, str],
    graphon: bool = True,
    costs: Union[CostVariant, str] = CostVariant.DEFAULT,
) -> CasePreset:
    delta, eta = _CASE_RATES[CaseName(name)]
    return CasePreset(
        name=CaseName(name),
        delta=delta,
        eta=RateSpec(kind=ProfileKind.CONSTANT, value=eta),
        graphon=graphon,
        costs=CostVariant(costs),
    )


def expand_preset(
    preset: CasePreset,
    base: Optional[RunConfig] = None,
    theta: float = 0.5,
) -> RunConfig:
    """Apply a case preset on top of a base config (pure: same inputs, same RunConfig)"""
    base = base or RunConfig()
    c0, c1 = _COSTS[preset.costs]
    if preset.graphon:
        graphon = GraphonSection(kind=KernelKind.GAUSSIAN, theta=theta)
    else:
        # no-graphon case: the exact delta kernel instead of theta -> 0
        graphon = GraphonSection(kind=KernelKind.IDENTITY, theta=None)
    return base.updated(
        rates=RatesSection(delta=preset.delta, eta=preset.eta),
        graphon=graphon,
        utility={"c0": c0, "c1": c1},
    )


def validate_run_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid run configuration: {e}") from e


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Read a JSON run file with exactly the RunConfig schema"""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config {path} is not valid JSON: {e}") from e
    return validate_run_config(data)
