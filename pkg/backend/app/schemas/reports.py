from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class BoundReport(BaseModel):
    """Min/max principle outcome for a converged value field"""
    tolerance: float
    min_u: float = Field(..., description="Minimum of the coupled utility at the converged measure")
    max_u: float = Field(..., description="Maximum of the coupled utility at the converged measure")
    min_phi: float
    max_phi: float
    violation: float = Field(..., description="Largest excursion of phi outside [min_u, max_u]")
    holds: bool = Field(..., description="Generalized bound min_u - tol <= phi <= max_u + tol")
    nonnegative_utility: bool = Field(..., description="Whether the literal 0 <= phi <= U_bar check applies")
    literal_holds: Optional[bool] = None
    a_priori_bound: Optional[float] = Field(None, description="(delta_max / delta_min) * U_bar")
    a_priori_holds: Optional[bool] = None


class ContractionReport(BaseModel):
    """Sufficient condition for the HJB map to be a sup-norm contraction"""
    value: float
    holds: bool
    ubar: float
    lipschitz_u: float


class MonotonicityRow(BaseModel):
    j: int
    lhs: float
    rhs: float
    holds: bool


class MonotonicityReport(BaseModel):
    hbar: float
    lipschitz_g: float
    rows: List[MonotonicityRow]
    all_hold: bool
    cross_type_coupling: bool = Field(..., description="Off-diagonal kernel weights present")
    note: Optional[str] = None


class KernelReport(BaseModel):
    kind: str
    theta: Optional[float] = None
    symmetry_dev: float
    integrability_bound: float
    normalization: str


class CheckReport(BaseModel):
    contraction: ContractionReport
    monotonicity: MonotonicityReport
    kernel: KernelReport


class SolveReport(BaseModel):
    """Summary written to report.json for a run"""
    dynamic: str = Field(..., description="hjb, discounted_logit or logit_equilibrium")
    mode: Optional[str] = None
    nx: int
    ny: int
    iterations: int
    final_increment: Optional[float] = None
    final_residual: float
    converged: bool
    bound: Optional[BoundReport] = None
    checks: Optional[CheckReport] = None
    config: Dict[str, Any] = Field(default_factory=dict)


class ConvergenceRow(BaseModel):
    level: int
    n: int
    error: Optional[float] = None
    rate: Optional[float] = None
    converged: bool = True
    iterations: Optional[int] = None


class ConvergenceTable(BaseModel):
    case: str
    ref_level: int
    rows: List[ConvergenceRow]


class SweepPoint(BaseModel):
    theta: float
    dynamic: str
    converged: bool
    path: Optional[str] = None
    error: Optional[str] = None


class RegressRow(BaseModel):
    name: str
    max_diff: Optional[float] = None
    ok: bool
    reason: Optional[str] = None


class RegressReport(BaseModel):
    """Golden-file comparison of a run directory"""
    tolerance: float
    rows: List[RegressRow]
    ok: bool
