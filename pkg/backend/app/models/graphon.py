"""Graphon coupling kernels on the type grid.

A kernel stores ``w[l, j]``, the cell average over type cell ``l`` of
W(., y_j), rescaled so every column integrates to one. Convolving a local
utility with it gives the coupled utility as a per-column weighted average.
"""
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import pandas as pd
import structlog
from scipy.special import erf

from app.core.config import settings
from app.core.exceptions import DimensionMismatchError, InvalidParameterError, OutputError
from app.models.grid import Grid

logger = structlog.get_logger()


class KernelKind(str, Enum):
    """Supported kernel families"""
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"
    IDENTITY = "identity"
    CUSTOM = "custom"


@dataclass(frozen=True)
class GraphonKernel:
    kind: KernelKind
    w: np.ndarray = field(repr=False)
    dy: float
    theta: Optional[float] = None
    normalized: bool = True
    column_mass: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        w.setflags(write=False)
        weights = w * self.dy
        weights.setflags(write=False)
        column_mass = np.add.reduce(weights, axis=0)
        column_mass.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "column_mass", column_mass)

    @property
    def n_y(self) -> int:
        return self.w.shape[0]


def _normalize_columns(w: np.ndarray, dy: float) -> np.ndarray:
    mass = np.add.reduce(w * dy, axis=0)
    if np.any(mass <= 0.0):
        raise InvalidParameterError("kernel has a column with zero mass; cannot normalize")
    return w / mass


def _check_mass(kernel: GraphonKernel) -> GraphonKernel:
    deviation = float(np.max(np.abs(kernel.column_mass - 1.0)))
    if deviation > settings.KERNEL_MASS_TOLERANCE:
        logger.warning(f"Kernel column mass deviates from 1 by {deviation:.3e}", kind=kernel.kind.value)
    return kernel


def build_gaussian(theta: float, grid: Grid) -> GraphonKernel:
    """Cell-averaged Gaussian kernel exp(-(s - y_j)^2 / (2 theta^2)), normalized per column"""
    if not theta > 0:
        raise InvalidParameterError(f"theta must be positive, got {theta}")

    edges = np.arange(grid.n_y + 1) * grid.dy
    scale = np.sqrt(2.0) * theta
    # erf at every (edge, column centre) pair; cell integrals are differences along the edge axis
    cdf = erf((edges[:, None] - grid.y_centers[None, :]) / scale)
    cell_integral = 0.5 * np.sqrt(np.pi) * scale * (cdf[1:, :] - cdf[:-1, :])
    w = _normalize_columns(cell_integral / grid.dy, grid.dy)

    return _check_mass(GraphonKernel(kind=KernelKind.GAUSSIAN, w=w, dy=grid.dy, theta=float(theta)))


def build_uniform(grid: Grid) -> GraphonKernel:
    """Flat kernel W = 1 (uniform mixing across types)"""
    w = np.ones((grid.n_y, grid.n_y))
    return GraphonKernel(kind=KernelKind.UNIFORM, w=w, dy=grid.dy)


def build_identity(grid: Grid) -> GraphonKernel:
    """No-graphon kernel: w[l, j] = 1{l = j} / dy"""
    w = np.eye(grid.n_y) / grid.dy
    return GraphonKernel(kind=KernelKind.IDENTITY, w=w, dy=grid.dy)


def convolve(u: np.ndarray, kernel: GraphonKernel, grid: Grid) -> np.ndarray:
    """Coupled utility result[i, j] = sum_l u[i, l] w[l, j] dy"""
    u = grid.check_field(u, "local utility")
    if kernel.n_y != grid.n_y:
        raise DimensionMismatchError(f"kernel has {kernel.n_y} types, grid has {grid.n_y}")
    if kernel.kind is KernelKind.IDENTITY:
        # delta weights select the column; skip the 1/dy * dy round trip
        return u.copy()
    return u @ kernel.weights


def kernel_properties(kernel: GraphonKernel, grid: Grid) -> Dict[str, float]:
    """Symmetry deviation and integrability bound of the discrete kernel"""
    if kernel.n_y != grid.n_y:
        raise DimensionMismatchError(f"kernel has {kernel.n_y} types, grid has {grid.n_y}")
    return {
        "symmetry_dev": float(np.max(np.abs(kernel.w - kernel.w.T))),
        "integrability_bound": float(np.max(kernel.column_mass)),
        "normalization": "per_column" if kernel.normalized else "none",
    }


def load_custom(path: Union[str, Path], grid: Grid, normalize: bool = True) -> GraphonKernel:
    """Load a kernel from ``l,j,w`` CSV rows (1-based indices, missing entries zero)"""
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as e:
        raise OutputError(f"Cannot read kernel CSV ({e})", str(path)) from e

    if list(frame.columns) != ["l", "j", "w"]:
        raise InvalidParameterError(f"kernel CSV header must be l,j,w, got {list(frame.columns)}")

    l_idx = frame["l"].to_numpy(dtype=int) - 1
    j_idx = frame["j"].to_numpy(dtype=int) - 1
    values = frame["w"].to_numpy(dtype=float)
    if np.any((l_idx < 0) | (l_idx >= grid.n_y) | (j_idx < 0) | (j_idx >= grid.n_y)):
        raise DimensionMismatchError(f"kernel CSV indices exceed n_y = {grid.n_y}")
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise InvalidParameterError("kernel entries must be finite and nonnegative")

    w = np.zeros((grid.n_y, grid.n_y))
    w[l_idx, j_idx] = values
    if normalize:
        w = _normalize_columns(w, grid.dy)

    logger.info(f"Loaded custom kernel from {path}", entries=len(frame), normalized=normalize)
    kernel = GraphonKernel(kind=KernelKind.CUSTOM, w=w, dy=grid.dy, normalized=normalize)
    return _check_mass(kernel) if normalize else kernel


def export_kernel(kernel: GraphonKernel, path: Union[str, Path]) -> Path:
    """Write the kernel in the ``l,j,w`` CSV format (j outer, l inner)"""
    n = kernel.n_y
    j_idx, l_idx = np.meshgrid(np.arange(1, n + 1), np.arange(1, n + 1), indexing="ij")
    frame = pd.DataFrame({
        "l": l_idx.ravel(),
        "j": j_idx.ravel(),
        "w": kernel.w.T.ravel(),
    })
    path = Path(path)
    try:
        frame.to_csv(path, index=False)
    except OSError as e:
        raise OutputError(f"Cannot write kernel CSV ({e})", str(path)) from e
    return path
