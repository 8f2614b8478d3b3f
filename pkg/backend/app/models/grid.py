"""Uniform midpoint discretization of the action x type square [0,1]^2.

Actions x live on the first axis (index i), types y on the second (index j);
every field in the kit is an ``(n_x, n_y)`` array laid out this way.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from app.core.exceptions import DimensionMismatchError, GridSizeError


@dataclass(frozen=True)
class Grid:
    """Cell-centred grid with midpoint quadrature weights"""

    n_x: int
    n_y: int
    dx: float = field(init=False)
    dy: float = field(init=False)
    x_centers: np.ndarray = field(init=False, repr=False, compare=False)
    y_centers: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_x < 2:
            raise GridSizeError(f"n_x must be >= 2, got {self.n_x}")
        if self.n_y < 1:
            raise GridSizeError(f"n_y must be >= 1, got {self.n_y}")

        dx = 1.0 / self.n_x
        dy = 1.0 / self.n_y
        x_centers = (np.arange(1, self.n_x + 1) - 0.5) * dx
        y_centers = (np.arange(1, self.n_y + 1) - 0.5) * dy
        x_centers.setflags(write=False)
        y_centers.setflags(write=False)

        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "dy", dy)
        object.__setattr__(self, "x_centers", x_centers)
        object.__setattr__(self, "y_centers", y_centers)

    @property
    def shape(self) -> tuple:
        return (self.n_x, self.n_y)

    def check_field(self, values: np.ndarray, name: str = "field") -> np.ndarray:
        """Return values as a float array, rejecting shapes other than (n_x, n_y)"""
        arr = np.asarray(values, dtype=float)
        if arr.shape != self.shape:
            raise DimensionMismatchError(
                f"{name} has shape {arr.shape}, grid expects {self.shape}"
            )
        return arr

    def check_coordinates(self, x, y, name: str = "field") -> None:
        """Reject flattened rows whose (x, y) are not the cell centres in y-outer, x-inner order"""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape != (self.n_x * self.n_y,) or y.shape != x.shape:
            raise DimensionMismatchError(f"{name} has {x.size} rows, grid needs {self.n_x * self.n_y}")
        # quarter-cell tolerance
        x_bad = np.abs(x - np.tile(self.x_centers, self.n_y)) > 0.25 * self.dx
        y_bad = np.abs(y - np.repeat(self.y_centers, self.n_x)) > 0.25 * self.dy
        if np.any(x_bad | y_bad):
            row = int(np.argmax(x_bad | y_bad))
            raise DimensionMismatchError(
                f"{name} row {row} has (x, y) = ({x[row]:g}, {y[row]:g}), expected cell centres in y-outer, x-inner order"
            )


def make_grid(n_x: int, n_y: int) -> Grid:
    """Build a grid; rejects n_x < 2 or n_y < 1"""
    return Grid(int(n_x), int(n_y))


def quad_x(values, grid: Grid, compensated: bool = False) -> float:
    """Midpoint rule over actions: sum_i values_i * dx in ascending index order.

    ``compensated=True`` switches to an exactly rounded sum; it is meant for
    diagnostics only since it breaks bitwise agreement with the solver sums.
    """
    arr = np.asarray(values, dtype=float)
    if arr.shape != (grid.n_x,):
        raise DimensionMismatchError(
            f"quad_x expects {grid.n_x} values, got shape {arr.shape}"
        )
    terms = arr * grid.dx
    if compensated:
        return math.fsum(terms)
    # cumsum accumulates strictly left to right (np.sum would go pairwise)
    return float(np.cumsum(terms)[-1])


def quad_columns(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Per-type midpoint integral over actions; reduction runs down axis 0 in row order"""
    arr = grid.check_field(values)
    return np.add.reduce(arr * grid.dx, axis=0)
