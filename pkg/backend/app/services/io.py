"""Result files. Grid CSVs list rows with j outer and i inner; floats use the shortest round-trip repr."""
from pathlib import Path
from typing import Dict, Iterable, Sequence, Union

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel

from app.core.exceptions import DimensionMismatchError, OutputError
from app.models.grid import Grid
from app.models.scenario import FisheryParams, cost

logger = structlog.get_logger()

PathLike = Union[str, Path]


def ensure_dir(path: PathLike) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OutputError(f"Cannot create output directory ({e})", str(path)) from e
    return path


def _write_frame(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    try:
        frame.to_csv(path, index=False)
    except OSError as e:
        raise OutputError(f"Cannot write CSV ({e})", str(path)) from e
    logger.info(f"Wrote {path}", rows=len(frame))
    return path


def _read_frame(path: PathLike, columns: Sequence[str]) -> pd.DataFrame:
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as e:
        raise OutputError(f"Cannot read CSV ({e})", str(path)) from e
    if list(frame.columns) != list(columns):
        raise OutputError(f"Unexpected header {list(frame.columns)}, wanted {list(columns)}", str(path))
    return frame


def grid_frame(values: np.ndarray, grid: Grid, name: str) -> pd.DataFrame:
    """Flatten an (n_x, n_y) field into x, y, name columns"""
    values = grid.check_field(values, name)
    return pd.DataFrame({
        "x": np.tile(grid.x_centers, grid.n_y),
        "y": np.repeat(grid.y_centers, grid.n_x),
        name: values.T.ravel(),
    })


def write_field(values: np.ndarray, grid: Grid, path: PathLike, name: str) -> Path:
    return _write_frame(grid_frame(values, grid, name), path)


def read_field(path: PathLike, grid: Grid, name: str) -> np.ndarray:
    """Inverse of write_field"""
    frame = _read_frame(path, ["x", "y", name])
    if len(frame) != grid.n_x * grid.n_y:
        raise DimensionMismatchError(f"{path} has {len(frame)} rows, grid needs {grid.n_x * grid.n_y}")
    grid.check_coordinates(frame["x"].to_numpy(), frame["y"].to_numpy(), str(path))
    return frame[name].to_numpy(dtype=float).reshape(grid.n_y, grid.n_x).T


def write_phi(phi: np.ndarray, grid: Grid, path: PathLike) -> Path:
    return write_field(phi, grid, path, "phi")


def write_measure(p: np.ndarray, grid: Grid, path: PathLike) -> Path:
    return write_field(p, grid, path, "p")


def write_alpha(y: np.ndarray, alpha: np.ndarray, alpha_nash: np.ndarray, path: PathLike) -> Path:
    frame = pd.DataFrame({"y": np.asarray(y), "alpha": np.asarray(alpha), "alpha_nash": np.asarray(alpha_nash)})
    return _write_frame(frame, path)


def read_alpha(path: PathLike) -> pd.DataFrame:
    return _read_frame(path, ["y", "alpha", "alpha_nash"])


def write_trajectory(times: Iterable[float], alphas: Iterable[np.ndarray], grid: Grid, path: PathLike) -> Path:
    """Classical logit snapshots as t, y, alpha rows (t outer, y inner)"""
    times = list(times)
    alphas = [np.asarray(a) for a in alphas]
    frame = pd.DataFrame({
        "t": np.repeat(times, grid.n_y),
        "y": np.tile(grid.y_centers, len(times)),
        "alpha": np.concatenate(alphas) if alphas else np.array([]),
    })
    return _write_frame(frame, path)


def write_cost(grid: Grid, params: FisheryParams, path: PathLike) -> Path:
    frame = pd.DataFrame({"y": grid.y_centers, "cost": cost(grid.y_centers, params)})
    return _write_frame(frame, path)


def write_mc(
    histograms: Dict[int, np.ndarray],
    expected: Dict[int, np.ndarray],
    grid: Grid,
    path: PathLike,
) -> Path:
    """Monte Carlo histograms next to their expected densities, one block per simulated column"""
    blocks = []
    for j, hist in histograms.items():
        blocks.append(pd.DataFrame({
            "x": grid.x_centers,
            "y": np.full(grid.n_x, grid.y_centers[j]),
            "p_mc": hist,
            "p_expected": expected[j],
        }))
    return _write_frame(pd.concat(blocks, ignore_index=True), path)


def write_json(model: BaseModel, path: PathLike) -> Path:
    path = Path(path)
    try:
        path.write_text(model.model_dump_json(indent=2))
    except OSError as e:
        raise OutputError(f"Cannot write report ({e})", str(path)) from e
    logger.info(f"Wrote {path}")
    return path


def write_table(rows: Sequence[BaseModel], path: PathLike) -> Path:
    """One CSV row per pydantic model"""
    frame = pd.DataFrame([row.model_dump(mode="json") for row in rows])
    return _write_frame(frame, path)


def read_table(path: PathLike) -> pd.DataFrame:
    path = Path(path)
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as e:
        raise OutputError(f"Cannot read CSV ({e})", str(path)) from e
