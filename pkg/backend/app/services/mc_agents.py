"""Monte Carlo agents for the per-type unit-rate jump process.

An agent of type j starts in a cell drawn from mu0, waits unit-rate exponential
clocks and at every ring resamples its cell from p*. The law at an independent
Exp(delta) killing time is the discounted occupation measure; the law at a
fixed horizon t is the transient solution e^{-t} mu0 + (1 - e^{-t}) p*.

Random streams are keyed by (seed, column, block) with blocks of
MC_BLOCK_SIZE samples, so histograms do not depend on the worker count.
"""
from typing import Dict, List, Optional

import numpy as np
import structlog
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field

from app.core.config import settings
from app.core.exceptions import DimensionMismatchError, InvalidMeasureError, InvalidParameterError
from app.models.grid import Grid

logger = structlog.get_logger()


class McConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    samples: int = Field(100_000, ge=1, description="Samples per type column")
    seed: int = Field(0, ge=0, lt=2 ** 64, description="Master seed")
    columns: List[int] = Field(default_factory=lambda: [0], description="Type indices to simulate (0-based)")

    def check_columns(self, grid: Grid) -> None:
        bad = [j for j in self.columns if not 0 <= j < grid.n_y]
        if bad:
            raise InvalidParameterError(f"columns {bad} outside 0..{grid.n_y - 1}")


def _cell_cdf(density: np.ndarray, grid: Grid, name: str) -> np.ndarray:
    density = np.asarray(density, dtype=float)
    if density.shape != (grid.n_x,):
        raise DimensionMismatchError(f"{name} has shape {density.shape}, grid has {grid.n_x} actions")
    if not np.all(np.isfinite(density)) or np.any(density < 0):
        raise InvalidMeasureError(f"{name} must be finite and nonnegative")
    weights = density * grid.dx
    total = weights.sum()
    if not total > 0:
        raise InvalidMeasureError(f"{name} has zero mass")
    cdf = np.cumsum(weights / total)
    cdf[-1] = 1.0
    return cdf


def _draw_cells(rng: np.random.Generator, cdf: np.ndarray, size: int) -> np.ndarray:
    """Inverse-CDF draw of cell indices"""
    cells = np.searchsorted(cdf, rng.random(size), side="right")
    return np.minimum(cells, cdf.size - 1)


def _block_rngs(cfg: McConfig, column: int):
    block = settings.MC_BLOCK_SIZE
    for start in range(0, cfg.samples, block):
        size = min(block, cfg.samples - start)
        seq = np.random.SeedSequence([cfg.seed, column, start // block])
        yield np.random.default_rng(seq), size


def _histogram(cells: np.ndarray, samples: int, grid: Grid) -> np.ndarray:
    counts = np.bincount(cells, minlength=grid.n_x)
    return counts / (samples * grid.dx)


def _event_loop(rng: np.random.Generator, x0: np.ndarray, horizon: np.ndarray, pstar_cdf: np.ndarray) -> np.ndarray:
    """Run unit-rate resampling clocks until each sample's horizon; return the occupied cells"""
    cells = x0.copy()
    clock = np.zeros(cells.size)
    running = np.arange(cells.size)
    while running.size:
        clock[running] += rng.exponential(1.0, running.size)
        running = running[clock[running] < horizon[running]]
        cells[running] = _draw_cells(rng, pstar_cdf, running.size)
    return cells


def simulate_discounted(
    pstar_col: np.ndarray,
    mu0_col: np.ndarray,
    delta: float,
    cfg: McConfig,
    grid: Grid,
    column: int = 0,
) -> np.ndarray:
    """Empirical density of the cell occupied at an Exp(delta) killing time"""
    if not delta > 0:
        raise InvalidParameterError(f"delta must be positive, got {delta}")
    pstar_cdf = _cell_cdf(pstar_col, grid, "pstar column")
    mu0_cdf = _cell_cdf(mu0_col, grid, "mu0 column")

    cells = []
    for rng, size in _block_rngs(cfg, column):
        x0 = _draw_cells(rng, mu0_cdf, size)
        tau = rng.exponential(1.0 / delta, size)
        cells.append(_event_loop(rng, x0, tau, pstar_cdf))
    return _histogram(np.concatenate(cells), cfg.samples, grid)


def simulate_mu_t(
    pstar_col: np.ndarray,
    mu0_col: np.ndarray,
    t: float,
    cfg: McConfig,
    grid: Grid,
    column: int = 0,
) -> np.ndarray:
    """Empirical density of X_t for the resampling process started from mu0"""
    if not t >= 0:
        raise InvalidParameterError(f"horizon must be nonnegative, got {t}")
    pstar_cdf = _cell_cdf(pstar_col, grid, "pstar column")
    mu0_cdf = _cell_cdf(mu0_col, grid, "mu0 column")

    cells = []
    for rng, size in _block_rngs(cfg, column):
        x0 = _draw_cells(rng, mu0_cdf, size)
        cells.append(_event_loop(rng, x0, np.full(size, float(t)), pstar_cdf))
    return _histogram(np.concatenate(cells), cfg.samples, grid)


def _race(pstar_col, mu0_col, stay_prob: float, cfg: McConfig, grid: Grid, column: int) -> np.ndarray:
    pstar_cdf = _cell_cdf(pstar_col, grid, "pstar column")
    mu0_cdf = _cell_cdf(mu0_col, grid, "mu0 column")
    cells = []
    for rng, size in _block_rngs(cfg, column):
        stay = rng.random(size) < stay_prob
        block = _draw_cells(rng, pstar_cdf, size)
        block[stay] = _draw_cells(rng, mu0_cdf, int(stay.sum()))
        cells.append(block)
    return _histogram(np.concatenate(cells), cfg.samples, grid)


def race_discounted(pstar_col, mu0_col, delta: float, cfg: McConfig, grid: Grid, column: int = 0) -> np.ndarray:
    """Closed-form sampler: mu0 with probability delta/(1+delta), p* otherwise"""
    if not delta > 0:
        raise InvalidParameterError(f"delta must be positive, got {delta}")
    return _race(pstar_col, mu0_col, delta / (1.0 + delta), cfg, grid, column)


def race_mu_t(pstar_col, mu0_col, t: float, cfg: McConfig, grid: Grid, column: int = 0) -> np.ndarray:
    """Closed-form sampler: mu0 with probability e^{-t} (no ring before t), p* otherwise"""
    if not t >= 0:
        raise InvalidParameterError(f"horizon must be nonnegative, got {t}")
    return _race(pstar_col, mu0_col, float(np.exp(-t)), cfg, grid, column)


def expected_discounted(pstar_col, mu0_col, delta: float) -> np.ndarray:
    return delta / (delta + 1.0) * np.asarray(mu0_col) + 1.0 / (delta + 1.0) * np.asarray(pstar_col)


def expected_mu_t(pstar_col, mu0_col, t: float) -> np.ndarray:
    decay = np.exp(-t)
    return decay * np.asarray(mu0_col) + (1.0 - decay) * np.asarray(pstar_col)


def l1_error(empirical: np.ndarray, expected: np.ndarray, grid: Grid) -> float:
    """sum_i |empirical - expected| dx"""
    return float(np.sum(np.abs(np.asarray(empirical) - np.asarray(expected))) * grid.dx)


def simulate_columns(
    pstar: np.ndarray,
    mu0: np.ndarray,
    delta: np.ndarray,
    cfg: McConfig,
    grid: Grid,
    n_jobs: Optional[int] = None,
) -> Dict[int, np.ndarray]:
    """Discounted-occupation histograms for every configured column, in column order"""
    cfg.check_columns(grid)
    n_jobs = settings.N_JOBS if n_jobs is None else n_jobs
    histograms = Parallel(n_jobs=n_jobs)(
        delayed(simulate_discounted)(pstar[:, j], mu0[:, j], float(delta[j]), cfg, grid, column=j)
        for j in cfg.columns
    )
    result = dict(zip(cfg.columns, histograms))
    for j, hist in result.items():
        error = l1_error(hist, expected_discounted(pstar[:, j], mu0[:, j], float(delta[j])), grid)
        logger.info(f"MC column {j} done", samples=cfg.samples, l1_error=error)
    return result
