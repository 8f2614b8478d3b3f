import numpy as np
import pandas as pd
import pytest

from app.core.exceptions import DimensionMismatchError, InvalidParameterError
from app.models.graphon import (
    KernelKind,
    build_gaussian,
    build_identity,
    build_uniform,
    convolve,
    export_kernel,
    kernel_properties,
    load_custom,
)
from app.models.grid import make_grid


def triple_loop(u, w, dy):
    n_x, n_y = u.shape
    out = np.zeros_like(u)
    for i in range(n_x):
        for j in range(n_y):
            total = 0.0
            for l in range(n_y):
                total += u[i, l] * w[l, j] * dy
            out[i, j] = total
    return out


def test_gaussian_wide_is_flat():
    grid = make_grid(4, 10)
    kernel = build_gaussian(1e6, grid)
    np.testing.assert_allclose(kernel.w, np.ones((10, 10)), atol=1e-9)


def test_gaussian_narrow_concentrates_on_diagonal():
    grid = make_grid(2, 200)
    kernel = build_gaussian(0.0001, grid)
    np.testing.assert_allclose(np.diag(kernel.w), 200.0, rtol=1e-9)
    off_diagonal = kernel.w - np.diag(np.diag(kernel.w))
    assert np.max(off_diagonal.sum(axis=0) * grid.dy) < 1e-6


@pytest.mark.parametrize("n_y", [1, 3, 8, 50])
def test_gaussian_unit_column_mass(n_y):
    grid = make_grid(2, n_y)
    kernel = build_gaussian(0.5, grid)
    np.testing.assert_allclose(kernel.column_mass, 1.0, atol=1e-12)
    assert np.all(kernel.w >= 0)
    assert kernel.kind is KernelKind.GAUSSIAN and kernel.theta == 0.5


@pytest.mark.parametrize("theta", [0.0, -1.0])
def test_gaussian_rejects_nonpositive_theta(theta, grid4):
    with pytest.raises(InvalidParameterError):
        build_gaussian(theta, grid4)


def test_gaussian_diagonal_non_increasing_in_theta():
    grid = make_grid(2, 16)
    thetas = [0.01, 0.05, 0.1, 0.25, 0.5, 1.0, 4.0]
    interior = slice(2, 14)
    diagonals = [np.diag(build_gaussian(theta, grid).w)[interior] for theta in thetas]
    for narrow, wide in zip(diagonals, diagonals[1:]):
        assert np.all(wide <= narrow + 1e-12)


def test_identity_kernel_entries(grid4):
    kernel = build_identity(grid4)
    np.testing.assert_array_equal(kernel.w, np.eye(4) / grid4.dy)


def test_identity_single_type():
    grid = make_grid(5, 1)
    u = np.arange(5.0).reshape(5, 1)
    np.testing.assert_array_equal(convolve(u, build_identity(grid), grid), u)


def test_identity_selects_column(grid4):
    u = np.tile(np.arange(1.0, 5.0), (4, 1))
    result = convolve(u, build_identity(grid4), grid4)
    np.testing.assert_array_equal(result, np.tile(np.arange(1.0, 5.0), (4, 1)))


def test_identity_random_bitwise(rng, grid4):
    u = rng.normal(size=(4, 4))
    np.testing.assert_array_equal(convolve(u, build_identity(grid4), grid4), u)


def test_convolve_constant(grid4):
    u = np.full((4, 4), 3.25)
    result = convolve(u, build_gaussian(0.3, grid4), grid4)
    np.testing.assert_allclose(result, 3.25, rtol=1e-14)


@pytest.mark.parametrize("n_x, n_y", [(2, 3), (8, 8), (5, 7)])
def test_convolve_matches_triple_loop(rng, n_x, n_y):
    grid = make_grid(n_x, n_y)
    kernel = build_gaussian(0.2, grid)
    u = rng.normal(size=(n_x, n_y))
    np.testing.assert_allclose(convolve(u, kernel, grid), triple_loop(u, kernel.w, grid.dy), rtol=1e-13, atol=1e-13)


def test_convolve_is_row_convex_combination(rng):
    grid = make_grid(6, 9)
    u = rng.normal(size=(6, 9))
    result = convolve(u, build_gaussian(0.15, grid), grid)
    assert np.all(result >= u.min(axis=1, keepdims=True) - 1e-14)
    assert np.all(result <= u.max(axis=1, keepdims=True) + 1e-14)


def test_convolve_dimension_mismatch(grid4):
    with pytest.raises(DimensionMismatchError):
        convolve(np.ones((4, 3)), build_identity(grid4), grid4)
    with pytest.raises(DimensionMismatchError):
        convolve(np.ones((4, 4)), build_identity(make_grid(4, 5)), grid4)


def test_kernel_properties_uniform(grid4):
    props = kernel_properties(build_uniform(grid4), grid4)
    assert props["symmetry_dev"] == 0.0
    assert props["integrability_bound"] == pytest.approx(1.0, abs=1e-15)


def test_kernel_properties_identity(grid4):
    assert kernel_properties(build_identity(grid4), grid4)["symmetry_dev"] == 0.0


def test_kernel_properties_gaussian_asymmetry():
    grid = make_grid(2, 8)
    props = kernel_properties(build_gaussian(0.5, grid), grid)
    assert props["symmetry_dev"] > 0.0
    assert props["normalization"] == "per_column"


def test_custom_kernel_export_reload(tmp_path):
    grid = make_grid(3, 5)
    kernel = build_gaussian(0.3, grid)
    path = export_kernel(kernel, tmp_path / "graphon.csv")
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["l", "j", "w"]
    assert frame["j"].is_monotonic_increasing
    reloaded = load_custom(path, grid, normalize=False)
    np.testing.assert_array_equal(reloaded.w, kernel.w)
    assert reloaded.kind is KernelKind.CUSTOM


def test_custom_kernel_missing_entries_are_zero(tmp_path):
    grid = make_grid(2, 2)
    path = tmp_path / "kernel.csv"
    pd.DataFrame({"l": [1, 2], "j": [1, 2], "w": [3.0, 5.0]}).to_csv(path, index=False)
    kernel = load_custom(path, grid)
    np.testing.assert_allclose(kernel.w, np.eye(2) / grid.dy)
    np.testing.assert_allclose(kernel.column_mass, 1.0, atol=1e-15)


def test_custom_kernel_rejects_negative(tmp_path):
    grid = make_grid(2, 2)
    path = tmp_path / "kernel.csv"
    pd.DataFrame({"l": [1, 2], "j": [1, 1], "w": [1.0, -1.0]}).to_csv(path, index=False)
    with pytest.raises(InvalidParameterError):
        load_custom(path, grid)


def test_custom_kernel_rejects_out_of_range_index(tmp_path):
    grid = make_grid(2, 2)
    path = tmp_path / "kernel.csv"
    pd.DataFrame({"l": [3], "j": [1], "w": [1.0]}).to_csv(path, index=False)
    with pytest.raises(DimensionMismatchError):
        load_custom(path, grid)
