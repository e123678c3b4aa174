import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracstep.mesh import build_spatial_grid
from fracstep.spatial import (GridFunction2D, apply_laplacian, grid_function_to_csv,
                              inner, l2_norm, laplacian_matrix, max_norm, seminorm2)


def bump(X, Y):
    return X * (1.0 - X) * Y * (1.0 - Y)


def test_stencil_exact_on_biquadratic():
    # second differences are exact per axis on x(1-x)y(1-y)
    grid = build_spatial_grid(1.0, 1.0, 10, 10)
    nu = 0.7
    v = GridFunction2D.from_callable(grid, bump)
    X, Y = grid.interior_mesh()
    exact = -2.0 * (Y * (1.0 - Y) + X * (1.0 - X))
    got = apply_laplacian(v, nu)
    assert got.values == pytest.approx(-nu * exact, rel=1e-13)


def test_discrete_eigenfunction_identity():
    grid = build_spatial_grid(1.0, 1.0, 4, 4)
    h = 0.25
    v = GridFunction2D.from_callable(grid, lambda X, Y: np.sin(np.pi * X) * np.sin(np.pi * Y))
    lam = 2.0 * (4.0 / h ** 2) * np.sin(np.pi * h / 2.0) ** 2
    assert lam == pytest.approx(18.7452, abs=5e-5)
    got = apply_laplacian(v, 1.0)
    assert got.values == pytest.approx(lam * v.values, rel=1e-12)


def test_zero_in_zero_out():
    grid = build_spatial_grid(1.0, 1.0, 5, 7)
    v = GridFunction2D(grid, np.zeros(grid.interior_shape))
    assert np.all(apply_laplacian(v, 2.0).values == 0.0)


def test_l2_norm_of_ones():
    grid = build_spatial_grid(1.0, 1.0, 4, 4)
    v = GridFunction2D(grid, np.ones((3, 3)))
    assert l2_norm(v) == pytest.approx(0.75, rel=1e-15)


@given(st.integers(0, 2 ** 32 - 1),
       st.floats(-7.0, 7.0).filter(lambda x: x == 0.0 or abs(x) > 1e-6))
@settings(max_examples=25, deadline=None)
def test_norm_scaling_and_inverse_inequality(seed, c):
    rng = np.random.default_rng(seed)
    grid = build_spatial_grid(1.5, 1.0, 6, 9)
    v = GridFunction2D(grid, rng.standard_normal(grid.interior_shape))
    assert l2_norm(GridFunction2D(grid, c * v.values)) == pytest.approx(
        abs(c) * l2_norm(v), rel=1e-12, abs=0.0)
    assert max_norm(v) <= math.sqrt(1.0 / (grid.h1 * grid.h2)) * l2_norm(v) * (1 + 1e-12)


def test_seminorm_definition():
    grid = build_spatial_grid(1.0, 1.0, 8, 8)
    rng = np.random.default_rng(3)
    v = GridFunction2D(grid, rng.standard_normal(grid.interior_shape))
    nu = 0.3
    assert seminorm2(v, nu) == pytest.approx(l2_norm(apply_laplacian(v, nu)) / nu,
                                             rel=1e-14)


def test_operator_symmetric_positive():
    grid = build_spatial_grid(1.0, 2.0, 7, 5)
    rng = np.random.default_rng(11)
    nu = 0.4
    u = GridFunction2D(grid, rng.standard_normal(grid.interior_shape))
    v = GridFunction2D(grid, rng.standard_normal(grid.interior_shape))
    lu, lv = apply_laplacian(u, nu), apply_laplacian(v, nu)
    assert inner(lu, v) == pytest.approx(inner(u, lv), rel=1e-12)
    assert inner(apply_laplacian(u, nu), u) >= 0.0


def test_matrix_matches_matrix_free():
    grid = build_spatial_grid(1.3, 0.9, 9, 6)
    nu = 0.25
    A = laplacian_matrix(grid, nu)
    rng = np.random.default_rng(5)
    v = GridFunction2D(grid, rng.standard_normal(grid.interior_shape))
    assert A @ v.flat == pytest.approx(apply_laplacian(v, nu).flat, rel=1e-13)
    # symmetric positive definite assembly
    assert (A - A.T).nnz == 0
    assert np.all(np.linalg.eigvalsh(A.toarray()) > 0.0)


def test_second_order_consistency():
    nu = 1.0

    def u(X, Y):
        return np.sin(np.pi * X) * np.sin(2.0 * np.pi * Y)

    def lap_u(X, Y):
        return -(np.pi ** 2 + 4.0 * np.pi ** 2) * u(X, Y)

    errs = []
    for M in (8, 16, 32, 64):
        grid = build_spatial_grid(1.0, 1.0, M, M)
        X, Y = grid.interior_mesh()
        lh = apply_laplacian(GridFunction2D.from_callable(grid, u), nu).values
        errs.append(np.abs(lh - (-nu * lap_u(X, Y))).max())
    orders = [math.log2(e0 / e1) for e0, e1 in zip(errs, errs[1:])]
    assert min(orders) >= 1.9


def test_grid_function_validation_and_flat():
    grid = build_spatial_grid(1.0, 1.0, 4, 5)
    with pytest.raises(ValueError):
        GridFunction2D(grid, np.zeros((3, 3)))
    v = GridFunction2D.from_flat(grid, np.arange(12.0))
    assert v.values.shape == (3, 4)
    assert np.array_equal(v.flat, np.arange(12.0))


def test_grid_function_csv(tmp_path):
    grid = build_spatial_grid(1.0, 1.0, 3, 3)
    v = GridFunction2D(grid, np.arange(4.0).reshape(2, 2))
    path = tmp_path / "gf.csv"
    grid_function_to_csv(v, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "i,j,x,y,value"
    assert len(lines) == 5
