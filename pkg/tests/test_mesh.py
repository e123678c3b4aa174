import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracstep.mesh import (TemporalMesh, build_graded_mesh, build_spatial_grid,
                           mesh_to_csv, validate_mesh)


def test_uniform_mesh_points_exact():
    mesh = build_graded_mesh(1.0, 4, 1.0)
    assert np.array_equal(mesh.points, [0.0, 0.25, 0.5, 0.75, 1.0])


def test_graded_mesh_points_exact_binary():
    mesh = build_graded_mesh(0.5, 4, 2.0)
    assert np.array_equal(mesh.points, [0.0, 0.03125, 0.125, 0.28125, 0.5])


def test_graded_ratio_formula():
    # tau_j = T (2j-1)/N^2 for r = 2, so rho_j = (2j+1)/(2j-1)
    mesh = build_graded_mesh(1.0, 8, 2.0)
    expected = np.array([(2 * j + 1) / (2 * j - 1) for j in range(1, 8)])
    assert mesh.ratios == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("bad", [dict(T=1.0, N=0, r=1.0),
                                 dict(T=1.0, N=4, r=0.5),
                                 dict(T=0.0, N=4, r=1.0),
                                 dict(T=-1.0, N=4, r=2.0)])
def test_build_rejects_invalid(bad):
    with pytest.raises(ValueError):
        build_graded_mesh(**bad)


def test_from_points_requires_increase():
    with pytest.raises(ValueError):
        TemporalMesh.from_points([0.0, 0.5, 0.5, 1.0])
    with pytest.raises(ValueError):
        TemporalMesh.from_points([0.1, 0.5, 1.0])


def test_validate_graded_passes():
    report = validate_mesh(build_graded_mesh(1.0, 8, 2.0), sigma=0.75)
    assert report.passed
    assert report.rho_min >= 1.0 - 1e-12  # graded meshes never shrink steps
    assert report.monotone and report.lower_ok and report.upper_ok


def test_validate_uniform_on_the_bounds():
    report = validate_mesh(build_graded_mesh(1.0, 6, 1.0), sigma=0.8)
    assert report.passed
    assert report.upper_ratio_max == pytest.approx(1.0, rel=1e-12)


def test_validate_flags_step_shrink():
    # tau_2 = 2 tau_3 puts tau_j/tau_{j+1} = 2 above the 7/4 cap
    mesh = TemporalMesh.from_points([0.0, 0.1, 0.3, 0.4, 0.6])
    report = validate_mesh(mesh, sigma=0.75)
    assert not report.upper_ok
    assert report.upper_ratio_max == pytest.approx(2.0, rel=1e-12)
    assert not report.passed


def test_spatial_grid_basic():
    grid = build_spatial_grid(1.0, 1.0, 4, 4)
    assert grid.h1 == grid.h2 == 0.25
    assert grid.n_interior == 9
    assert grid.x == pytest.approx([0.25, 0.5, 0.75])


def test_spatial_grid_paper_size():
    grid = build_spatial_grid(1.0, 1.0, 25, 25)
    assert grid.n_interior == 576
    assert grid.interior_shape == (24, 24)


def test_spatial_grid_rectangular():
    grid = build_spatial_grid(2.0, 1.0, 4, 2)
    assert grid.h1 == 0.5 and grid.h2 == 0.5
    assert grid.n_interior == 3


def test_spatial_grid_rejects_small():
    with pytest.raises(ValueError):
        build_spatial_grid(1.0, 1.0, 1, 4)
    with pytest.raises(ValueError):
        build_spatial_grid(1.0, 0.0, 4, 4)


@given(N=st.integers(2, 600), r=st.floats(1.0, 6.0), T=st.floats(0.1, 10.0))
@settings(max_examples=60, deadline=None)
def test_graded_mesh_invariants(N, r, T):
    mesh = build_graded_mesh(T, N, r)
    eps = np.finfo(float).eps
    # steps telescope back to T
    assert abs(math.fsum(mesh.steps) - T) <= 8.0 * eps * T
    # first step against the grading scale
    assert 0.5 <= mesh.steps[0] * N ** r / T <= 2.0
    # step ratios never increase for r >= 1
    assert np.all(mesh.ratios[1:] <= mesh.ratios[:-1] * (1.0 + 1e-12))
    assert validate_mesh(mesh, 0.75).passed


def test_mesh_csv_dump(tmp_path):
    mesh = build_graded_mesh(1.0, 8, 2.0)
    path = tmp_path / "mesh.csv"
    mesh_to_csv(mesh, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "n,t_n,tau_n,rho_n"
    assert len(lines) == mesh.N + 2
    # n = 0 row has no step/ratio, final row no ratio
    assert lines[1].split(",")[2] == ""
    assert lines[-1].split(",")[3] == ""


def test_mesh_is_immutable():
    mesh = build_graded_mesh(1.0, 4, 2.0)
    with pytest.raises(ValueError):
        mesh.points[0] = 1.0
