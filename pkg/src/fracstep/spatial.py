"""Five-point diffusion stencil and discrete norms on the interior grid.

Grid functions live on interior nodes only; the homogeneous Dirichlet
boundary is an implicit zero layer, never allocated.  The operator applied
everywhere is L_h v = -nu * Delta_h v with the standard second differences
per axis, available both matrix-free and as an assembled sparse matrix
(the two agree to roundoff).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import SpatialGrid


@dataclass(frozen=True)
class GridFunction2D:
    """Interior nodal values, row-major: values[i-1, j-1] = v(x_i, y_j)."""

    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.interior_shape:
            raise ValueError(
                f"values shape {values.shape} does not match interior "
                f"{self.grid.interior_shape}")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_callable(cls, grid: SpatialGrid, f) -> "GridFunction2D":
        X, Y = grid.interior_mesh()
        return cls(grid, np.asarray(f(X, Y), dtype=float))

    @classmethod
    def from_flat(cls, grid: SpatialGrid, vec) -> "GridFunction2D":
        return cls(grid, np.asarray(vec, dtype=float).reshape(grid.interior_shape))

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


def apply_laplacian(v: GridFunction2D, nu: float) -> GridFunction2D:
    """Matrix-free L_h v = -nu * Delta_h v with zero ghost boundary."""
    u = v.values
    grid = v.grid
    out = 2.0 * (1.0 / grid.h1 ** 2 + 1.0 / grid.h2 ** 2) * u
    out[1:, :] -= u[:-1, :] / grid.h1 ** 2
    out[:-1, :] -= u[1:, :] / grid.h1 ** 2
    out[:, 1:] -= u[:, :-1] / grid.h2 ** 2
    out[:, :-1] -= u[:, 1:] / grid.h2 ** 2
    return GridFunction2D(grid, nu * out)


def laplacian_matrix(grid: SpatialGrid, nu: float) -> sp.csr_matrix:
    """Assembled L_h on flattened interior values (row-major), symmetric
    positive definite."""
    m1, m2 = grid.interior_shape
    k1 = sp.diags([-np.ones(m1 - 1), 2.0 * np.ones(m1), -np.ones(m1 - 1)], [-1, 0, 1])
    k2 = sp.diags([-np.ones(m2 - 1), 2.0 * np.ones(m2), -np.ones(m2 - 1)], [-1, 0, 1])
    op = (nu / grid.h1 ** 2) * sp.kron(k1, sp.identity(m2)) \
        + (nu / grid.h2 ** 2) * sp.kron(sp.identity(m1), k2)
    return op.tocsr()


def l2_norm(v: GridFunction2D) -> float:
    """Discrete L2 norm sqrt(h1 h2 sum v^2)."""
    return float(np.sqrt(v.grid.h1 * v.grid.h2 * np.sum(v.values ** 2)))


def max_norm(v: GridFunction2D) -> float:
    return float(np.abs(v.values).max())


def seminorm2(v: GridFunction2D, nu: float) -> float:
    """|v|_2 = ||L_h v|| / nu."""
    return l2_norm(apply_laplacian(v, nu)) / nu


def inner(u: GridFunction2D, v: GridFunction2D) -> float:
    """Discrete inner product h1 h2 sum u v."""
    return float(u.grid.h1 * u.grid.h2 * np.sum(u.values * v.values))


def grid_function_to_csv(v: GridFunction2D, path) -> None:
    """Dump as rows (i, j, x, y, value) over interior nodes."""
    grid = v.grid
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "x", "y", "value"])
        for i in range(1, grid.M1):
            for j in range(1, grid.M2):
                writer.writerow([i, j, f"{grid.x[i - 1]:.17g}", f"{grid.y[j - 1]:.17g}",
                                 f"{v.values[i - 1, j - 1]:.17g}"])
