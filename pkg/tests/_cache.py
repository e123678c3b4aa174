"""Session-wide caches so expensive marches are shared across test modules.

Keys are the exact float parameters; every consumer spells r = 2/alpha the
same way, so lookups hit.  Only small derived artifacts are kept (error
series, final-time vectors, audit reports), never full trajectories.
"""

from functools import lru_cache

import numpy as np
from scipy.special import gamma as gamma_fn

from fracstep import analysis, problems
from fracstep.kernel import SchemeParams, audit_properties, weight_rows
from fracstep.mesh import build_graded_mesh
from fracstep.solver import march


@lru_cache(maxsize=None)
def ex1_cell(alpha: float, r: float, N: int, M: int = 25):
    """Benchmark-1 march: (ErrorSeries, final-time values)."""
    spec = problems.example1(alpha, N, r, M, M)
    sol = march(spec)
    return analysis.error_series(sol), sol.final.copy()


@lru_cache(maxsize=None)
def ex2_final(alpha: float, r: float, N: int, M: int = 25):
    """Benchmark-2 march: final-time values only."""
    spec = problems.example2(alpha, N, r, M, M)
    return march(spec).final.copy()


def ex2_two_mesh(alpha: float, r: float, N: int, M: int = 25) -> float:
    """Two-mesh final-time error reusing cached marches."""
    h = 1.0 / M
    diff = ex2_final(alpha, r, N, M) - ex2_final(alpha, r, 2 * N, M)
    return float(np.sqrt(h * h * np.sum(diff ** 2)))


@lru_cache(maxsize=None)
def audit_and_exactness(alpha: float, r: float, N: int, T: float = 1.0):
    """One weight-row sweep feeding both the property audit and the
    quadratic-exactness residual: (PropertyReport, max residual)."""
    mesh = build_graded_mesh(T, N, r)
    params = SchemeParams(alpha)
    rows = weight_rows(mesh, params)
    report = audit_properties(mesh, params, rows=rows)
    t_star = params.star_points(mesh)
    increments = np.diff(mesh.points ** 2)
    target = 2.0 * t_star ** (2.0 - alpha) / gamma_fn(3.0 - alpha)
    worst = max(abs(float(row.g @ increments[: row.n]) - target[row.n - 1])
                for row in rows)
    return report, worst
