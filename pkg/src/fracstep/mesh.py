"""Temporal graded meshes and the uniform spatial grid.

The temporal mesh concentrates points near t = 0 with a power-law grading
t_n = T (n/N)^r, which compensates the weak initial-time singularity of
subdiffusion solutions.  The spatial grid is a plain uniform rectangle with
homogeneous Dirichlet boundary; only interior nodes are stored.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

# Step-ratio thresholds under which the convolution-weight properties are
# guaranteed (see kernel.audit_properties).
RATIO_LOWER_BOUND = 0.618
RATIO_UPPER_BOUND = 7.0 / 4.0

# Relative slack absorbing roundoff in ratio comparisons (uniform meshes sit
# exactly on the thresholds).
_RATIO_RTOL = 1e-12


@dataclass(frozen=True)
class TemporalMesh:
    """Strictly increasing time points t_0 = 0 < t_1 < ... < t_N = T.

    ``steps[j]`` is tau_{j+1} = t_{j+1} - t_j and ``ratios[j]`` is
    rho_{j+1} = tau_{j+2}/tau_{j+1}; both use zero-based storage for the
    one-based quantities.  ``r`` is the grading exponent when the mesh was
    built by :func:`build_graded_mesh`, otherwise None.
    """

    T: float
    N: int
    points: np.ndarray
    steps: np.ndarray
    ratios: np.ndarray
    r: float | None = None

    @classmethod
    def from_points(cls, points, r: float | None = None) -> "TemporalMesh":
        points = np.asarray(points, dtype=float)
        if points.ndim != 1 or points.size < 2:
            raise ValueError("mesh needs at least two time points")
        if points[0] != 0.0:
            raise ValueError(f"mesh must start at t=0, got t_0={points[0]}")
        steps = np.diff(points)
        if np.any(steps <= 0.0):
            raise ValueError("time points must be strictly increasing")
        ratios = steps[1:] / steps[:-1]
        for arr in (points, steps, ratios):
            arr.setflags(write=False)
        return cls(T=float(points[-1]), N=points.size - 1,
                   points=points, steps=steps, ratios=ratios, r=r)

    @property
    def tau_max(self) -> float:
        return float(self.steps.max())

    def tau(self, n: int) -> float:
        """Step tau_n = t_n - t_{n-1}, 1 <= n <= N."""
        if not 1 <= n <= self.N:
            raise IndexError(f"step index {n} outside 1..{self.N}")
        return float(self.steps[n - 1])


def build_graded_mesh(T: float, N: int, r: float) -> TemporalMesh:
    """Standard graded mesh t_n = T (n/N)^r.

    Points come from the power formula directly (not via exp/log), so a
    given (T, N, r) reproduces bit-identically across platforms.
    """
    if N < 1:
        raise ValueError(f"need at least one time step, got N={N}")
    if r < 1.0:
        raise ValueError(f"grading exponent must satisfy r >= 1, got r={r}")
    if not T > 0.0:
        raise ValueError(f"final time must be positive, got T={T}")
    n = np.arange(N + 1, dtype=float)
    points = T * (n / N) ** float(r)
    return TemporalMesh.from_points(points, r=float(r))


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform rectangular grid on (0, L1) x (0, L2) with M1 x M2 cells.

    Interior nodes are (x_i, y_j) = (i h1, j h2) for i = 1..M1-1,
    j = 1..M2-1; the boundary carries identically zero values and is never
    stored.
    """

    L1: float
    L2: float
    M1: int
    M2: int
    h1: float
    h2: float
    x: np.ndarray  # interior x coordinates, length M1-1
    y: np.ndarray  # interior y coordinates, length M2-1

    @property
    def interior_shape(self) -> tuple[int, int]:
        return (self.M1 - 1, self.M2 - 1)

    @property
    def n_interior(self) -> int:
        return (self.M1 - 1) * (self.M2 - 1)

    def interior_mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays X, Y of shape (M1-1, M2-1), x varying on axis 0."""
        return np.meshgrid(self.x, self.y, indexing="ij")


def build_spatial_grid(L1: float, L2: float, M1: int, M2: int) -> SpatialGrid:
    if M1 < 2 or M2 < 2:
        raise ValueError(f"need at least 2 cells per direction, got M1={M1}, M2={M2}")
    if L1 <= 0.0 or L2 <= 0.0:
        raise ValueError(f"domain lengths must be positive, got L1={L1}, L2={L2}")
    h1 = L1 / M1
    h2 = L2 / M2
    x = np.arange(1, M1) * h1
    y = np.arange(1, M2) * h2
    x.setflags(write=False)
    y.setflags(write=False)
    return SpatialGrid(L1=float(L1), L2=float(L2), M1=int(M1), M2=int(M2),
                       h1=h1, h2=h2, x=x, y=y)


@dataclass(frozen=True)
class MeshReport:
    """Deterministic step-ratio audit of a temporal mesh.

    ``monotone`` checks rho_{j-1} >= rho_j for j >= 2, ``lower_ok`` checks
    rho_j >= 0.618 on the same range, and ``upper_ok`` checks
    max_j tau_j/tau_{j+1} <= 7/4.  All comparisons carry a small relative
    slack so meshes sitting exactly on a threshold (e.g. uniform) pass.
    """

    sigma: float
    rho_min: float
    rho_max: float
    monotone: bool
    lower_ok: bool
    upper_ratio_max: float
    upper_ok: bool

    @property
    def passed(self) -> bool:
        return self.monotone and self.lower_ok and self.upper_ok


def validate_mesh(mesh: TemporalMesh, sigma: float) -> MeshReport:
    """Report-only check of the ratio hypotheses behind the weight properties."""
    rho = mesh.ratios
    if rho.size == 0:  # single-step mesh: nothing to compare
        return MeshReport(sigma=float(sigma), rho_min=np.nan, rho_max=np.nan,
                          monotone=True, lower_ok=True,
                          upper_ratio_max=np.nan, upper_ok=True)
    slack = _RATIO_RTOL
    # rho[j-1] is rho_j; the hypotheses constrain j = 2..N-1.
    monotone = bool(np.all(rho[1:] <= rho[:-1] * (1.0 + slack)))
    lower_ok = bool(np.all(rho[1:] >= RATIO_LOWER_BOUND * (1.0 - slack)))
    upper = float((1.0 / rho).max())
    upper_ok = upper <= RATIO_UPPER_BOUND * (1.0 + slack)
    return MeshReport(sigma=float(sigma),
                      rho_min=float(rho.min()), rho_max=float(rho.max()),
                      monotone=monotone, lower_ok=lower_ok,
                      upper_ratio_max=upper, upper_ok=upper_ok)


def mesh_to_csv(mesh: TemporalMesh, path) -> None:
    """Dump the mesh as rows (n, t_n, tau_n, rho_n); blank where undefined."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "t_n", "tau_n", "rho_n"])
        for n in range(mesh.N + 1):
            tau = f"{mesh.steps[n - 1]:.17g}" if n >= 1 else ""
            rho = f"{mesh.ratios[n - 1]:.17g}" if 1 <= n <= mesh.N - 1 else ""
            writer.writerow([n, f"{mesh.points[n]:.17g}", tau, rho])
