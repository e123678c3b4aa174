"""Second-order time stepping for 2D nonlinear subdiffusion on graded meshes.

The package discretizes the Caputo time derivative of order alpha in (0,1)
with the offset (L2-1sigma) stencil on graded meshes t_n = T (n/N)^r,
Newton-linearizes the reaction so each step costs one symmetric sparse
solve, and ships the experiment harness that verifies the scheme's
convergence orders, coefficient properties, and stability bound.
"""

from .mesh import (MeshReport, SpatialGrid, TemporalMesh, build_graded_mesh,
                   build_spatial_grid, mesh_to_csv, validate_mesh)
from .kernel import (AlikhanovWeights, PropertyReport, RecurrenceSpec,
                     RecurrenceResult, SchemeParams, a_coeff, b_coeff,
                     apply_discrete_derivative, assemble_weights,
                     audit_properties, solve_scalar_recurrence, weight_rows)
from .spatial import (GridFunction2D, apply_laplacian, l2_norm,
                      laplacian_matrix, max_norm, seminorm2)
from .solver import (ProblemSpec, Solution, StepSystem, assemble_step,
                     load_trajectory, march, march_linear, save_trajectory,
                     solve_step, spec_hash)
from .analysis import (ConvergenceReport, ErrorSeries, TruncationFit,
                       error_series, expected_global_order,
                       expected_local_order, fit_orders,
                       truncation_r1_oracle, truncation_r2_oracle,
                       truncation_r3_oracle, two_mesh_error)
from .problems import example1, example2

__version__ = "0.1.0"

__all__ = [
    "AlikhanovWeights", "ConvergenceReport", "ErrorSeries", "GridFunction2D",
    "MeshReport", "ProblemSpec", "PropertyReport", "RecurrenceResult",
    "RecurrenceSpec", "SchemeParams", "Solution", "SpatialGrid", "StepSystem",
    "TemporalMesh", "TruncationFit", "a_coeff", "apply_discrete_derivative",
    "apply_laplacian", "assemble_step", "assemble_weights", "audit_properties",
    "b_coeff", "build_graded_mesh", "build_spatial_grid", "error_series",
    "example1", "example2", "expected_global_order", "expected_local_order",
    "fit_orders", "l2_norm", "laplacian_matrix", "load_trajectory", "march",
    "march_linear", "max_norm", "mesh_to_csv", "save_trajectory", "seminorm2",
    "solve_scalar_recurrence", "solve_step", "spec_hash",
    "truncation_r1_oracle", "truncation_r2_oracle", "truncation_r3_oracle",
    "two_mesh_error", "validate_mesh", "weight_rows",
]
