"""penflow: shared-matrix ensemble solver for 2D incompressible flow.

An ensemble of flow realizations is advanced implicitly with the
nonlinearity linearized around the ensemble mean, so every member shares
one coefficient matrix per step (factorized once, J solves). Pressure is
coupled through a penalty term, and the step size adapts by halving
whenever a fluctuation-gradient stability indicator is violated.
"""

__version__ = "0.1.0"

from penflow.assembly import OperatorSet, assemble_static, build_step_matrix
from penflow.fem import (DiscreteField, TaylorHoodSpace, build_space,
                         interpolate, triangle_quadrature)
from penflow.linalg import SingularMatrixError, factorize, solve
from penflow.mesh import (Mesh, MeshError, MeshParseError, build_mesh,
                          generate_unit_square, load_gmsh, mesh_quality,
                          parse_gmsh)
from penflow.sampling import PerturbationSpec, monte_carlo_draws
from penflow.stepper import (CflConfig, EnergyLedger, EnsembleState,
                             TimestepUnderflowError, ensemble_mean,
                             make_ensemble, run_adaptive, step)

__all__ = [
    "__version__",
    "OperatorSet", "assemble_static", "build_step_matrix",
    "DiscreteField", "TaylorHoodSpace", "build_space", "interpolate",
    "triangle_quadrature",
    "SingularMatrixError", "factorize", "solve",
    "Mesh", "MeshError", "MeshParseError", "build_mesh",
    "generate_unit_square", "load_gmsh", "mesh_quality", "parse_gmsh",
    "PerturbationSpec", "monte_carlo_draws",
    "CflConfig", "EnergyLedger", "EnsembleState", "TimestepUnderflowError",
    "ensemble_mean", "make_ensemble", "run_adaptive", "step",
]
