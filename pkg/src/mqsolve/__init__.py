"""Transient magneto-quasistatic field solver on structured hex grids.

The conducting/nonconducting partition of the edge unknowns turns the
spatially discretized problem into an ODE for the conducting block whose
right-hand side needs two inner conjugate-gradient solves with the singular
nonconducting curl-curl matrix per explicit step. Subspace recycling
(previous solution, cached-subspace extrapolation, proper orthogonal
decomposition) supplies the inner start vectors; an implicit Euler/Newton
integrator over the monolithic system serves as the reference.
"""

from .implicit import (NewtonConfig, NewtonFailureError, NewtonStepReport,
                       implicit_euler_step, run_implicit)
from .krylov import (Ic0Breakdown, IncompleteCholesky, IndefiniteOperatorError,
                     JacobiPreconditioner, PcgConfig, Preconditioner,
                     SolveReport, build_preconditioner, pcg_solve)
from .model import (AIR, COIL, CONDUCTOR, VACUUM_RELUCTIVITY, Excitation,
                    GridSpec, Material, Model, ModelError, air_material,
                    assemble, builtin_model, default_steel, export_model,
                    gradient_incidence, probe_b, reluctivity)
from .schur import (FAMILIES, CflEstimate, PartitionedSystem,
                    ScaledPatternSource, SchurOperator, StepFailureError,
                    TransientResult, estimate_cfl, explicit_euler_step,
                    exponential_ramp, recover_an, run_explicit)
from .sparse import (CsrMatrix, as_vector, read_dense_vector,
                     read_matrix_market, spmv, spmv_transpose,
                     symmetric_check, write_dense_vector, write_matrix_market)
from .startvec import (CspeStrategy, PodStrategy, PreviousSolutionStrategy,
                       RhsFamily, SnapshotBuffer, StartVectorStrategy,
                       SubspaceCache, cspe_update, make_strategy,
                       mgs_orthonormalize, pod_start_vector, spe_start_vector)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # sparse
    "CsrMatrix", "as_vector", "spmv", "spmv_transpose", "symmetric_check",
    "read_matrix_market", "write_matrix_market", "read_dense_vector",
    "write_dense_vector",
    # krylov
    "Preconditioner", "PcgConfig", "SolveReport", "JacobiPreconditioner",
    "IncompleteCholesky", "Ic0Breakdown", "IndefiniteOperatorError",
    "build_preconditioner", "pcg_solve",
    # start vectors
    "RhsFamily", "mgs_orthonormalize", "SubspaceCache", "spe_start_vector",
    "cspe_update", "SnapshotBuffer", "pod_start_vector",
    "StartVectorStrategy", "PreviousSolutionStrategy", "CspeStrategy",
    "PodStrategy", "make_strategy",
    # partitioned system and explicit integrator
    "FAMILIES", "StepFailureError", "exponential_ramp", "ScaledPatternSource",
    "PartitionedSystem", "SchurOperator", "CflEstimate", "estimate_cfl",
    "explicit_euler_step", "recover_an", "TransientResult", "run_explicit",
    # implicit reference
    "NewtonConfig", "NewtonStepReport", "NewtonFailureError",
    "implicit_euler_step", "run_implicit",
    # model generation
    "AIR", "CONDUCTOR", "COIL", "VACUUM_RELUCTIVITY", "Material", "GridSpec",
    "Excitation", "Model", "ModelError", "reluctivity", "assemble",
    "builtin_model", "default_steel", "air_material", "gradient_incidence",
    "probe_b", "export_model",
]
