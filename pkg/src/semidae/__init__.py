"""Index-1 semilinear DAEs: projector decomposition, integration and stability checks."""
from .pencil import (MatrixPencil, PencilDecomposition, NotIndexOne, SingularPencil, IllConditioned,
                     check_regularity, decompose_index1, verify_decomposition)
from .dae import (SemilinearDAE, ReducedState, NoConvergence, SingularJacobian, InconsistentInitialValue,
                  manifold_residual, solve_constraint, consistent_initialize, reduced_rhs)
from .kernels import DEFAULT_BACKEND

__version__ = "0.1.0"
