"""Preconditioned primal-dual splitting with operator-norm-based variable-wise preconditioners."""

from .errors import (
    CapacityError,
    DegenerateError,
    DivergenceError,
    DomainError,
    NumericError,
    OracleFailure,
    OVDPError,
    StructuralError,
)
from .linops import GraphSpec, LinOp, OpGrid, VarShape
from .precond import (
    PreconditionerPair,
    block_norm_bound,
    design_asp,
    design_ovdp,
    design_pdp,
    design_sp,
    verify_convergence_condition,
)
from .solver import ConvergenceLog, IterateState, ProblemSpec, ppds_step, pseudo_oracle, solve

__version__ = "0.1.0"
