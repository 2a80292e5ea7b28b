"""Three-field (displacement, total pressure, pore pressure) Biot finite elements
on structured triangular meshes of the unit square, with block-diagonal
preconditioned MinRes and a direct step solver."""

from .biot import (
    BREZZI_PITKARANTA,
    P1P0_STAB,
    TAYLOR_HOOD,
    BiotState,
    assemble_operators,
    build_static_system,
    energy_check,
    error_norms,
    get_discretization,
    infsup_estimate,
    manufactured_problem,
    run_manufactured,
)
from .forms import ModelParams
from .mesh import unit_square_mesh

__all__ = [
    "BREZZI_PITKARANTA",
    "P1P0_STAB",
    "TAYLOR_HOOD",
    "BiotState",
    "ModelParams",
    "assemble_operators",
    "build_static_system",
    "energy_check",
    "error_norms",
    "get_discretization",
    "infsup_estimate",
    "manufactured_problem",
    "run_manufactured",
    "unit_square_mesh",
]
