"""Mixed finite-element solver for quasi-static thermo-poroelasticity with convective heat transport."""

from .assembly import BlockSystem, Sources, SystemAssembler, assemble_system
from .mesh import TriMesh, build_structured
from .params import (
    ConstraintReport,
    ConstraintWarning,
    DerivedCoeffs,
    MaterialParams,
    check_constraints,
    compliance_apply,
    compliance_inner,
    derived_coeffs,
    passing_preset,
)
from .solver import (
    PicardLog,
    PicardNonConvergence,
    SimulationResult,
    SingularSystemError,
    SolverError,
    State,
    Stepper,
    run_simulation,
)

__version__ = "0.1.0"

__all__ = [
    "BlockSystem",
    "ConstraintReport",
    "ConstraintWarning",
    "DerivedCoeffs",
    "MaterialParams",
    "PicardLog",
    "PicardNonConvergence",
    "SimulationResult",
    "SingularSystemError",
    "SolverError",
    "Sources",
    "State",
    "Stepper",
    "SystemAssembler",
    "TriMesh",
    "assemble_system",
    "build_structured",
    "check_constraints",
    "compliance_apply",
    "compliance_inner",
    "derived_coeffs",
    "passing_preset",
    "run_simulation",
]
