"""Linear-theta-projected Euler schemes for dissipative SDEs with super-linear coefficients."""
from .linop import ShiftedSolver, SpectralOperator, apply, apply_shifted, solve_shifted
from .model import (ModelConstants, SemiLinearModel, builtin_allen_cahn, builtin_ginzburg_landau,
                    builtin_mean_reverting, check_assumptions, dissipativity_gap, make_model)
from .scheme import (SchemeParams, StepFailure, em_step, lifted_state, ltpe_step,
                     max_stable_stepsize, project, simulate)

__version__ = "0.1.0"

__all__ = [
    "ModelConstants", "SemiLinearModel", "SchemeParams", "ShiftedSolver", "SpectralOperator",
    "StepFailure", "apply", "apply_shifted", "builtin_allen_cahn", "builtin_ginzburg_landau",
    "builtin_mean_reverting", "check_assumptions", "dissipativity_gap", "em_step",
    "lifted_state", "ltpe_step", "make_model", "max_stable_stepsize", "project", "simulate",
    "solve_shifted",
]
