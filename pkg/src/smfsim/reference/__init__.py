"""Independent reference solvers and statistical checks.

These validate the stochastic engine from the outside: a closed-form
pure-dephasing solution, a deterministic TCL2 master equation, a brute-force
few-mode exact propagator with SMF / plain stochastic counterparts, and
moment-level checks of the unraveling identities.
"""

from .checks import (
    LambdaGrowthReport,
    MomentCheckReport,
    OneStepMeanReport,
    lambda_stat_growth_check,
    one_step_mean_check,
    single_mode_moment_check,
)
from .dephasing import pure_dephasing_reference
from .tcl2 import Tcl2Result, tcl2_run
from .tiny_bath import (
    BathMode,
    TinyBathSpec,
    tiny_bath_exact,
    tiny_bath_smf,
)

__all__ = [
    "BathMode",
    "LambdaGrowthReport",
    "MomentCheckReport",
    "OneStepMeanReport",
    "Tcl2Result",
    "TinyBathSpec",
    "lambda_stat_growth_check",
    "one_step_mean_check",
    "pure_dephasing_reference",
    "single_mode_moment_check",
    "tcl2_run",
    "tiny_bath_exact",
    "tiny_bath_smf",
]
