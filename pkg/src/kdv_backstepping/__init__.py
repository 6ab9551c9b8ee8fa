"""Output-feedback backstepping stabilization of the Korteweg-de Vries equation.

Gain kernels (:mod:`.kernels`), Volterra transformations (:mod:`.transforms`),
an implicit KdV solver (:mod:`.dynamics`), closed-loop experiments
(:mod:`.closed_loop`), diagnostics (:mod:`.diagnostics`) and a CLI
(:mod:`.cli`).
"""
from ._accel import BACKEND
from .closed_loop import (InitialCondition, Mode, ScenarioConfig, Trajectory, control_law,
                          observer_error, replay_controls, run_scenario)
from .diagnostics import (NormKind, annotate, fit_decay_rate, lyapunov_V, lyapunov_W, norm,
                          norm_inequality_check, summarize, target_residual)
from .dynamics import SimState, StepParams, measure_uxx1, spatial_operator, step
from .errors import (ConfigError, ConvergenceError, InvalidArgumentError, KdVBackstepError,
                     StepFailure)
from .grid import Field, Grid, TriGrid, diff, integrate, make_grid, make_trigrid
from .kernels import (Kernel, KernelKind, observer_gain_p1, pde_residual, reciprocity_residual,
                      solve_kernel, solve_kernel_set, trace_residuals)
from .transforms import (F_functional, G_functional, derivative_functional_apply,
                         round_trip_error, volterra_apply, volterra_op)

__version__ = "0.1.0"
