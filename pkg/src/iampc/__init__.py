"""Indirect-adaptive model predictive control for polytopic uncertain linear systems."""

from .controller import ControllerState, control_step, new_controller, value_of
from .estimator import (
    EstimatorConfig,
    EstimatorState,
    estimator_step,
    ls_estimate,
    matrix_error,
    new_estimator,
    project_simplex,
)
from .invariant_sets import (
    SetSuite,
    backward_step,
    build_cxu,
    build_set_suite,
    max_rci,
    mcas,
    min_horizon,
)
from .lyapunov_design import (
    AssumptionViolation,
    DesignResult,
    kappa,
    solve_design,
    terminal_P,
    verify_decrease,
)
from .model import EXAMPLE_GAIN, VertexModel, example_model, scalar_model
from .mpc_core import (
    CondensedQP,
    PredictionSequence,
    QPSolution,
    condense,
    predict_matrices,
    solve_qp,
    value_function,
)
from .polytope import Polytope, box
from .simulator import (
    ScenarioConfig,
    Trace,
    VerificationReport,
    run_scenario,
    sweep_filter_gain,
    verify_trace,
)

__version__ = "0.1.0"
