"""Online adaptive MPC step with an N-step delayed parameter prediction.

The prediction buffer ``xi_{0|t} .. xi_{N|t}`` is shifted every step and the
newest estimate is appended at the end::

    xi_{k|t+1} = xi_{k+1|t}  (k < N),    xi_{N|t+1} = xi(t+1)

so each estimate is used as the terminal-stage parameter first and reaches
the current stage ``N`` steps later.  The shifted-sequence property is what
makes the shifted previous input sequence, extended by the terminal law, a
feasible candidate at the next step; that candidate is the warm start.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .invariant_sets import SetSuite, design_digest
from .lyapunov_design import DesignResult, kappa
from .model import VertexModel, check_simplex, uniform_simplex
from .mpc_core import (
    DEFAULT_TOL,
    InfeasibleQPError,
    PredictionSequence,
    QPSolution,
    condense,
    predicted_states,
    solve_qp,
)

__all__ = [
    "ArtifactMismatchError",
    "ControllerInfeasibleError",
    "ControllerState",
    "StepDiag",
    "new_controller",
    "control_step",
    "value_of",
    "warm_start_candidate",
]


class ArtifactMismatchError(ValueError):
    """Design, set suite and model do not belong together."""


class ControllerInfeasibleError(RuntimeError):
    """The online QP was infeasible.

    Robust feasibility is guaranteed from any state in ``C`` when the
    artifacts are consistent, so this signals an artifact or tolerance bug.
    """

    def __init__(self, message: str, state: "ControllerState", x, solution=None):
        super().__init__(message)
        self.state = state
        self.x = np.array(x, dtype=float)
        self.solution = solution


@dataclass(frozen=True)
class StepDiag:
    value: float
    status: str
    active_rows: tuple
    iterations: int
    solve_time: float
    x_margin: float  # slack of x(t) in X (negative: outside)
    x0_margin: float  # smallest slack of the rows on x_0 alone
    warm_started: bool
    kkt: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ControllerState:
    model: VertexModel
    design: DesignResult
    suite: SetSuite
    buffer: PredictionSequence
    last_solution: Optional[QPSolution] = None
    step_count: int = 0
    tol: float = DEFAULT_TOL

    @property
    def N(self) -> int:
        return self.suite.N

    def snapshot(self) -> dict:
        """Plain-data copy of the mutable part, for deterministic replay."""
        last = None
        if self.last_solution is not None:
            last = self.last_solution.U.tolist()
        return {
            "buffer": [xi.tolist() for xi in self.buffer],
            "step_count": self.step_count,
            "last_U": last,
        }

    def restore(self, snap: dict) -> "ControllerState":
        last = None
        if snap.get("last_U") is not None:
            U = np.array(snap["last_U"], dtype=float)
            m = self.model.m
            last = QPSolution("optimal", [U[k * m:(k + 1) * m] for k in range(self.N)],
                              np.nan, [], 0, U)
        return dataclasses.replace(
            self,
            buffer=PredictionSequence(snap["buffer"], self.model.n_vertices),
            step_count=int(snap["step_count"]),
            last_solution=last,
        )


def new_controller(design: DesignResult, suite: SetSuite, model: VertexModel,
                   xi0=None, tol: float = DEFAULT_TOL) -> ControllerState:
    """Controller with a buffer of ``N + 1`` copies of ``xi0`` (uniform by default)."""
    digest = model.digest()
    if design.model_digest and design.model_digest != digest:
        raise ArtifactMismatchError("design was computed for a different model")
    if suite.model_digest and suite.model_digest != digest:
        raise ArtifactMismatchError("set suite was computed for a different model")
    if suite.design_digest and suite.design_digest != design_digest(design):
        raise ArtifactMismatchError("set suite was computed for a different design")
    if design.n_vertices != model.n_vertices:
        raise ArtifactMismatchError("design and model have different vertex counts")
    if suite.N < 1:
        raise ValueError("the horizon must be at least 1")
    ell = model.n_vertices
    xi = uniform_simplex(ell) if xi0 is None else check_simplex(xi0, ell)
    buf = PredictionSequence.constant(xi, suite.N)
    return ControllerState(model, design, suite, buf, None, 0, tol)


def warm_start_candidate(state: ControllerState, x) -> Optional[np.ndarray]:
    """Shifted previous inputs plus ``kappa(xi_{N-1}) x_{N-1}`` under the current buffer."""
    if state.last_solution is None:
        return None
    m, N = state.model.m, state.N
    U_prev = np.asarray(state.last_solution.U, dtype=float).reshape(N, m)
    head = U_prev[1:]
    if N > 1:
        xs = predicted_states(state.model, PredictionSequence(state.buffer[:N]), x, head)
        x_last = xs[-1]
    else:
        x_last = np.asarray(x, dtype=float)
    u_last = kappa(state.design, state.buffer[N - 1]) @ x_last
    return np.concatenate([head.ravel(), u_last])


def control_step(state: ControllerState, x, xi_new) -> tuple:
    """Shift the buffer, solve the QP at ``x``, return ``(state, u, diag)``."""
    x = np.asarray(x, dtype=float).reshape(state.model.n)
    buffer = state.buffer.shifted(xi_new)
    shifted = dataclasses.replace(state, buffer=buffer)
    x_margin = state.model.X.margin(x)
    warm = warm_start_candidate(shifted, x)
    t0 = time.perf_counter()
    try:
        qp = condense(state.model, state.design, state.suite, buffer, x, state.tol)
    except InfeasibleQPError as exc:
        raise ControllerInfeasibleError(
            f"step {state.step_count}: {exc}; this cannot happen for x(t0) in C with "
            "consistent artifacts, so it indicates an artifact or tolerance bug",
            shifted, x,
        ) from exc
    sol = solve_qp(qp, warm_start=warm, tol=state.tol)
    elapsed = time.perf_counter() - t0
    if not sol.optimal:
        raise ControllerInfeasibleError(
            f"step {state.step_count}: QP status {sol.status} at x={x.tolist()}; this cannot "
            "happen for x(t0) in C with consistent artifacts, so it indicates an artifact "
            "or tolerance bug",
            shifted, x, sol,
        )
    diag = StepDiag(sol.objective, sol.status, tuple(sol.active_rows), sol.iterations,
                    elapsed, float(x_margin), float(qp.x0_margin), warm is not None,
                    dict(sol.kkt))
    new_state = dataclasses.replace(shifted, last_solution=sol,
                                    step_count=state.step_count + 1)
    return new_state, sol.u_sequence[0].copy(), diag


def value_of(state: ControllerState, x) -> float:
    """Optimal cost at ``x`` under the current buffer."""
    qp = condense(state.model, state.design, state.suite, state.buffer, x, state.tol)
    sol = solve_qp(qp, tol=state.tol)
    if not sol.optimal:
        raise InfeasibleQPError(f"QP status {sol.status} at x={x}", sol)
    return sol.objective
