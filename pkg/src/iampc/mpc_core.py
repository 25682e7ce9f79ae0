"""Condensed finite-horizon problem over the input sequence.

For a prediction sequence ``xi_0 .. xi_N`` the predicted states are affine
in the stacked inputs ``U = (u_0, .., u_{N-1})``::

    x_k = Phi_k x0 + Gamma_k U,   Phi_{k+1} = A(xi_k) Phi_k,
                                  Gamma_{k+1} = A(xi_k) Gamma_k + B E_k

so the cost ``x_N' P(xi_N) x_N + sum_{k<N} x_k'Q x_k + u_k'R u_k`` becomes
``0.5 U'HU + g'U + c`` and every set constraint becomes a block of rows
``F U <= f``.  Rows that do not involve ``U`` at all (constraints on
``x_0`` alone) are constants: they are checked up front and left out of
the QP.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .invariant_sets import SetSuite
from .lyapunov_design import DesignResult, terminal_P
from .model import VertexModel, check_simplex
from .qp import NotPositiveDefiniteError, dual_active_set

__all__ = [
    "PredictionSequence",
    "CondensedQP",
    "QPSolution",
    "InfeasibleQPError",
    "InitialStateError",
    "predict_matrices",
    "predicted_states",
    "horizon_cost",
    "condense",
    "solve_qp",
    "value_function",
    "NotPositiveDefiniteError",
]

DEFAULT_TOL = 1e-8
ROW_TAGS = ("state", "input", "cxu", "terminal")


class InfeasibleQPError(RuntimeError):
    def __init__(self, message: str, solution: Optional["QPSolution"] = None):
        super().__init__(message)
        self.solution = solution


class InitialStateError(InfeasibleQPError):
    """Constraints on ``x_0`` alone are violated (initial state outside C/X)."""


class PredictionSequence(tuple):
    """Immutable tuple of ``N + 1`` simplex vectors ``xi_{0|t} .. xi_{N|t}``."""

    def __new__(cls, entries: Sequence, ell: Optional[int] = None):
        checked = []
        for k, xi in enumerate(entries):
            try:
                v = check_simplex(xi, ell).copy()
            except ValueError as exc:
                raise ValueError(f"prediction entry {k}: {exc}") from None
            v.setflags(write=False)
            checked.append(v)
        if not checked:
            raise ValueError("a prediction sequence needs at least one entry")
        ells = {v.size for v in checked}
        if len(ells) != 1:
            raise ValueError("prediction entries have different lengths")
        return super().__new__(cls, checked)

    @property
    def horizon(self) -> int:
        return len(self) - 1

    @property
    def ell(self) -> int:
        return self[0].size

    def shifted(self, xi_new) -> "PredictionSequence":
        """Drop the first entry and append ``xi_new`` (the delay law)."""
        return PredictionSequence(list(self[1:]) + [xi_new], self.ell)

    @classmethod
    def constant(cls, xi, horizon: int) -> "PredictionSequence":
        return cls([xi] * (horizon + 1))

    def as_array(self) -> np.ndarray:
        return np.stack(self)


def _as_sequence(xi_seq, model: VertexModel) -> PredictionSequence:
    if isinstance(xi_seq, PredictionSequence):
        if xi_seq.ell != model.n_vertices:
            raise ValueError("prediction sequence does not match the vertex count")
        return xi_seq
    return PredictionSequence(list(xi_seq), model.n_vertices)


def predict_matrices(model: VertexModel, xi_seq) -> tuple:
    """``Phi_k``, ``Gamma_k`` for ``k = 0..N`` with ``x_k = Phi_k x0 + Gamma_k U``."""
    seq = _as_sequence(xi_seq, model)
    n, m, N = model.n, model.m, seq.horizon
    Phi = [np.eye(n)]
    Gamma = [np.zeros((n, N * m))]
    for k in range(N):
        A = model.A_of(seq[k])
        G = A @ Gamma[-1]
        G[:, k * m:(k + 1) * m] += model.B
        Phi.append(A @ Phi[-1])
        Gamma.append(G)
    return Phi, Gamma


def predicted_states(model: VertexModel, xi_seq, x0, U) -> np.ndarray:
    """Step-by-step recursion ``x_{k+1} = A(xi_k) x_k + B u_k``; rows are ``x_0..x_N``."""
    seq = _as_sequence(xi_seq, model)
    U = np.asarray(U, dtype=float).reshape(seq.horizon, model.m)
    xs = [np.asarray(x0, dtype=float)]
    for k in range(seq.horizon):
        xs.append(model.A_of(seq[k]) @ xs[-1] + model.B @ U[k])
    return np.array(xs)


def horizon_cost(model: VertexModel, design: DesignResult, xi_seq, x0, U) -> float:
    """Finite-horizon cost evaluated directly along the predicted trajectory."""
    seq = _as_sequence(xi_seq, model)
    xs = predicted_states(model, seq, x0, U)
    U = np.asarray(U, dtype=float).reshape(seq.horizon, model.m)
    Q, R = design.Q, design.R
    stage = sum(float(x @ Q @ x + u @ R @ u) for x, u in zip(xs[:-1], U))
    return stage + float(xs[-1] @ terminal_P(design, seq[-1]) @ xs[-1])


@dataclass
class CondensedQP:
    """``min 0.5 U'HU + g'U + constant  s.t.  F U <= f``.

    ``tags[r] = (kind, k)`` names the trajectory constraint behind row ``r``;
    ``kind`` is one of ``state``, ``input``, ``cxu``, ``terminal``.
    ``x0_margin`` is the smallest slack of the rows on ``x_0`` alone that
    were checked and dropped.
    """

    hessian: np.ndarray
    gradient: np.ndarray
    constant: float
    ineq_normals: np.ndarray
    ineq_offsets: np.ndarray
    tags: list
    N: int
    n: int
    m: int
    x0_margin: float = np.inf
    excluded_tags: list = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return self.ineq_normals.shape[0]

    def objective(self, U) -> float:
        U = np.asarray(U, dtype=float).ravel()
        return float(0.5 * U @ self.hessian @ U + self.gradient @ U + self.constant)

    def slack(self, U) -> np.ndarray:
        return self.ineq_offsets - self.ineq_normals @ np.asarray(U, dtype=float).ravel()

    def to_dict(self) -> dict:
        return {
            "hessian": self.hessian.tolist(),
            "gradient": self.gradient.tolist(),
            "constant": self.constant,
            "ineq_normals": self.ineq_normals.tolist(),
            "ineq_offsets": self.ineq_offsets.tolist(),
            "tags": [list(t) for t in self.tags],
            "N": self.N, "n": self.n, "m": self.m,
            "x0_margin": self.x0_margin,
        }

    def dump(self, path) -> None:
        """Write the matrices and row provenance as JSON for offline debugging."""
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def condense(model: VertexModel, design: DesignResult, suite: SetSuite, xi_seq, x0,
             tol: float = DEFAULT_TOL) -> CondensedQP:
    """Build the condensed QP at ``x0`` for the prediction sequence ``xi_seq``.

    Raises
    ------
    InitialStateError
        A row on ``x_0`` alone is violated by more than ``tol``.
    """
    seq = _as_sequence(xi_seq, model)
    n, m, N = model.n, model.m, seq.horizon
    if N < 1:
        raise ValueError("the horizon must be at least 1")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (n,):
        raise ValueError(f"x0 must have length {n}")
    if design.n_vertices != model.n_vertices:
        raise ValueError("design and model have different vertex counts")
    Phi, Gamma = predict_matrices(model, seq)
    Q, R = design.Q, design.R
    PN = terminal_P(design, seq[-1])
    Nm = N * m

    H = np.kron(np.eye(N), R)
    g = np.zeros(Nm)
    const = 0.0
    for k in range(N + 1):
        W = Q if k < N else PN
        GW = Gamma[k].T @ W
        H += GW @ Gamma[k]
        g += GW @ (Phi[k] @ x0)
        const += float(x0 @ Phi[k].T @ W @ Phi[k] @ x0)
    H = 2.0 * H
    H = 0.5 * (H + H.T)
    g = 2.0 * g

    def select(k):
        E = np.zeros((m, Nm))
        E[:, k * m:(k + 1) * m] = np.eye(m)
        return E

    rows, offs, tags = [], [], []
    x0_rows, x0_offs, x0_tags = [], [], []

    def add(kind, k, Fx, Fu_map, b, x_aff):
        # rows Fx x_k + (Fu_map) U <= b with x_k = x_aff[0] + x_aff[1] U
        F = Fx @ x_aff[1] + Fu_map
        f = b - Fx @ x_aff[0]
        zero = np.max(np.abs(F), axis=1) <= 1e-14 if F.size else np.zeros(len(b), bool)
        for r in range(len(b)):
            if zero[r]:
                x0_offs.append(f[r])
                x0_tags.append((kind, k))
            else:
                rows.append(F[r])
                offs.append(f[r])
                tags.append((kind, k))

    X, U, Cxu, XN = model.X, model.U, suite.C_xu, suite.X_N
    no_u = lambda A: np.zeros((A.shape[0], Nm))  # noqa: E731
    # state constraints: x_0 as a pre-check, x_1 .. x_{N-1} as rows
    for k in range(N):
        add("state", k, X.A, no_u(X.A), X.b, (Phi[k] @ x0, Gamma[k]))
    for k in range(N):
        add("input", k, np.zeros((U.n_rows, n)), U.A @ select(k), U.b,
            (Phi[k] @ x0, Gamma[k]))
    Cx, Cu = Cxu.A[:, :n], Cxu.A[:, n:]
    for k in range(N):
        add("cxu", k, Cx, Cu @ select(k), Cxu.b, (Phi[k] @ x0, Gamma[k]))
    add("terminal", N, XN.A, no_u(XN.A), XN.b, (Phi[N] @ x0, Gamma[N]))

    x0_margin = float(np.min(x0_offs)) if x0_offs else np.inf
    if x0_margin < -tol:
        worst = x0_tags[int(np.argmin(x0_offs))]
        raise InitialStateError(
            f"initial state outside C/X: {worst[0]} row at k={worst[1]} violated by "
            f"{-x0_margin:.3e}"
        )
    F = np.array(rows).reshape(-1, Nm)
    f = np.array(offs)
    return CondensedQP(H, g, const, F, f, tags, N, n, m, x0_margin, x0_tags)


@dataclass
class QPSolution:
    status: str
    u_sequence: list
    objective: float
    active_rows: list
    iterations: int
    U: np.ndarray = field(default_factory=lambda: np.zeros(0))
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    kkt: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def kkt_ok(self, tol: float = DEFAULT_TOL) -> bool:
        return all(v <= tol for v in self.kkt.values())


def solve_qp(qp: CondensedQP, warm_start=None, tol: float = DEFAULT_TOL,
             max_iter: int = 1000) -> QPSolution:
    """Solve a condensed QP with the dual active-set method.

    ``warm_start`` (a candidate ``U``) only seeds the choice of rows: rows
    active at the candidate are added first when violated.  The returned
    optimum does not depend on it, the QP being strictly convex.
    """
    prefer = None
    if warm_start is not None and qp.n_rows:
        U0 = np.asarray(warm_start, dtype=float).ravel()
        if U0.shape == qp.gradient.shape and np.all(np.isfinite(U0)):
            prefer = np.abs(qp.slack(U0)) <= 1e-7
    res = dual_active_set(qp.hessian, qp.gradient, qp.ineq_normals, qp.ineq_offsets,
                          tol=tol, max_iter=max_iter, prefer=prefer)
    U = res.x
    return QPSolution(
        res.status,
        [U[k * qp.m:(k + 1) * qp.m].copy() for k in range(qp.N)],
        res.objective + qp.constant,
        list(res.active),
        res.iterations,
        U,
        res.multipliers,
        res.kkt,
    )


def value_function(model: VertexModel, design: DesignResult, suite: SetSuite, xi_seq, x0,
                   tol: float = DEFAULT_TOL) -> float:
    """Optimal finite-horizon cost at ``x0``."""
    sol = solve_qp(condense(model, design, suite, xi_seq, x0, tol), tol=tol)
    if not sol.optimal:
        raise InfeasibleQPError(f"QP status {sol.status} at x0={x0}", sol)
    return sol.objective
