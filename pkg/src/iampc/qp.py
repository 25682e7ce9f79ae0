"""Dense strictly convex QP solver (Goldfarb-Idnani dual active set).

    minimize    0.5 x'Hx + g'x
    subject to  A x <= b

The method starts from the unconstrained minimizer and adds violated
constraints one at a time while keeping dual feasibility, so every iterate
is the optimum of the QP restricted to the current active set.  The
factorization ``J = L^{-T} Q`` (``H = L L'``) and the triangular ``R`` are
updated with Givens rotations.  Violated rows are chosen by largest
violation; ties go to the lowest row index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

__all__ = ["QPResult", "NotPositiveDefiniteError", "dual_active_set", "kkt_residuals"]


class NotPositiveDefiniteError(ValueError):
    pass


@dataclass
class QPResult:
    status: str  # optimal | infeasible | max_iter
    x: np.ndarray
    objective: float
    active: list
    multipliers: np.ndarray  # one per row of A (zero off the active set)
    iterations: int
    kkt: dict = field(default_factory=dict)


def _givens(a: float, b: float):
    h = np.hypot(a, b)
    if h == 0.0:
        return 1.0, 0.0, 0.0
    return a / h, b / h, h


def kkt_residuals(H, g, A, b, x, lam) -> dict:
    """Stationarity, primal feasibility, dual feasibility and complementarity."""
    stat = H @ x + g + (A.T @ lam if A.size else 0.0)
    slack = b - A @ x if A.size else np.zeros(0)
    return {
        "stationarity": float(np.max(np.abs(stat))) if stat.size else 0.0,
        "primal": float(max(0.0, -np.min(slack))) if slack.size else 0.0,
        "dual": float(max(0.0, -np.min(lam))) if lam.size else 0.0,
        "complementarity": float(np.max(np.abs(lam * slack))) if lam.size else 0.0,
    }


def dual_active_set(
    H: np.ndarray,
    g: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 1000,
    prefer: Optional[np.ndarray] = None,
) -> QPResult:
    """Solve the QP; ``prefer`` is a boolean row mask tried first when violated."""
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    n = g.size
    A = np.asarray(A, dtype=float).reshape(-1, n)
    b = np.asarray(b, dtype=float).reshape(-1)
    n_rows = A.shape[0]
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("Hessian is not positive definite") from None

    J = sla.solve_triangular(L, np.eye(n), lower=True).T  # L^{-T}
    x = -sla.cho_solve((L, True), g)
    R = np.zeros((n, n))
    active: list = []
    u = np.zeros(0)
    q = 0
    iterations = 0
    zero_tol = 1e-14 * max(1.0, float(np.max(np.abs(H))))
    prefer = np.zeros(n_rows, dtype=bool) if prefer is None else np.asarray(prefer, dtype=bool)
    status = "optimal"

    def add(d):
        nonlocal q
        for j in range(n - 1, q, -1):
            c, s, h = _givens(d[j - 1], d[j])
            if s == 0.0:
                continue
            d[j - 1], d[j] = h, 0.0
            Gm = np.array([[c, s], [-s, c]])
            J[:, [j - 1, j]] = J[:, [j - 1, j]] @ Gm.T
        R[: q + 1, q] = d[: q + 1]
        q += 1

    def drop(l):
        nonlocal q
        R[:, l:q - 1] = R[:, l + 1:q].copy()
        R[:, q - 1] = 0.0
        for j in range(l, q - 1):
            c, s, h = _givens(R[j, j], R[j + 1, j])
            if s == 0.0:
                continue
            Gm = np.array([[c, s], [-s, c]])
            R[[j, j + 1], j:] = Gm @ R[[j, j + 1], j:]
            R[j + 1, j] = 0.0
            J[:, [j, j + 1]] = J[:, [j, j + 1]] @ Gm.T
        q -= 1

    while True:
        if n_rows == 0:
            break
        slack = b - A @ x
        violated = slack < -tol
        if active:
            violated[active] = False
        if not np.any(violated):
            break
        pool = violated & prefer if np.any(violated & prefer) else violated
        cand = np.flatnonzero(pool)
        p = int(cand[np.argmin(slack[cand])])
        npv = -A[p]  # constraint as npv'x >= -b[p]
        u_plus = np.append(u, 0.0)

        while True:
            iterations += 1
            if iterations > max_iter:
                status = "max_iter"
                break
            d = J.T @ npv
            z = J[:, q:] @ d[q:]
            r = sla.solve_triangular(R[:q, :q], d[:q]) if q else np.zeros(0)

            t1, l = np.inf, -1
            for j in range(q):
                if r[j] > zero_tol:
                    ratio = u_plus[j] / r[j]
                    if ratio < t1:
                        t1, l = ratio, j
            zn = float(z @ npv)
            s_p = float(npv @ x + b[p])  # = b_p - a_p x
            t2 = -s_p / zn if (np.linalg.norm(z) > 1e-12 and zn > zero_tol) else np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                status = "infeasible"
                break
            if not np.isfinite(t2):
                u_plus[:q] -= t * r
                u_plus[q] += t
                u_plus = np.delete(u_plus, l)
                active.pop(l)
                drop(l)
                continue
            x = x + t * z
            u_plus[:q] -= t * r
            u_plus[q] += t
            if t == t2:
                active.append(p)
                u = u_plus
                add(d.copy())
                break
            u_plus = np.delete(u_plus, l)
            active.pop(l)
            drop(l)
        if status != "optimal":
            break

    lam = np.zeros(n_rows)
    if active:
        lam[active] = np.maximum(u[: len(active)], 0.0) if status == "optimal" else 0.0
    obj = float(0.5 * x @ H @ x + g @ x)
    res = QPResult(status, x, obj, sorted(active), lam, iterations)
    res.kkt = kkt_residuals(H, g, A, b, x, lam)
    return res
