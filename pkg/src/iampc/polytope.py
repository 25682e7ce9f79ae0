"""Halfspace polytopes ``{x : A x <= b}`` with LP-backed predicates.

Every set in the package (state and input constraints, invariant sets,
terminal sets, lifted state-input sets) is a :class:`Polytope`.  Rows are
normalized to unit Euclidean norm on construction so that all tolerances are
distances.  Instances are immutable; every operation returns a new object.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import HalfspaceIntersection, QhullError

__all__ = [
    "Polytope",
    "LPSolution",
    "EmptySetError",
    "LPError",
    "RowCapError",
    "DegenerateDirectionWarning",
    "solve_lp",
    "contains",
    "is_subset",
    "is_equal",
    "intersect",
    "preimage_linear",
    "eliminate",
    "remove_redundant",
    "chebyshev_center",
    "support_points",
    "box",
    "lift",
]

ZERO_ROW_TOL = 1e-12
SET_EQUALITY_TOL = 1e-7
DEFAULT_ROW_CAP = 5000


class EmptySetError(ValueError):
    """Raised when an operation requires a nonempty set."""


class LPError(RuntimeError):
    """The LP backend failed for numerical reasons."""


class RowCapError(RuntimeError):
    """Fourier-Motzkin produced more rows than the configured cap."""


class DegenerateDirectionWarning(UserWarning):
    pass


class Polytope:
    """Polytope in halfspace representation.

    Parameters
    ----------
    normals : array_like, shape (r, n)
        Halfspace normals, one per row.
    offsets : array_like, shape (r,)
        Right-hand sides.
    dim : int, optional
        Ambient dimension; only needed when ``normals`` has no rows.

    Notes
    -----
    Nonzero rows are rescaled to unit norm. A zero row ``0 <= b`` with
    ``b >= 0`` is dropped; with ``b < 0`` it marks the set as trivially
    empty and is kept as ``0 <= -1``.
    """

    __slots__ = ("_A", "_b", "_dim", "_cheb")

    def __init__(self, normals, offsets, dim: Optional[int] = None):
        A = np.asarray(normals, dtype=float)
        b = np.asarray(offsets, dtype=float).reshape(-1)
        if A.ndim == 1:
            A = A.reshape(-1, dim if dim is not None else A.size) if A.size else A.reshape(0, dim or 0)
        if A.ndim != 2:
            raise ValueError("normals must be a 2-D array")
        if dim is None:
            if A.shape[1] == 0 and A.shape[0] == 0:
                raise ValueError("dim is required for a polytope without rows")
            dim = A.shape[1]
        if A.shape[0] == 0:
            A = A.reshape(0, dim)
        if A.shape[1] != dim:
            raise ValueError(f"normals have {A.shape[1]} columns, expected {dim}")
        if A.shape[0] != b.shape[0]:
            raise ValueError(
                f"row count of normals ({A.shape[0]}) != length of offsets ({b.shape[0]})"
            )
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("polytope data must be finite")

        norms = np.linalg.norm(A, axis=1)
        zero = norms <= ZERO_ROW_TOL
        infeasible_zero = zero & (b < 0)
        keep = ~zero
        A = A[keep] / norms[keep, None]
        b = b[keep] / norms[keep]
        if np.any(infeasible_zero):
            A = np.vstack([A, np.zeros((1, dim))])
            b = np.append(b, -1.0)
        A.setflags(write=False)
        b.setflags(write=False)
        self._A = A
        self._b = b
        self._dim = int(dim)
        self._cheb = None

    @property
    def A(self) -> np.ndarray:
        return self._A

    @property
    def b(self) -> np.ndarray:
        return self._b

    normals = A
    offsets = b

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def n_rows(self) -> int:
        return self._A.shape[0]

    def __repr__(self) -> str:
        return f"Polytope(dim={self.dim}, rows={self.n_rows})"

    def chebyshev(self):
        if self._cheb is None:
            self._cheb = _chebyshev(self)
        return self._cheb

    def is_empty(self, tol: float = 1e-9) -> bool:
        """True when the Chebyshev radius is below ``-tol``."""
        return self.chebyshev()[1] < -tol

    def has_interior(self, tol: float = 1e-9) -> bool:
        return self.chebyshev()[1] > tol

    def contains(self, x, tol: float = 1e-9) -> bool:
        return contains(self, x, tol)

    def margin(self, x) -> float:
        """Smallest slack ``min_i b_i - a_i x`` (negative outside)."""
        x = _as_point(self, x)
        if self.n_rows == 0:
            return np.inf
        return float(np.min(self._b - self._A @ x))

    def __and__(self, other: "Polytope") -> "Polytope":
        return intersect(self, other)

    def scaled(self, factor: float) -> "Polytope":
        """``factor * P`` for ``factor > 0``."""
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return Polytope(self._A, self._b * factor, dim=self.dim)

    # serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "normals": self._A.tolist(),
            "offsets": self._b.tolist(),
        }

    @classmethod
    def from_dict(cls, record: dict) -> "Polytope":
        dim = int(record["dim"])
        A = np.array(record["normals"], dtype=float).reshape(-1, dim)
        return cls._raw(A, np.array(record["offsets"], dtype=float), dim)

    def dumps(self) -> str:
        # float repr is the shortest string that round-trips exactly
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "Polytope":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "Polytope":
        with open(path) as fh:
            return cls.loads(fh.read())

    @classmethod
    def _raw(cls, A: np.ndarray, b: np.ndarray, dim: int) -> "Polytope":
        """Build without renormalizing (rows already unit norm)."""
        obj = cls.__new__(cls)
        A = np.array(A, dtype=float).reshape(-1, dim)
        b = np.array(b, dtype=float).reshape(-1)
        A.setflags(write=False)
        b.setflags(write=False)
        obj._A, obj._b, obj._dim, obj._cheb = A, b, dim, None
        return obj


def box(lower, upper) -> Polytope:
    """Axis-aligned box ``lower <= x <= upper``."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if lower.shape != upper.shape:
        raise ValueError("lower and upper must have the same shape")
    n = lower.size
    eye = np.eye(n)
    return Polytope(np.vstack([eye, -eye]), np.concatenate([upper, -lower]))


def _as_point(P: Polytope, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(-1)
    if x.shape[0] != P.dim:
        raise ValueError(f"point has dimension {x.shape[0]}, polytope has {P.dim}")
    return x


def _check_same_dim(P: Polytope, Q: Polytope) -> None:
    if P.dim != Q.dim:
        raise ValueError(f"dimension mismatch: {P.dim} vs {Q.dim}")


# ---------------------------------------------------------------------------
# LP
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LPSolution:
    """Result of :func:`solve_lp`.

    ``optimizer`` and ``objective`` are ``None`` unless ``status`` is
    ``"optimal"``.  ``dual`` holds nonnegative multipliers of the rows of the
    polytope (for a maximization, ``c = A' dual`` at the optimum).
    """

    status: str
    optimizer: Optional[np.ndarray] = None
    objective: Optional[float] = None
    dual: Optional[np.ndarray] = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _linprog(c, A, b, max_iter: int = 10_000):
    return linprog(
        c,
        A_ub=A if A.shape[0] else None,
        b_ub=b if A.shape[0] else None,
        bounds=(None, None),
        method="highs",
        options={"maxiter": max_iter, "presolve": True},
    )


def solve_lp(c, P: Polytope, sense: str = "min", max_iter: int = 10_000) -> LPSolution:
    """Optimize ``c'x`` over ``P``.

    Returns an :class:`LPSolution` with status ``optimal``, ``infeasible`` or
    ``unbounded``.  Any other solver outcome raises :class:`LPError`.
    """
    c = _as_point(P, c)
    if sense not in ("min", "max"):
        raise ValueError("sense must be 'min' or 'max'")
    sign = 1.0 if sense == "min" else -1.0
    res = _linprog(sign * c, P.A, P.b, max_iter)
    if res.status == 0:
        dual = None
        if P.n_rows:
            # HiGHS marginals are d(obj)/d(b) <= 0 for the minimization it solves
            dual = -np.asarray(res.ineqlin.marginals)
        return LPSolution("optimal", np.asarray(res.x), float(c @ res.x), dual)
    if res.status == 2:
        return LPSolution("infeasible")
    if res.status == 3:
        return LPSolution("unbounded")
    raise LPError(
        f"LP backend failed (status {res.status}: {res.message}); "
        f"iterations={getattr(res, 'nit', '?')}, rows={P.n_rows}, dim={P.dim}"
    )


# ---------------------------------------------------------------------------
# predicates
# ---------------------------------------------------------------------------


def contains(P: Polytope, x, tol: float = 1e-9) -> bool:
    """True iff ``A x <= b + tol`` componentwise."""
    x = _as_point(P, x)
    if P.n_rows == 0:
        return True
    return bool(np.all(P.A @ x <= P.b + tol))


def is_subset(P: Polytope, Q: Polytope, tol: float = SET_EQUALITY_TOL) -> bool:
    """True iff ``P`` is contained in ``Q`` (up to ``tol`` per row of ``Q``).

    An empty ``P`` is a subset of everything.
    """
    _check_same_dim(P, Q)
    if P.is_empty():
        return True
    for q, d in zip(Q.A, Q.b):
        if not np.any(q):
            if d < -tol:
                return False
            continue
        sol = solve_lp(q, P, "max")
        if sol.status == "unbounded":
            return False
        if sol.status == "infeasible":
            return True
        if sol.objective > d + tol:
            return False
    return True


def is_equal(P: Polytope, Q: Polytope, tol: float = SET_EQUALITY_TOL) -> bool:
    """Mutual containment within ``tol``."""
    return is_subset(P, Q, tol) and is_subset(Q, P, tol)


# ---------------------------------------------------------------------------
# Chebyshev ball, support points
# ---------------------------------------------------------------------------


def _chebyshev(P: Polytope):
    n = P.dim
    if P.n_rows == 0:
        raise ValueError("Chebyshev center of the whole space is undefined")
    norms = np.linalg.norm(P.A, axis=1)
    # variables (x, r); maximize r, with r <= 1e6 as a guard against drift
    A = np.hstack([P.A, norms[:, None]])
    c = np.zeros(n + 1)
    c[-1] = -1.0
    res = linprog(
        c, A_ub=A, b_ub=P.b, bounds=[(None, None)] * n + [(None, None)], method="highs"
    )
    if res.status == 3:
        raise ValueError("polytope is unbounded; Chebyshev center undefined")
    if res.status == 2:
        return np.full(n, np.nan), -np.inf
    if res.status != 0:
        raise LPError(f"Chebyshev LP failed: {res.message}")
    return np.asarray(res.x[:n]), float(res.x[-1])


def chebyshev_center(P: Polytope):
    """Center and radius of the largest inscribed ball.

    A negative radius means the set is empty.  Raises ``ValueError`` for
    unbounded sets.
    """
    center, radius = P.chebyshev()
    return center.copy(), radius


def support_points(P: Polytope, directions) -> list:
    """Maximizer of ``d'x`` over ``P`` for each direction ``d``.

    A zero direction returns the Chebyshev center and emits a
    :class:`DegenerateDirectionWarning`.
    """
    if P.is_empty():
        raise EmptySetError("support points of an empty set")
    points = []
    for d in np.atleast_2d(np.asarray(directions, dtype=float)):
        d = _as_point(P, d)
        if not np.any(d):
            warnings.warn("zero direction; returning the Chebyshev center",
                          DegenerateDirectionWarning, stacklevel=2)
            points.append(P.chebyshev()[0].copy())
            continue
        sol = solve_lp(d, P, "max")
        if sol.status == "unbounded":
            raise ValueError(f"polytope is unbounded in direction {d}")
        points.append(sol.optimizer)
    return points


def circle_directions(count: int, dim: int = 2, seed: int = 0) -> np.ndarray:
    """Evenly spread unit directions (exact circle in 2-D, random otherwise)."""
    if dim == 1:
        return np.array([[1.0], [-1.0]] * ((count + 1) // 2))[:count]
    if dim == 2:
        ang = 2 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(ang), np.sin(ang)])
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((count, dim))
    return D / np.linalg.norm(D, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# constructions
# ---------------------------------------------------------------------------


def intersect(P: Polytope, Q: Polytope) -> Polytope:
    """Intersection, redundancy-removed.  An empty result is returned as-is."""
    _check_same_dim(P, Q)
    joined = Polytope._raw(np.vstack([P.A, Q.A]), np.concatenate([P.b, Q.b]), P.dim)
    return remove_redundant(joined)


def intersect_all(polys: Sequence[Polytope]) -> Polytope:
    polys = list(polys)
    if not polys:
        raise ValueError("nothing to intersect")
    dim = polys[0].dim
    for p in polys[1:]:
        _check_same_dim(polys[0], p)
    A = np.vstack([p.A for p in polys])
    b = np.concatenate([p.b for p in polys])
    return remove_redundant(Polytope._raw(A, b, dim))


def preimage_linear(P: Polytope, M) -> Polytope:
    """``{x : M x in P}``, redundancy-removed."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != P.dim:
        raise ValueError(f"map has {M.shape[0]} output rows, polytope dimension is {P.dim}")
    return remove_redundant(Polytope(P.A @ M, P.b, dim=M.shape[1]))


def lift(blocks: Iterable, dim: int) -> Polytope:
    """Stack constraints ``P_k`` on linear images ``M_k z`` of a common variable.

    ``blocks`` yields pairs ``(P_k, M_k)`` meaning ``M_k z in P_k``.  No
    redundancy removal is performed.
    """
    As, bs = [], []
    for P, M in blocks:
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape != (P.dim, dim):
            raise ValueError(f"block map shape {M.shape} != {(P.dim, dim)}")
        As.append(P.A @ M)
        bs.append(P.b)
    return Polytope(np.vstack(As), np.concatenate(bs), dim=dim)


def eliminate(P: Polytope, drop_dims, row_cap: int = DEFAULT_ROW_CAP) -> Polytope:
    """Project ``P`` onto the coordinates not in ``drop_dims``.

    Variables are removed one at a time by Fourier-Motzkin, with redundancy
    removal after each step.  Raises :class:`RowCapError` if a step would
    create more than ``row_cap`` rows.
    """
    drop = sorted({int(d) for d in np.atleast_1d(drop_dims)} if np.size(drop_dims) else set())
    for d in drop:
        if not 0 <= d < P.dim:
            raise IndexError(f"dimension {d} out of range for dim {P.dim}")
    if not drop:
        return P
    keep = [i for i in range(P.dim) if i not in drop]
    if P.is_empty():
        return _empty(len(keep))
    cur = remove_redundant(P)
    cols = list(range(P.dim))  # original indices of current columns
    # eliminate from the highest index so remaining column positions stay valid
    for d in reversed(drop):
        j = cols.index(d)
        cur = _fm_step(cur, j, row_cap)
        cols.pop(j)
        cur = remove_redundant(cur)
        if cur.dim == 0:
            break
    return cur


def _fm_step(P: Polytope, j: int, row_cap: int) -> Polytope:
    A, b = P.A, P.b
    a = A[:, j]
    zero = np.abs(a) <= ZERO_ROW_TOL
    pos = np.flatnonzero(a > ZERO_ROW_TOL)
    neg = np.flatnonzero(a < -ZERO_ROW_TOL)
    n_new = int(zero.sum()) + pos.size * neg.size
    if n_new > row_cap:
        raise RowCapError(
            f"Fourier-Motzkin step on column {j} would create {n_new} rows "
            f"(cap {row_cap}); reduce the dimension or change the elimination order"
        )
    rest = np.delete(np.arange(P.dim), j)
    Ap = A[pos] / a[pos, None]
    bp = b[pos] / a[pos]
    An = A[neg] / (-a[neg, None])
    bn = b[neg] / (-a[neg])
    combo_A = (Ap[:, None, :] + An[None, :, :]).reshape(-1, P.dim)[:, rest]
    combo_b = (bp[:, None] + bn[None, :]).reshape(-1)
    newA = np.vstack([A[zero][:, rest], combo_A])
    newb = np.concatenate([b[zero], combo_b])
    return Polytope(newA, newb, dim=P.dim - 1)


def _empty(dim: int) -> Polytope:
    if dim == 0:
        return Polytope._raw(np.zeros((1, 0)), np.array([-1.0]), 0)
    e = np.zeros(dim)
    e[0] = 1.0
    return Polytope._raw(np.vstack([e, -e]), np.array([-1.0, -1.0]), dim)


# ---------------------------------------------------------------------------
# redundancy removal
# ---------------------------------------------------------------------------


def _dedupe(A: np.ndarray, b: np.ndarray):
    """Collapse parallel rows with the same orientation, keeping the tightest."""
    if A.shape[0] <= 1:
        return A, b
    key = np.round(A, 10)
    _, inverse = np.unique(key, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.lexsort((b, inverse))
    first = np.ones(order.size, dtype=bool)
    first[1:] = inverse[order][1:] != inverse[order][:-1]
    sel = np.sort(order[first])
    return A[sel], b[sel]


def remove_redundant(P: Polytope, tol: float = 1e-9) -> Polytope:
    """Minimal halfspace representation of ``P``.

    Each retained row supports ``P`` (it cannot be dropped without enlarging
    the set by more than ``tol``).  Empty input yields a canonical empty
    polytope.  In dimension >= 2 a qhull halfspace intersection proposes the
    facet rows and the discarded rows are verified against the computed
    vertices; otherwise (and whenever qhull declines) one LP per row is used.
    """
    n = P.dim
    if P.n_rows == 0 or n == 0:
        return P
    A, b = _dedupe(P.A, P.b)
    if np.any(np.linalg.norm(A, axis=1) <= ZERO_ROW_TOL):
        return _empty(n)
    work = Polytope._raw(A, b, n)
    try:
        center, radius = work.chebyshev()
    except ValueError:
        return _remove_redundant_lp(work, tol)
    if radius < -tol:
        return _empty(n)
    if n == 1:
        return _reduce_1d(A, b)
    if radius > 1e-7:
        reduced = _remove_redundant_qhull(A, b, center, tol)
        if reduced is not None:
            return reduced
    return _remove_redundant_lp(work, tol)


def _reduce_1d(A, b):
    a = A[:, 0]
    rows, offs = [], []
    up = a > 0
    if np.any(up):
        rows.append([1.0])
        offs.append(np.min(b[up]))
    if np.any(~up):
        rows.append([-1.0])
        offs.append(np.min(b[~up]))
    return Polytope._raw(np.array(rows), np.array(offs), 1)


def _remove_redundant_qhull(A, b, center, tol):
    try:
        hs = HalfspaceIntersection(np.hstack([A, -b[:, None]]), center)
    except (QhullError, ValueError):
        return None
    verts = hs.intersections
    if not np.all(np.isfinite(verts)):
        return None
    keep = np.zeros(A.shape[0], dtype=bool)
    # halfspaces appearing in some dual facet are the non-redundant ones;
    # dual_facets is a ragged list for non-simplicial facets, so flatten it
    facet_rows = [i for facet in hs.dual_facets for i in facet]
    keep[np.unique(np.asarray(facet_rows, dtype=int))] = True
    # rows qhull discarded must hold at every vertex of the kept set
    for _ in range(3):
        red = Polytope._raw(A[keep], b[keep], A.shape[1])
        try:
            hs2 = HalfspaceIntersection(np.hstack([red.A, -red.b[:, None]]), center)
        except (QhullError, ValueError):
            return None
        V = hs2.intersections
        viol = (~keep) & np.any(A @ V.T > b[:, None] + tol, axis=1)
        if not np.any(viol):
            return red
        keep |= viol
    return None


def _remove_redundant_lp(P: Polytope, tol: float) -> Polytope:
    A, b = P.A, P.b
    active = np.ones(A.shape[0], dtype=bool)
    for i in range(A.shape[0]):
        active[i] = False
        if not np.any(active):
            active[i] = True
            continue
        Ai = np.vstack([A[active], A[i]])
        bi = np.concatenate([b[active], [b[i] + 1.0]])
        res = _linprog(-A[i], Ai, bi)
        if res.status == 0 and -res.fun <= b[i] + tol:
            continue
        active[i] = True
    return Polytope._raw(A[active], b[active], P.dim)
