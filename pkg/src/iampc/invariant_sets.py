"""Fixpoint set computations for the adaptive controller.

* ``max_rci``: maximal robust control invariant set ``C`` inside ``X`` for
  the polytopic inclusion ``x+ in co{A_i x + B u}``.
* ``build_cxu``: state-input pairs keeping every vertex successor in ``C``.
* ``mcas``: maximal constraint admissible set of the parameter-dependent
  terminal law, used as the terminal set ``X_N``.
* ``backward_step`` / ``min_horizon``: backward reachable family
  ``S^(h)`` from ``X_N`` and the smallest horizon with ``S^(N) >= C``.

The terminal set only needs ``(x, K_i x) in X_xu`` at the vertices: ``X_xu``
is convex and ``kappa(xi)`` is a convex combination of the ``K_i``, so
vertex admissibility gives admissibility for every ``xi``.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lyapunov_design import DesignResult
from .model import VertexModel
from .polytope import (
    SET_EQUALITY_TOL,
    EmptySetError,
    Polytope,
    circle_directions,
    eliminate,
    intersect,
    intersect_all,
    is_equal,
    is_subset,
    lift,
    preimage_linear,
    remove_redundant,
    support_points,
)

log = logging.getLogger(__name__)

INTERIOR_TOL = 1e-9
#: A fixpoint whose Chebyshev radius is below this fraction of the radius of
#: ``X`` is treated as collapsed: the absolute equality test stops a
#: geometrically shrinking sequence once it is smaller than the tolerance.
COLLAPSE_RATIO = 1e-5
DEFAULT_MAX_ITER = 200


class NonTerminationError(RuntimeError):
    """A fixpoint iteration hit its cap; ``last`` holds the final iterate."""

    def __init__(self, message: str, last: Optional[Polytope] = None, iterations: int = 0):
        super().__init__(message)
        self.last = last
        self.iterations = iterations


class HorizonNotFoundError(RuntimeError):
    def __init__(self, message: str, coverage: list, family: list):
        super().__init__(message)
        self.coverage = coverage
        self.family = family


class SetSuiteError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


def _require_interior(P: Polytope, what: str) -> None:
    if P.is_empty():
        raise EmptySetError(f"{what} is empty")
    if not P.has_interior(INTERIOR_TOL):
        raise EmptySetError(f"{what} has empty interior (Chebyshev radius {P.chebyshev()[1]:.3e})")


def _successor_lift(model: VertexModel, state_set: Polytope, target: Polytope,
                    vertices=None) -> Polytope:
    """``{(x, u) : x in state_set, u in U, A_i x + B u in target for i in vertices}``."""
    n, m = model.n, model.m
    Ix = np.hstack([np.eye(n), np.zeros((n, m))])
    Iu = np.hstack([np.zeros((m, n)), np.eye(m)])
    idx = range(model.n_vertices) if vertices is None else vertices
    blocks = [(state_set, Ix), (model.U, Iu)]
    blocks += [(target, np.hstack([model.vertex_A[i], model.B])) for i in idx]
    return lift(blocks, n + m)


def rci_step(model: VertexModel, C: Polytope) -> Polytope:
    """One step ``{x in C : exists u in U, A_i x + B u in C for all i}``."""
    lifted = remove_redundant(_successor_lift(model, C, C))
    if lifted.is_empty():
        return lifted
    proj = eliminate(lifted, range(model.n, model.n + model.m))
    return intersect(proj, C)


def _max_rci(model, max_iter, tol):
    C = remove_redundant(model.X)
    history = [C]
    for h in range(max_iter):
        nxt = rci_step(model, C)
        if nxt.is_empty():
            raise EmptySetError(f"no RCI set within X (iterate {h + 1} is empty)")
        history.append(nxt)
        if is_equal(nxt, C, tol):
            if nxt.chebyshev()[1] < COLLAPSE_RATIO * history[0].chebyshev()[1]:
                raise EmptySetError(
                    f"no RCI set with interior within X (iterates collapse to a point, "
                    f"radius {nxt.chebyshev()[1]:.3e})"
                )
            log.debug("max_rci converged after %d iterations (%d rows)", h + 1, nxt.n_rows)
            return nxt, h + 1, history
        C = nxt
    raise NonTerminationError(
        f"max_rci did not reach a fixpoint in {max_iter} iterations", C, max_iter
    )


def max_rci(model: VertexModel, max_iter: int = DEFAULT_MAX_ITER,
            tol: float = SET_EQUALITY_TOL) -> Polytope:
    """Maximal robust control invariant subset of ``X``.

    Iterates ``C <- {x : exists u in U, A_i x + B u in C for all i} & C``
    from ``C = X`` until two iterates agree within ``tol``.
    """
    return _max_rci(model, max_iter, tol)[0]


def build_cxu(model: VertexModel, C: Polytope) -> Polytope:
    """``{(x, u) in C x U : A_i x + B u in C for all i}``."""
    if C.dim != model.n:
        raise ValueError("C must live in the state space")
    if not is_subset(C, model.X):
        raise ValueError("C must be contained in X")
    cxu = remove_redundant(_successor_lift(model, C, C))
    if cxu.is_empty():
        raise EmptySetError("C_xu is empty; C is not robust control invariant")
    return cxu


def _mcas(model, design, X_xu, max_iter, tol):
    n, m = model.n, model.m
    if X_xu.dim != n + m:
        raise ValueError(f"X_xu must have dimension {n + m}")
    if design.n_vertices != model.n_vertices:
        raise ValueError("design and model have different vertex counts")
    maps = [np.vstack([np.eye(n), K]) for K in design.K]
    Xh = intersect_all([preimage_linear(X_xu, M) for M in maps])
    _require_interior(Xh, "X^(0)")
    closed = [A + model.B @ K for A, K in zip(model.vertex_A, design.K)]
    for h in range(max_iter):
        pre = [Polytope(Xh.A @ Acl, Xh.b, dim=n) for Acl in closed]
        nxt = intersect_all([Xh] + pre)
        _require_interior(nxt, f"X^({h + 1})")
        if is_equal(nxt, Xh, tol):
            return nxt, h + 1
        Xh = nxt
    raise NonTerminationError(f"mcas did not converge in {max_iter} iterations", Xh, max_iter)


def mcas(model: VertexModel, design: DesignResult, X_xu: Polytope,
         max_iter: int = DEFAULT_MAX_ITER, tol: float = SET_EQUALITY_TOL) -> Polytope:
    """Maximal constraint admissible set of ``u = kappa(xi) x`` within ``X_xu``."""
    X_inf, _ = _mcas(model, design, X_xu, max_iter, tol)
    if not X_inf.contains(np.zeros(model.n), tol=-INTERIOR_TOL):
        raise EmptySetError("origin is not in the interior of the terminal set")
    return X_inf


def backward_step(model: VertexModel, S_h: Polytope, X: Polytope, U: Polytope,
                  cxu: Optional[Polytope] = None) -> Polytope:
    """``S^(h+1) = intersection over i of {x in X : exists u in U, A_i x + B u in S_h}``.

    With ``cxu`` given, the pair ``(x, u)`` is additionally required to lie
    in it (the state-input set enforced by the online problem).
    """
    if S_h.is_empty():
        raise EmptySetError("S_h is empty")
    n, m = model.n, model.m
    Ix = np.hstack([np.eye(n), np.zeros((n, m))])
    Iu = np.hstack([np.zeros((m, n)), np.eye(m)])
    pieces = []
    for i, A in enumerate(model.vertex_A):
        blocks = [(X, Ix), (U, Iu), (S_h, np.hstack([A, model.B]))]
        if cxu is not None:
            blocks.append((cxu, np.eye(n + m)))
        lifted = remove_redundant(lift(blocks, n + m))
        if lifted.is_empty():
            raise EmptySetError(f"S_{i + 1}^(h+1) is empty")
        Si = eliminate(lifted, range(n, n + m))
        if Si.is_empty():
            raise EmptySetError(f"S_{i + 1}^(h+1) is empty")
        pieces.append(Si)
    out = intersect_all(pieces)
    if out.is_empty():
        raise EmptySetError("S^(h+1) is empty")
    return out


def _coverage(C: Polytope, S: Polytope, points) -> float:
    return float(np.mean([S.contains(p, tol=1e-7) for p in points]))


def min_horizon(model: VertexModel, X_N: Polytope, C: Polytope, h_max: int = 50,
                cxu: Optional[Polytope] = None, tol: float = SET_EQUALITY_TOL):
    """Smallest ``N <= h_max`` with ``C`` inside ``S^(N)``.

    Returns ``(N, [S^(0), ..., S^(N)])``.  Raises
    :class:`HorizonNotFoundError` carrying the per-step coverage of support
    points of ``C`` when no such ``N`` exists.
    """
    S = X_N
    family = [S]
    coverage = []
    probes = None
    for h in range(h_max + 1):
        if is_subset(C, S, tol):
            return h, family
        if probes is None:
            probes = support_points(C, circle_directions(100, C.dim))
        coverage.append(_coverage(C, S, probes))
        if h == h_max:
            break
        S = backward_step(model, S, model.X, model.U, cxu=cxu)
        family.append(S)
    raise HorizonNotFoundError(
        f"no horizon <= {h_max} with S^(N) containing C", coverage, family
    )


@dataclass
class SetSuite:
    """``C``, ``C_xu``, terminal set ``X_N``, horizon ``N`` and the S-family."""

    C: Polytope
    C_xu: Polytope
    X_N: Polytope
    N: int
    S_family: list = field(default_factory=list)
    model_digest: str = ""
    design_digest: str = ""
    iterations: dict = field(default_factory=dict)
    tol: float = SET_EQUALITY_TOL

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        self.C.save(os.path.join(directory, "C.json"))
        self.C_xu.save(os.path.join(directory, "C_xu.json"))
        self.X_N.save(os.path.join(directory, "X_N.json"))
        names = []
        for h, S in enumerate(self.S_family):
            name = f"S_{h:03d}.json"
            S.save(os.path.join(directory, name))
            names.append(name)
        manifest = {
            "model_digest": self.model_digest,
            "design_digest": self.design_digest,
            "N": self.N,
            "tol": self.tol,
            "iterations": self.iterations,
            "S_family": names,
        }
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=1)

    @classmethod
    def load(cls, directory) -> "SetSuite":
        with open(os.path.join(directory, "manifest.json")) as fh:
            manifest = json.load(fh)
        fam = [Polytope.load(os.path.join(directory, f)) for f in manifest["S_family"]]
        return cls(
            Polytope.load(os.path.join(directory, "C.json")),
            Polytope.load(os.path.join(directory, "C_xu.json")),
            Polytope.load(os.path.join(directory, "X_N.json")),
            int(manifest["N"]), fam,
            manifest.get("model_digest", ""), manifest.get("design_digest", ""),
            manifest.get("iterations", {}), float(manifest.get("tol", SET_EQUALITY_TOL)),
        )


def design_digest(design: DesignResult) -> str:
    import hashlib

    text = json.dumps(design.to_dict(), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def build_set_suite(model: VertexModel, design: DesignResult,
                    max_iter: int = DEFAULT_MAX_ITER, tol: float = SET_EQUALITY_TOL,
                    h_max: int = 50, horizon: Optional[int] = None,
                    reach_through_cxu: bool = False) -> SetSuite:
    """Assemble ``C``, ``C_xu``, ``X_N`` and the minimal horizon.

    ``horizon`` overrides the minimal one (it must still satisfy
    ``S^(N) >= C``).  With ``reach_through_cxu`` the backward family also
    requires ``(x, u) in C_xu``.
    """
    def stage(name, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except Exception as exc:  # label and re-raise
            raise SetSuiteError(name, exc) from exc

    C, it_c, _ = stage("max_rci", _max_rci, model, max_iter, tol)
    stage("max_rci", _require_interior, C, "C")
    C_xu = stage("build_cxu", build_cxu, model, C)
    X_N, it_x = stage("mcas", _mcas, model, design, C_xu, max_iter, tol)
    if not is_subset(X_N, C, tol):
        raise SetSuiteError("mcas", ValueError("terminal set is not contained in C"))
    N, family = stage("min_horizon", min_horizon, model, X_N, C, h_max,
                      C_xu if reach_through_cxu else None, tol)
    if horizon is not None:
        if horizon < N:
            raise SetSuiteError(
                "min_horizon", ValueError(f"horizon {horizon} < minimal horizon {N}")
            )
        while len(family) <= horizon:
            family.append(stage("min_horizon", backward_step, model, family[-1],
                                model.X, model.U, C_xu if reach_through_cxu else None))
        N = horizon
    return SetSuite(
        C, C_xu, X_N, N, family, model.digest(), design_digest(design),
        {"max_rci": it_c, "mcas": it_x}, tol,
    )
