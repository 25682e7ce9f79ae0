"""Polytopic uncertain linear model ``x+ = sum_i xi_i A_i x + B u``."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .polytope import Polytope, box

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class VertexModel:
    """Vertex matrices, shared input matrix and constraint sets.

    Attributes
    ----------
    vertex_A : tuple of ndarray
        ``A_1 .. A_l``, each ``(n, n)``.
    B : ndarray
        Input matrix ``(n, m)``.
    X, U : Polytope
        Compact state and input constraint sets containing the origin in
        their interior.
    """

    vertex_A: tuple
    B: np.ndarray
    X: Polytope
    U: Polytope

    def __post_init__(self):
        As = tuple(np.atleast_2d(np.asarray(A, dtype=float)) for A in self.vertex_A)
        if len(As) < 1:
            raise ValueError("at least one vertex matrix is required")
        n = As[0].shape[0]
        for i, A in enumerate(As):
            if A.shape != (n, n):
                raise ValueError(f"A_{i + 1} has shape {A.shape}, expected {(n, n)}")
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(n, -1)
        if B.ndim != 2 or B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got shape {B.shape}")
        if self.X.dim != n:
            raise ValueError(f"X has dimension {self.X.dim}, expected {n}")
        if self.U.dim != B.shape[1]:
            raise ValueError(f"U has dimension {self.U.dim}, expected {B.shape[1]}")
        for A in As:
            A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "vertex_A", As)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_A)

    def check_assumptions(self, tol: float = 1e-9) -> None:
        """Raise ``ValueError`` unless X, U are bounded with 0 in the interior."""
        for name, S in (("X", self.X), ("U", self.U)):
            try:
                _, r = S.chebyshev()
            except ValueError as exc:
                raise ValueError(f"{name} must be compact: {exc}") from None
            if r <= tol or S.margin(np.zeros(S.dim)) <= tol:
                raise ValueError(f"{name} must contain the origin in its interior")

    def A_of(self, xi) -> np.ndarray:
        """``A(xi) = sum_i xi_i A_i``."""
        xi = check_simplex(xi, self.n_vertices)
        return np.tensordot(xi, np.stack(self.vertex_A), axes=1)

    def step(self, x, u, xi) -> np.ndarray:
        return self.A_of(xi) @ np.asarray(x, dtype=float) + self.B @ np.atleast_1d(u)

    def to_dict(self) -> dict:
        return {
            "vertex_A": [A.tolist() for A in self.vertex_A],
            "B": self.B.tolist(),
            "X": self.X.to_dict(),
            "U": self.U.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VertexModel":
        return cls(
            tuple(np.array(A, dtype=float) for A in d["vertex_A"]),
            np.array(d["B"], dtype=float),
            Polytope.from_dict(d["X"]),
            Polytope.from_dict(d["U"]),
        )

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; ties artifacts to a model."""
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


def check_simplex(xi, ell: int | None = None, tol: float = SIMPLEX_TOL) -> np.ndarray:
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if ell is not None and xi.shape != (ell,):
        raise ValueError(f"simplex vector has shape {xi.shape}, expected ({ell},)")
    if not np.all(np.isfinite(xi)) or np.any(xi < -tol) or np.any(xi > 1 + tol) \
            or abs(xi.sum() - 1.0) > tol:
        raise ValueError(f"{xi} is not in the unit simplex")
    return xi


def uniform_simplex(ell: int) -> np.ndarray:
    return np.full(ell, 1.0 / ell)


#: Terminal gain certified by the design LMI for :func:`example_model` at
#: ``Q = I``, ``R = 1`` (``solve_design(..., gain=EXAMPLE_GAIN)``); with it the
#: minimal horizon is 8.  Found by a grid search over common gains, see
#: ``demos/horizon_sensitivity.py``.
EXAMPLE_GAIN = ((1.0, 0.8),)


def example_model() -> VertexModel:
    """Five-vertex second-order example with box constraints |x_i|<=15, |u|<=10."""
    A1 = np.array([[1.0, 0.2], [0.0, 1.0]])
    vertices = (
        A1,
        1.1 * A1,
        0.6 * A1,
        np.array([[0.9, 0.3], [0.4, 0.6]]),
        np.array([[0.95, 0.0], [0.8, 1.02]]),
    )
    B = np.array([[-0.035], [-0.905]])
    return VertexModel(vertices, B, box([-15, -15], [15, 15]), box([-10], [10]))


def scalar_model(a: Sequence[float], b: float, x_bound: float, u_bound: float) -> VertexModel:
    """One-state model with vertices ``a``; handy for interval-arithmetic checks."""
    return VertexModel(
        tuple(np.array([[float(ai)]]) for ai in a),
        np.array([[float(b)]]),
        box([-x_bound], [x_bound]),
        box([-u_bound], [u_bound]),
    )
