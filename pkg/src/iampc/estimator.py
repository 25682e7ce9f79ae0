"""Convex-combination estimator: windowed ridge least squares, simplex
projection and a first-order filter.

Each step solves

    rho = argmin  sum_tau |x_next - sum_i rho_i A_i x_prev - B u_prev|^2
                  + lam_reg |rho - rho_prev|^2

over the last ``N_m`` samples, projects ``rho`` onto the unit simplex and
blends it into the running estimate::

    xi(t+1) = (1 - gain) xi(t) + gain * proj(rho)

Both terms are simplex points, so the estimate never leaves the simplex.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import VertexModel, check_simplex, uniform_simplex

__all__ = [
    "EstimatorConfig",
    "EstimatorState",
    "project_simplex",
    "ls_estimate",
    "estimator_step",
    "new_estimator",
    "matrix_error",
]

DEFAULT_REG = 1e-8


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum(w) = 1}`` (sort and threshold).

    >>> project_simplex([0.5, 0.5, 0.5])
    array([0.33333333, 0.33333333, 0.33333333])
    """
    v = np.asarray(v, dtype=float).ravel()
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise ValueError("project_simplex needs a nonempty finite vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / idx > 0)[-1]
    theta = css[rho] / (rho + 1.0)
    w = np.maximum(v - theta, 0.0)
    return w / w.sum()


def ls_estimate(window, model: VertexModel, rho_prev, lam_reg: float = DEFAULT_REG):
    """Ridge least-squares fit of the convex-combination coordinates.

    Parameters
    ----------
    window : iterable of (x_prev, u_prev, x_next)
    rho_prev : array_like
        Previous unconstrained estimate, the ridge anchor.
    lam_reg : float
        Ridge weight (``>= 0``).

    Returns
    -------
    rho : ndarray
        The minimizer; when ``lam_reg == 0`` and the normal matrix is
        singular, the minimum-norm least-squares solution.
    rank_deficient : bool
        True in that singular, unregularized case.
    """
    samples = list(window)
    if not samples:
        raise ValueError("the data window is empty")
    if lam_reg < 0:
        raise ValueError("lam_reg must be nonnegative")
    As = np.stack(model.vertex_A)
    ell = model.n_vertices
    rho_prev = np.asarray(rho_prev, dtype=float).reshape(ell)
    Xp = np.array([np.asarray(s[0], dtype=float) for s in samples])
    Up = np.array([np.atleast_1d(np.asarray(s[1], dtype=float)) for s in samples])
    Xn = np.array([np.asarray(s[2], dtype=float) for s in samples])
    # regressor columns A_i x_prev, stacked over the window
    Phi = np.einsum("ijk,tk->tji", As, Xp).reshape(-1, ell)
    y = (Xn - Up @ model.B.T).reshape(-1)
    M = Phi.T @ Phi + lam_reg * np.eye(ell)
    r = Phi.T @ y + lam_reg * rho_prev
    if lam_reg == 0.0 and np.linalg.matrix_rank(M) < ell:
        return np.linalg.lstsq(Phi, y, rcond=None)[0], True
    return np.linalg.solve(M, r), False


@dataclass(frozen=True)
class EstimatorConfig:
    window: int = 3
    gain: float = 0.5
    lam_reg: float = DEFAULT_REG

    def __post_init__(self):
        if int(self.window) < 1:
            raise ValueError("window must be at least 1")
        if not 0.0 <= self.gain <= 1.0:
            raise ValueError("filter gain must lie in [0, 1]")
        if self.lam_reg < 0:
            raise ValueError("lam_reg must be nonnegative")


@dataclass
class EstimatorState:
    """Mutable estimator state, owned by one simulated plant."""

    config: EstimatorConfig
    xi: np.ndarray
    rho_prev: np.ndarray
    window: deque = field(default_factory=deque)
    last_rho: Optional[np.ndarray] = None
    last_projection: Optional[np.ndarray] = None
    rank_deficient: bool = False


def new_estimator(model: VertexModel, config: Optional[EstimatorConfig] = None,
                  xi0=None) -> EstimatorState:
    """Estimator with ``xi(0)`` uniform unless ``xi0`` is given."""
    config = config or EstimatorConfig()
    ell = model.n_vertices
    xi = uniform_simplex(ell) if xi0 is None else check_simplex(xi0, ell).copy()
    return EstimatorState(config, xi, xi.copy(), deque(maxlen=int(config.window)))


def estimator_step(state: EstimatorState, x_prev, u_prev, x_next,
                   model: VertexModel) -> tuple:
    """Push one sample, refit, project and filter.  Returns ``(state, xi)``."""
    state.window.append((np.array(x_prev, dtype=float), np.atleast_1d(np.array(u_prev, dtype=float)),
                         np.array(x_next, dtype=float)))
    rho, deficient = ls_estimate(state.window, model, state.rho_prev, state.config.lam_reg)
    proj = project_simplex(rho)
    g = state.config.gain
    xi = (1.0 - g) * state.xi + g * proj
    xi = np.maximum(xi, 0.0)
    xi /= xi.sum()
    state.xi = xi
    state.rho_prev = rho
    state.last_rho = rho
    state.last_projection = proj
    state.rank_deficient = deficient
    return state, xi.copy()


def matrix_error(model: VertexModel, xi, xi_true) -> float:
    """Frobenius distance ``|A(xi) - A(xi_true)|``.

    Parameters with the same combined matrix are indistinguishable from
    state data, so estimation error is measured in matrix space.
    """
    return float(np.linalg.norm(model.A_of(xi) - model.A_of(xi_true)))
