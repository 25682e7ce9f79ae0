"""Log-det barrier interior-point method for small block-diagonal LMIs.

Solves

    minimize    c' y
    subject to  F_b(y) = F_b0 + sum_k y_k F_bk  >= 0   for every block b

by following the central path of ``c'y / mu - sum_b logdet F_b(y)`` with
damped Newton steps.  At a central point the matrices ``Z_b = mu F_b^{-1}``
are dual feasible, so ``mu * sum_b dim(F_b)`` bounds the duality gap; that
bound is the stopping rule.  Intended for tens of variables and blocks of
size below ~50; everything is dense.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SDPNumericalError(RuntimeError):
    """Newton iterations failed to make progress."""


@dataclass
class LMIBlock:
    """One affine matrix function ``F0 + sum_k y[var[k]] * coeffs[k]``."""

    F0: np.ndarray
    var: np.ndarray  # indices of variables that appear in the block
    coeffs: np.ndarray  # shape (len(var), d, d), symmetric slices

    @property
    def size(self) -> int:
        return self.F0.shape[0]

    def evaluate(self, y: np.ndarray) -> np.ndarray:
        return self.F0 + np.tensordot(y[self.var], self.coeffs, axes=1)


@dataclass
class SDPResult:
    y: np.ndarray
    objective: float
    gap_bound: float
    newton_steps: int
    mu_history: list = field(default_factory=list)


def _chol(M):
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return None


def _barrier(blocks, y):
    val = 0.0
    for blk in blocks:
        L = _chol(blk.evaluate(y))
        if L is None:
            return np.inf
        val -= 2.0 * np.sum(np.log(np.diag(L)))
    return val


def solve_barrier_sdp(
    c: np.ndarray,
    blocks: list,
    y0: np.ndarray,
    gap_tol: float = 1e-6,
    mu0: float = 1.0,
    shrink: float = 10.0,
    newton_tol: float = 1e-9,
    max_newton: int = 200,
) -> SDPResult:
    """Path-following barrier method from a strictly feasible ``y0``."""
    c = np.asarray(c, dtype=float)
    y = np.array(y0, dtype=float)
    p = y.size
    if not np.isfinite(_barrier(blocks, y)):
        raise ValueError("starting point is not strictly feasible")
    total_dim = sum(b.size for b in blocks)
    mu = mu0
    steps = 0
    history = []
    while True:
        for _ in range(max_newton):
            steps += 1
            g = c / mu
            H = np.zeros((p, p))
            for blk in blocks:
                W = np.linalg.inv(blk.evaluate(y))
                M = np.einsum("ij,kjl->kil", W, blk.coeffs)
                g[blk.var] -= np.einsum("kii->k", M)
                H[np.ix_(blk.var, blk.var)] += np.einsum("kij,lji->kl", M, M)
            H = 0.5 * (H + H.T)
            try:
                dy = -np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                dy = -np.linalg.lstsq(H, g, rcond=None)[0]
            decrement = float(-g @ dy)
            if decrement / 2.0 <= newton_tol:
                break
            f0 = c @ y / mu + _barrier(blocks, y)
            step = 1.0
            while step > 1e-14:
                y_new = y + step * dy
                f1 = c @ y_new / mu + _barrier(blocks, y_new)
                if np.isfinite(f1) and f1 <= f0 - 0.25 * step * decrement:
                    break
                step *= 0.5
            else:
                # roundoff floor: accept the point if it is already nearly centered
                if decrement < 1e-6:
                    break
                raise SDPNumericalError(
                    f"line search failed at mu={mu:.3e}, decrement={decrement:.3e}"
                )
            y = y_new
            if f0 - f1 <= 1e-13 * max(1.0, abs(f0)):
                # no measurable progress: Hessian conditioning ~ 1/mu^2 limits accuracy
                break
        else:
            raise SDPNumericalError(f"Newton did not converge at mu={mu:.3e}")
        history.append(mu)
        if mu * total_dim <= gap_tol:
            break
        mu /= shrink
    return SDPResult(y, float(c @ y), mu * total_dim, steps, history)
