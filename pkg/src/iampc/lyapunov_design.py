"""Offline synthesis of the parameter-dependent terminal cost and gains.

For every ordered vertex pair ``(i, j)`` the design LMI

    [ G_i+G_i'-S_i   (A_i G_i+B E_i)'  E_i'    G_i'   ]
    [ A_i G_i+B E_i   S_j              0       0      ]
    [ E_i             0                R^{-1}  0      ]  >= eps * I
    [ G_i             0                0       Q^{-1} ]

is imposed.  From a solution, ``P_i = S_i^{-1}`` and ``K_i = E_i G_i^{-1}``
give ``V(x, xi) = x' (sum xi_i P_i) x`` and ``kappa(xi) = sum xi_i K_i`` with
the one-step decrease

    V(x+, xi+) - V(x, xi) <= -x' (Q + kappa(xi)' R kappa(xi)) x

along ``x+ = (A(xi) + B kappa(xi)) x`` for all ``xi, xi+`` in the simplex.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .model import VertexModel, check_simplex
from .sdp import LMIBlock, SDPNumericalError, solve_barrier_sdp

__all__ = [
    "AssumptionViolation",
    "DesignNumericalError",
    "ConicProblem",
    "DesignResult",
    "DecreaseReport",
    "default_eps",
    "build_design_lmi",
    "solve_design",
    "verify_decrease",
    "kappa",
    "terminal_P",
]

CONDITION_LIMIT = 1e12


class AssumptionViolation(ValueError):
    """The design LMI has no solution for the given model and weights."""


class DesignNumericalError(RuntimeError):
    """The SDP solve or the certificate inversion failed numerically."""


def default_eps(model: VertexModel) -> float:
    return 1e-6 * (1.0 + max(float(np.max(np.abs(A))) for A in model.vertex_A))


def _check_spd(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if np.min(np.linalg.eigvalsh(M)) <= 0:
        raise ValueError(f"{name} must be positive definite")
    return M


@dataclass
class ConicProblem:
    """Block LMI in the stacked decision vector ``y = (G_i, S_i, E_i)_i, t``.

    Each block is ``M_ij(G, S, E) + (t - eps) I >= 0``; minimizing ``t``
    decides feasibility (feasible iff the optimum is ``<= 0``).
    """

    n: int
    m: int
    ell: int
    eps: float
    pairs: list
    blocks: list
    n_vars: int

    @property
    def block_size(self) -> int:
        return 3 * self.n + self.m

    @property
    def vars_per_vertex(self) -> int:
        n, m = self.n, self.m
        return n * n + n * (n + 1) // 2 + m * n

    def unpack(self, y):
        n, m = self.n, self.m
        G, S, E = [], [], []
        iu = np.triu_indices(n)
        for i in range(self.ell):
            off = i * self.vars_per_vertex
            G.append(y[off:off + n * n].reshape(n, n))
            off += n * n
            Si = np.zeros((n, n))
            Si[iu] = y[off:off + n * (n + 1) // 2]
            S.append(Si + np.triu(Si, 1).T)
            off += n * (n + 1) // 2
            E.append(y[off:off + m * n].reshape(m, n))
        return G, S, E, float(y[-1])

    def pack(self, G, S, E, t):
        iu = np.triu_indices(self.n)
        parts = []
        for Gi, Si, Ei in zip(G, S, E):
            parts += [np.ravel(Gi), np.asarray(Si)[iu], np.ravel(Ei)]
        return np.concatenate(parts + [[t]])


def build_design_lmi(model: VertexModel, Q, R, eps_margin: float) -> ConicProblem:
    """Assemble the ``ell**2`` coupled blocks of the design LMI."""
    if not eps_margin > 0:
        raise ValueError("eps_margin must be positive")
    n, m, ell = model.n, model.m, model.n_vertices
    Q = _check_spd(Q, "Q")
    R = _check_spd(R, "R")
    if Q.shape != (n, n) or R.shape != (m, m):
        raise ValueError(f"Q must be {(n, n)} and R must be {(m, m)}")
    Qi, Ri = np.linalg.inv(Q), np.linalg.inv(R)
    Qi, Ri = 0.5 * (Qi + Qi.T), 0.5 * (Ri + Ri.T)
    B = model.B
    d = 3 * n + m
    s0, s1, s2, s3 = slice(0, n), slice(n, 2 * n), slice(2 * n, 2 * n + m), slice(2 * n + m, d)
    nvv = n * n + n * (n + 1) // 2 + m * n
    n_vars = ell * nvv + 1
    t_index = n_vars - 1

    def symmetric(rs, cs, blk):
        """Place ``blk`` at (rs, cs) and its transpose at (cs, rs)."""
        M = np.zeros((d, d))
        M[rs, cs] += blk
        if rs != cs:
            M[cs, rs] += blk.T
        return M

    def vertex_terms(i, j):
        """(variable index, coefficient matrix) pairs for block (i, j)."""
        A = model.vertex_A[i]
        terms = []
        off = i * nvv
        for a in range(n):
            for b in range(n):
                Eab = np.zeros((n, n))
                Eab[a, b] = 1.0
                C = symmetric(s0, s0, Eab + Eab.T)
                C += symmetric(s1, s0, A @ Eab)
                C += symmetric(s3, s0, Eab)
                terms.append((off + a * n + b, C))
        off += n * n
        k = 0
        for a in range(n):
            for b in range(a, n):
                Sab = np.zeros((n, n))
                Sab[a, b] = 1.0
                Sab[b, a] = 1.0
                terms.append((off + k, symmetric(s0, s0, -Sab)))
                terms.append((j * nvv + n * n + k, symmetric(s1, s1, Sab)))
                k += 1
        off += n * (n + 1) // 2
        for a in range(m):
            for b in range(n):
                Eab = np.zeros((m, n))
                Eab[a, b] = 1.0
                C = symmetric(s1, s0, B @ Eab)
                C += symmetric(s2, s0, Eab)
                terms.append((off + a * n + b, C))
        terms.append((t_index, np.eye(d)))
        return terms

    blocks, pairs = [], []
    for i in range(ell):
        for j in range(ell):
            F0 = np.zeros((d, d))
            F0[s2, s2] = Ri
            F0[s3, s3] = Qi
            F0 -= eps_margin * np.eye(d)
            merged = {}
            for idx, C in vertex_terms(i, j):
                merged[idx] = merged.get(idx, 0.0) + C
            var = np.array(sorted(merged))
            coeffs = np.stack([merged[v] for v in var])
            blocks.append(LMIBlock(F0, var, coeffs))
            pairs.append((i, j))
    return ConicProblem(n, m, ell, float(eps_margin), pairs, blocks, n_vars)


@dataclass(frozen=True, eq=False)
class DesignResult:
    """Per-vertex terminal weights ``P_i``, gains ``K_i`` and LMI certificates."""

    P: tuple
    K: tuple
    S: tuple
    G: tuple
    E: tuple
    Q: np.ndarray
    R: np.ndarray
    eps: float = 0.0
    slack: float = 0.0
    model_digest: str = ""
    block_min_eig: float = field(default=np.nan)

    @property
    def n_vertices(self) -> int:
        return len(self.P)

    def to_dict(self) -> dict:
        tolist = lambda seq: [np.asarray(M).tolist() for M in seq]  # noqa: E731
        ell = len(self.P)
        n = self.P[0].shape[0]
        m = self.K[0].shape[0]
        return {
            "format": "design.ia",
            "ell": ell, "n": n, "m": m,
            "P": tolist(self.P), "K": tolist(self.K),
            "S": tolist(self.S), "G": tolist(self.G), "E": tolist(self.E),
            "Q": self.Q.tolist(), "R": self.R.tolist(),
            "eps": self.eps, "slack": self.slack,
            "block_min_eig": self.block_min_eig,
            "model_digest": self.model_digest,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DesignResult":
        arr = lambda seq: tuple(np.array(M, dtype=float) for M in seq)  # noqa: E731
        return cls(
            arr(d["P"]), arr(d["K"]), arr(d["S"]), arr(d["G"]), arr(d["E"]),
            np.array(d["Q"], dtype=float), np.array(d["R"], dtype=float),
            float(d.get("eps", 0.0)), float(d.get("slack", 0.0)),
            d.get("model_digest", ""), float(d.get("block_min_eig", np.nan)),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "DesignResult":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def lmi_blocks(model: VertexModel, design: DesignResult) -> list:
    """Re-evaluate the design LMI blocks (without margin) from certificates."""
    n, m = model.n, model.m
    Qi, Ri = np.linalg.inv(design.Q), np.linalg.inv(design.R)
    out = []
    for i, A in enumerate(model.vertex_A):
        G, S, E = design.G[i], design.S[i], design.E[i]
        AGBE = A @ G + model.B @ E
        for j in range(model.n_vertices):
            M = np.block([
                [G + G.T - S, AGBE.T, E.T, G.T],
                [AGBE, design.S[j], np.zeros((n, m)), np.zeros((n, n))],
                [E, np.zeros((m, n)), Ri, np.zeros((m, n))],
                [G, np.zeros((n, n)), np.zeros((n, m)), Qi],
            ])
            out.append(0.5 * (M + M.T))
    return out


DESIGN_OBJECTIVES = ("margin", "cost")


def _fixed_gain_map(prob: ConicProblem, gain: np.ndarray) -> np.ndarray:
    """Linear map ``y = T z`` for solutions with ``G_i = S_i`` and ``E_i = gain S_i``.

    ``z`` holds the upper triangles of the ``S_i`` followed by the slack.
    Any such ``z`` is a solution of the full LMI, with ``K_i = gain`` for
    every vertex.
    """
    n, m, ell = prob.n, prob.m, prob.ell
    iu = np.triu_indices(n)
    zeros_n, zeros_e = np.zeros((n, n)), np.zeros((m, n))
    cols = []
    for i in range(ell):
        for a, b in zip(*iu):
            Sab = np.zeros((n, n))
            Sab[a, b] = Sab[b, a] = 1.0
            G = [zeros_n] * ell
            S = [zeros_n] * ell
            E = [zeros_e] * ell
            G[i], S[i], E[i] = Sab, Sab, gain @ Sab
            cols.append(prob.pack(G, S, E, 0.0))
    cols.append(prob.pack([zeros_n] * ell, [zeros_n] * ell, [zeros_e] * ell, 1.0))
    return np.stack(cols, axis=1)


def _restrict(blocks: list, T: np.ndarray) -> list:
    out = []
    for blk in blocks:
        coeffs = np.einsum("vk,vij->kij", T[blk.var], blk.coeffs)
        keep = np.flatnonzero(np.any(coeffs != 0.0, axis=(1, 2)))
        out.append(LMIBlock(blk.F0, keep, coeffs[keep]))
    return out


def solve_design(model: VertexModel, Q=None, R=None, eps_margin: float | None = None,
                 gap_tol: float = 1e-6, objective: str = "margin",
                 gain=None) -> DesignResult:
    """Solve the design LMI and recover ``P_i``, ``K_i``.

    Parameters
    ----------
    objective : {"margin", "cost"}
        ``"margin"`` returns the solution with the largest uniform LMI margin
        (minimal slack).  ``"cost"`` keeps the blocks above ``eps_margin`` and
        then maximizes ``sum_i trace(S_i)``, i.e. pushes the terminal weights
        ``P_i = S_i^{-1}`` down towards the smallest certified cost bound.
    gain : array_like, optional
        Search only solutions with ``G_i = S_i`` and ``E_i = gain S_i``, so
        every ``K_i`` equals ``gain``.  The LMI then certifies (or rejects) a
        prescribed terminal gain.  The terminal set, and with it the minimal
        horizon, depends on which LMI solution is used; this option makes
        that choice explicit.

    Raises
    ------
    AssumptionViolation
        The LMI has no solution for the given data.
    DesignNumericalError
        The interior-point solve or the inversions failed numerically.
    """
    if objective not in DESIGN_OBJECTIVES:
        raise ValueError(f"objective must be one of {DESIGN_OBJECTIVES}")
    n, m = model.n, model.m
    Q = np.eye(n) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.eye(m) if R is None else np.atleast_2d(np.asarray(R, dtype=float))
    eps = default_eps(model) if eps_margin is None else float(eps_margin)
    prob = build_design_lmi(model, Q, R, eps)
    ell = model.n_vertices

    if gain is None:
        T = np.eye(prob.n_vars)
    else:
        gain = np.atleast_2d(np.asarray(gain, dtype=float))
        if gain.shape != (m, n):
            raise ValueError(f"gain must have shape {(m, n)}")
        T = _fixed_gain_map(prob, gain)
    blocks = prob.blocks if gain is None else _restrict(prob.blocks, T)
    nz = T.shape[1]
    # start at G = S = I, E = 0 (or E = gain), with a slack that makes it interior
    eye_y = prob.pack([np.eye(n)] * ell, [np.eye(n)] * ell,
                      [np.zeros((m, n)) if gain is None else gain] * ell, 0.0)
    z0 = np.linalg.lstsq(T, eye_y, rcond=None)[0]
    lam = min(np.min(np.linalg.eigvalsh(b.evaluate(z0))) for b in blocks)
    z0[-1] = max(0.0, -lam) + 1.0
    c = np.zeros(nz)
    c[-1] = 1.0
    try:
        res = solve_barrier_sdp(c, blocks, z0, gap_tol=gap_tol)
    except SDPNumericalError as exc:
        raise DesignNumericalError(f"design SDP failed: {exc}") from exc
    G, S, E, t = prob.unpack(T @ res.y)
    if t > 0:
        what = "these A_i, B, Q, R" if gain is None else f"gain {gain.tolist()}"
        raise AssumptionViolation(
            f"design LMI has no solution for {what} (best slack t={t:.3e} > 0)"
        )
    if objective == "cost" and t < 0:
        # second phase: t <= 0 stays enforced, trace of the S_i is maximized
        cap = LMIBlock(np.zeros((1, 1)), np.array([nz - 1]), -np.ones((1, 1, 1)))
        probe = prob.pack([np.zeros((n, n))] * ell, [np.eye(n)] * ell,
                          [np.zeros((m, n))] * ell, 0.0)
        try:
            res = solve_barrier_sdp(-(T.T @ probe), blocks + [cap], res.y, gap_tol=gap_tol)
        except SDPNumericalError as exc:
            raise DesignNumericalError(f"design SDP failed: {exc}") from exc
        G, S, E, t = prob.unpack(T @ res.y)

    P, K = [], []
    for i in range(ell):
        try:
            cS = sla.cho_factor(S[i])
        except np.linalg.LinAlgError as exc:
            raise DesignNumericalError(f"S_{i + 1} is not positive definite") from exc
        if np.linalg.cond(S[i]) >= CONDITION_LIMIT or np.linalg.cond(G[i]) >= CONDITION_LIMIT:
            raise DesignNumericalError(f"certificate {i + 1} is ill-conditioned")
        Pi = sla.cho_solve(cS, np.eye(n))
        P.append(0.5 * (Pi + Pi.T))
        lu = sla.lu_factor(G[i])
        # K G = E  <=>  G' K' = E'
        K.append(sla.lu_solve(lu, E[i].T, trans=1).T)

    design = DesignResult(
        tuple(P), tuple(K), tuple(S), tuple(G), tuple(E), Q, R, eps, t,
        model.digest(), 0.0,
    )
    min_eig = min(np.min(np.linalg.eigvalsh(M)) for M in lmi_blocks(model, design))
    if min_eig < eps / 2:
        raise DesignNumericalError(
            f"re-evaluated LMI margin {min_eig:.3e} below eps/2 = {eps / 2:.3e}"
        )
    object.__setattr__(design, "block_min_eig", float(min_eig))
    return design


def kappa(design: DesignResult, xi) -> np.ndarray:
    """Terminal gain ``sum_i xi_i K_i``."""
    xi = check_simplex(xi, design.n_vertices)
    return np.tensordot(xi, np.stack(design.K), axes=1)


def terminal_P(design: DesignResult, xi) -> np.ndarray:
    """Terminal weight ``sum_i xi_i P_i`` (symmetric positive definite)."""
    xi = check_simplex(xi, design.n_vertices)
    return np.tensordot(xi, np.stack(design.P), axes=1)


@dataclass
class DecreaseReport:
    n_samples: int
    worst_residual: float
    worst_scaled: float
    passed: bool
    worst_sample: tuple = ()


def _dirichlet(rng, ell, size):
    return rng.dirichlet(np.ones(ell), size=size)


def verify_decrease(design: DesignResult, model: VertexModel, n_samples: int = 10_000,
                    rng_seed: int = 0, tol: float = 1e-8) -> DecreaseReport:
    """Sample the Lyapunov decrease inequality of the design.

    For random unit ``x`` and ``xi, xi+`` in the simplex, evaluates
    ``V(x+, xi+) - V(x, xi) + x'(Q + kappa' R kappa) x`` along the
    closed loop and checks it is ``<= tol * (1 + |x|^2)``.
    """
    rng = np.random.default_rng(rng_seed)
    n, ell = model.n, model.n_vertices
    X = rng.standard_normal((n_samples, n))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    Xi0 = _dirichlet(rng, ell, n_samples)
    Xi1 = _dirichlet(rng, ell, n_samples)
    As, Ks, Ps = np.stack(model.vertex_A), np.stack(design.K), np.stack(design.P)

    A_xi = np.einsum("si,ijk->sjk", Xi0, As)
    K_xi = np.einsum("si,ijk->sjk", Xi0, Ks)
    P0 = np.einsum("si,ijk->sjk", Xi0, Ps)
    P1 = np.einsum("si,ijk->sjk", Xi1, Ps)
    Acl = A_xi + np.einsum("ij,sjk->sik", model.B, K_xi)
    Xn = np.einsum("sij,sj->si", Acl, X)
    U = np.einsum("sij,sj->si", K_xi, X)
    lhs = np.einsum("si,sij,sj->s", Xn, P1, Xn) - np.einsum("si,sij,sj->s", X, P0, X)
    rhs = -(np.einsum("si,ij,sj->s", X, design.Q, X) + np.einsum("si,ij,sj->s", U, design.R, U))
    resid = lhs - rhs
    scaled = resid / (1.0 + np.sum(X * X, axis=1))
    k = int(np.argmax(scaled))
    return DecreaseReport(
        n_samples, float(resid[k]), float(scaled[k]), bool(scaled[k] <= tol),
        (X[k], Xi0[k], Xi1[k]),
    )
