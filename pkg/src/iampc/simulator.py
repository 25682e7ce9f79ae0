"""Closed-loop experiments: true plant, estimator and adaptive MPC.

A scenario fixes the model, the design weights, the estimator settings, the
true-parameter policy and a set of initial states.  ``run_scenario``
simulates every initial state against every true-parameter draw and returns
one :class:`Trace` per pair; ``verify_trace`` recomputes every check from
the logged data only.

Timing inside one step ``t``::

    u(t)   = control_step(buffer shifted with xi(t), x(t))
    x(t+1) = A(xi_bar(t)) x(t) + B u(t)             (true plant)
    xi(t+1) = estimator_step(x(t), u(t), x(t+1))    (or xi_bar for the oracle)

``V(t)`` is the optimal cost at ``x(t)`` with the buffer used at step ``t``
and ``xi_tilde(t) = xi_bar(t) - xi_{0|t}``, where ``xi_{0|t} = xi(t - N)``
(the initial buffer entry for ``t < N``).
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .controller import ControllerState, control_step, new_controller
from .estimator import EstimatorConfig, estimator_step, matrix_error, new_estimator
from .invariant_sets import SetSuite, build_set_suite
from .lyapunov_design import DesignResult, solve_design
from .model import VertexModel, check_simplex, example_model
from .polytope import Polytope, box, circle_directions, support_points

log = logging.getLogger(__name__)

__all__ = [
    "ScenarioConfig",
    "Artifacts",
    "Trace",
    "VerificationReport",
    "SweepResult",
    "build_artifacts",
    "model_from_config",
    "initial_states",
    "true_parameters",
    "run_scenario",
    "run_single",
    "verify_trace",
    "sweep_filter_gain",
    "settling_step",
]

CONSTRAINT_TOL = 1e-8
DECREASE_TOL = 1e-6
ZERO_ERROR = 1e-12


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def model_from_config(record) -> VertexModel:
    """``"example"`` or a model mapping; ``X`` and ``U`` may be lower/upper boxes."""
    if record in (None, "example"):
        return example_model()
    if isinstance(record, dict):
        record = dict(record)
        for key in ("X", "U"):
            S = record[key]
            if "lower" in S:
                record[key] = box(S["lower"], S["upper"]).to_dict()
        return VertexModel.from_dict(record)
    raise ValueError("model must be 'example' or a mapping with vertex_A, B, X, U")


@dataclass
class ScenarioConfig:
    """Everything a closed-loop experiment needs.

    ``xi_policy`` is one of

    * ``{"kind": "fixed", "value": [...]}``
    * ``{"kind": "random", "count": 4}`` (Dirichlet(1) draws from ``rng_seed``)
    * ``{"kind": "schedule", "segments": [[t0, [...]], [t1, [...]], ...]}``
      (piecewise constant, first segment must start at 0)

    ``initial`` is one of ``{"kind": "explicit", "points": [[...], ...]}``,
    ``{"kind": "support", "count": 100}`` (support points of ``C`` in evenly
    spread directions, exact duplicates removed) or ``{"kind": "center"}``.
    ``oracle = True`` replaces the estimator by the true parameter.
    """

    model: object = "example"
    Q: Optional[list] = None
    R: Optional[list] = None
    eps_margin: Optional[float] = None
    design_objective: str = "margin"
    gain: Optional[list] = None
    horizon: Optional[int] = None
    estimator: dict = field(default_factory=lambda: {"window": 3, "gain": 0.5, "lam_reg": 1e-8})
    oracle: bool = False
    xi_policy: dict = field(default_factory=lambda: {"kind": "random", "count": 4})
    initial: dict = field(default_factory=lambda: {"kind": "support", "count": 100})
    steps: int = 100
    rng_seed: int = 0
    output_dir: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if int(self.steps) < 1:
            raise ValueError("steps must be at least 1")
        EstimatorConfig(**self.estimator)
        if not self.oracle and not 0.0 < float(self.estimator.get("gain", 0.5)) <= 1.0:
            raise ValueError("the filter gain must lie in (0, 1]")
        if self.xi_policy.get("kind") not in ("fixed", "random", "schedule"):
            raise ValueError("xi_policy kind must be fixed, random or schedule")
        if self.initial.get("kind") not in ("explicit", "support", "center"):
            raise ValueError("initial kind must be explicit, support or center")
        if self.horizon is not None and int(self.horizon) < 1:
            raise ValueError("horizon must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


@dataclass
class Artifacts:
    model: VertexModel
    design: DesignResult
    suite: SetSuite


def build_artifacts(cfg: ScenarioConfig) -> Artifacts:
    model = model_from_config(cfg.model)
    design = solve_design(model, cfg.Q, cfg.R, cfg.eps_margin,
                          objective=cfg.design_objective, gain=cfg.gain)
    suite = build_set_suite(model, design, horizon=cfg.horizon)
    return Artifacts(model, design, suite)


def initial_states(cfg: ScenarioConfig, art: Artifacts) -> list:
    kind = cfg.initial["kind"]
    n = art.model.n
    if kind == "explicit":
        return [np.asarray(p, dtype=float).reshape(n) for p in cfg.initial["points"]]
    if kind == "center":
        return [art.suite.C.chebyshev()[0].copy()]
    pts = support_points(art.suite.C, circle_directions(int(cfg.initial.get("count", 100)), n))
    out, seen = [], set()
    for p in pts:
        key = tuple(np.round(p, 12))
        if key not in seen:  # identical starts give identical runs
            seen.add(key)
            out.append(p)
    return out


def true_parameters(cfg: ScenarioConfig, ell: int) -> list:
    """One callable ``t -> xi_bar(t)`` per draw."""
    pol = cfg.xi_policy
    if pol["kind"] == "fixed":
        xi = check_simplex(pol["value"], ell)
        return [lambda t, xi=xi: xi]
    if pol["kind"] == "random":
        rng = np.random.default_rng(cfg.rng_seed)
        draws = rng.dirichlet(np.ones(ell), size=int(pol.get("count", 4)))
        return [lambda t, xi=xi: xi for xi in draws]
    segs = sorted((int(t0), check_simplex(v, ell)) for t0, v in pol["segments"])
    if segs[0][0] != 0:
        raise ValueError("the first schedule segment must start at t = 0")

    def sched(t):
        cur = segs[0][1]
        for t0, v in segs:
            if t >= t0:
                cur = v
        return cur

    return [sched]


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------


@dataclass
class Trace:
    """Logged closed-loop run; rows are steps ``t = 0 .. T-1``.

    ``x`` has ``T + 1`` rows (the final state included) and ``V`` has
    ``T + 1`` entries (``V[T]`` is the cost at the final state with the
    buffer of the next step).
    """

    x: np.ndarray
    u: np.ndarray
    xi: np.ndarray  # estimate fed to the controller at t
    buffer: np.ndarray  # (T, N+1, ell)
    xi_bar: np.ndarray
    xi_tilde: np.ndarray
    V: np.ndarray
    status: list
    iterations: np.ndarray
    solve_time: np.ndarray
    rho: np.ndarray  # unconstrained estimate computed after step t (nan for the oracle)
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.u.shape[0]

    # CSV layout: fixed columns, documented in the README
    def columns(self) -> list:
        n, m, ell = self.x.shape[1], self.u.shape[1], self.xi.shape[1]
        N1 = self.buffer.shape[1]
        cols = ["t"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)]
        cols += [f"xi{i}" for i in range(ell)] + [f"xibar{i}" for i in range(ell)]
        cols += [f"xitilde{i}" for i in range(ell)] + [f"rho{i}" for i in range(ell)]
        cols += ["V", "status", "qp_iterations", "solve_time"]
        cols += [f"buf{k}_{i}" for k in range(N1) for i in range(ell)]
        return cols

    def save(self, stem) -> None:
        """Write ``stem.csv`` (one row per step plus a final-state row) and ``stem.json``."""
        T = self.T
        n, m, ell = self.x.shape[1], self.u.shape[1], self.xi.shape[1]
        N1 = self.buffer.shape[1]
        with open(f"{stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            for t in range(T + 1):
                last = t == T
                nan = lambda k: ["nan"] * k  # noqa: E731
                row = [t] + [repr(float(v)) for v in self.x[t]]
                row += nan(m) if last else [repr(float(v)) for v in self.u[t]]
                for arr in (self.xi, self.xi_bar, self.xi_tilde, self.rho):
                    row += nan(ell) if last else [repr(float(v)) for v in arr[t]]
                row += [repr(float(self.V[t])), "final" if last else self.status[t]]
                row += ["0" if last else str(int(self.iterations[t]))]
                row += ["nan" if last else repr(float(self.solve_time[t]))]
                row += nan(N1 * ell) if last else [repr(float(v)) for v in self.buffer[t].ravel()]
                w.writerow(row)
        with open(f"{stem}.json", "w") as fh:
            json.dump(self.meta, fh, indent=1)

    @classmethod
    def load(cls, stem) -> "Trace":
        with open(f"{stem}.json") as fh:
            meta = json.load(fh)
        with open(f"{stem}.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        n, m, ell, N = meta["n"], meta["m"], meta["ell"], meta["N"]
        T = len(rows) - 1

        def grab(prefix, k, rs):
            return np.array([[float(r[f"{prefix}{i}"]) for i in range(k)] for r in rs])

        body = rows[:T]
        buf = np.array([[[float(r[f"buf{k}_{i}"]) for i in range(ell)] for k in range(N + 1)]
                        for r in body]).reshape(T, N + 1, ell)
        return cls(
            grab("x", n, rows), grab("u", m, body).reshape(T, m),
            grab("xi", ell, body).reshape(T, ell), buf,
            grab("xibar", ell, body).reshape(T, ell), grab("xitilde", ell, body).reshape(T, ell),
            np.array([float(r["V"]) for r in rows]),
            [r["status"] for r in body],
            np.array([int(r["qp_iterations"]) for r in body]),
            np.array([float(r["solve_time"]) for r in body]),
            grab("rho", ell, body).reshape(T, ell), meta,
        )


def run_single(art: Artifacts, x0, xi_bar_fn, est_cfg: EstimatorConfig, steps: int,
               oracle: bool = False, meta: Optional[dict] = None) -> Trace:
    """Simulate one initial state against one true-parameter policy."""
    model, design, suite = art.model, art.design, art.suite
    n, m, ell, N = model.n, model.m, model.n_vertices, suite.N
    xi_bar0 = xi_bar_fn(0)
    ctrl: ControllerState = new_controller(design, suite, model,
                                           xi0=xi_bar0 if oracle else None)
    est = new_estimator(model, est_cfg)
    xi = xi_bar0.copy() if oracle else est.xi.copy()
    x = np.asarray(x0, dtype=float).copy()
    X, Uv, XI, BUF, XB, XT, V, ST, IT, TM, RHO = ([] for _ in range(11))
    X.append(x.copy())
    for t in range(steps):
        xb = xi_bar_fn(t)
        ctrl, u, diag = control_step(ctrl, x, xi)
        x_next = model.step(x, u, xb)
        XI.append(xi.copy())
        BUF.append(ctrl.buffer.as_array())
        XB.append(xb.copy())
        XT.append(xb - ctrl.buffer[0])
        V.append(diag.value)
        ST.append(diag.status)
        IT.append(diag.iterations)
        TM.append(diag.solve_time)
        Uv.append(u)
        if oracle:
            xi = xi_bar_fn(t + 1).copy()
            RHO.append(np.full(ell, np.nan))
        else:
            est, xi = estimator_step(est, x, u, x_next, model)
            RHO.append(est.last_rho.copy())
        x = x_next
        X.append(x.copy())
    # cost at the final state with the buffer the next step would use
    _, _, diag = control_step(ctrl, x, xi)
    V.append(diag.value)
    info = {
        "n": n, "m": m, "ell": ell, "N": N, "T": steps,
        "oracle": bool(oracle),
        "stationary": bool(all(np.array_equal(xi_bar_fn(t), xi_bar0) for t in range(steps + 1))),
        "lambda_min_Q": float(np.min(np.linalg.eigvalsh(design.Q))),
        "filter_gain": est_cfg.gain,
        "x0": np.asarray(x0, dtype=float).tolist(),
        "model_digest": model.digest(),
    }
    info.update(meta or {})
    return Trace(np.array(X), np.array(Uv).reshape(steps, m), np.array(XI), np.array(BUF),
                 np.array(XB), np.array(XT), np.array(V), ST, np.array(IT), np.array(TM),
                 np.array(RHO), info)


def run_scenario(cfg: ScenarioConfig, art: Optional[Artifacts] = None) -> list:
    """All initial states x all true-parameter draws; deterministic given the config."""
    art = art or build_artifacts(cfg)
    est_cfg = EstimatorConfig(**cfg.estimator)
    traces = []
    draws = true_parameters(cfg, art.model.n_vertices)
    starts = initial_states(cfg, art)
    for j, fn in enumerate(draws):
        for i, x0 in enumerate(starts):
            try:
                tr = run_single(art, x0, fn, est_cfg, int(cfg.steps), cfg.oracle,
                                {"draw": j, "start": i})
            except Exception as exc:
                raise RuntimeError(f"run (draw {j}, start {i}, x0={x0.tolist()}) failed: {exc}") \
                    from exc
            traces.append(tr)
    if cfg.output_dir:
        os.makedirs(cfg.output_dir, exist_ok=True)
        for tr in traces:
            tr.save(os.path.join(cfg.output_dir,
                                 f"trace_d{tr.meta['draw']:02d}_s{tr.meta['start']:03d}"))
    return traces


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


@dataclass
class VerificationReport:
    constraints_ok: bool
    worst_state_margin: float
    worst_input_margin: float
    in_C_ok: bool
    worst_C_margin: float
    feasible_ok: bool
    decrease_checked: bool
    decrease_ok: bool
    worst_decrease: float
    iss_ok: bool
    gamma_hat: float
    worst_zero_error_residual: float
    final_norm_ratio: float
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return (self.constraints_ok and self.in_C_ok and self.feasible_ok
                and self.decrease_ok and self.iss_ok)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _margins(P: Polytope, pts: np.ndarray) -> np.ndarray:
    return np.min(P.b[None, :] - pts @ P.A.T, axis=1)


def verify_trace(trace: Trace, art: Artifacts, tol: float = CONSTRAINT_TOL) -> VerificationReport:
    """Recompute every check from the logged trace."""
    model, suite = art.model, art.suite
    fails = []
    xm = _margins(model.X, trace.x)
    um = _margins(model.U, trace.u)
    cm = _margins(suite.C, trace.x)
    for name, arr in (("state", xm), ("input", um), ("C", cm)):
        bad = np.flatnonzero(arr < -tol)
        if bad.size:
            fails.append(f"{name} constraint violated at t={int(bad[0])} by {-arr[bad[0]]:.3e}")
    infeasible = [t for t, s in enumerate(trace.status) if s != "optimal"]
    if infeasible:
        fails.append(f"QP not optimal at t={infeasible[0]}")

    lam = trace.meta.get("lambda_min_Q", float(np.min(np.linalg.eigvalsh(art.design.Q))))
    V = trace.V
    xn = np.linalg.norm(trace.x[:-1], axis=1)
    r = V[1:] - V[:-1] + lam * xn ** 2
    err = np.linalg.norm(trace.xi_tilde, axis=1)
    zero = err <= ZERO_ERROR

    # nominal decrease: only meaningful for constant true parameters with exact predictions
    stationary = bool(trace.meta.get("stationary", False))
    decrease_checked = stationary and bool(np.all(zero))
    worst_dec = float(np.max(r)) if decrease_checked and r.size else -np.inf
    decrease_ok = True
    if decrease_checked:
        active = xn > 1e-6
        if np.any(r[active] > DECREASE_TOL):
            t = int(np.flatnonzero(active & (r > DECREASE_TOL))[0])
            fails.append(f"Lyapunov decrease violated at t={t} (residual {r[t]:.3e})")
            decrease_ok = False
        dv = V[1:] - V[:-1]
        if np.any(dv[active] >= 0):
            t = int(np.flatnonzero(active & (dv >= 0))[0])
            fails.append(f"V not strictly decreasing at t={t}")
            decrease_ok = False

    iss_ok = True
    gamma = float(np.max(np.maximum(r[~zero], 0.0) / err[~zero])) if np.any(~zero) else 0.0
    worst_zero = float(np.max(r[zero])) if np.any(zero) else -np.inf
    if stationary:
        if not np.isfinite(gamma):
            iss_ok = False
            fails.append("ISS gain estimate is not finite")
        if np.any(zero) and worst_zero > DECREASE_TOL:
            t = int(np.flatnonzero(zero & (r > DECREASE_TOL))[0])
            iss_ok = False
            fails.append(f"ISS residual {r[t]:.3e} > {DECREASE_TOL} with zero error at t={t}")
    x0n = np.linalg.norm(trace.x[0])
    ratio = float(np.linalg.norm(trace.x[-1]) / x0n) if x0n > 0 else 0.0
    return VerificationReport(
        constraints_ok=bool(np.min(xm) >= -tol and np.min(um) >= -tol),
        worst_state_margin=float(np.min(xm)),
        worst_input_margin=float(np.min(um)),
        in_C_ok=bool(np.min(cm) >= -tol),
        worst_C_margin=float(np.min(cm)),
        feasible_ok=not infeasible,
        decrease_checked=decrease_checked,
        decrease_ok=decrease_ok,
        worst_decrease=worst_dec,
        iss_ok=iss_ok,
        gamma_hat=gamma,
        worst_zero_error_residual=worst_zero,
        final_norm_ratio=ratio,
        failures=fails,
    )


# ---------------------------------------------------------------------------
# filter-gain sweep
# ---------------------------------------------------------------------------


def settling_step(x: np.ndarray, fraction: float = 0.01) -> Optional[int]:
    """First ``t`` with ``|x(tau)| <= fraction |x(0)|`` for every later ``tau``."""
    norms = np.linalg.norm(np.asarray(x), axis=1)
    bound = fraction * norms[0]
    above = np.flatnonzero(norms > bound)
    if above.size == 0:
        return 0
    t = int(above[-1]) + 1
    return t if t < norms.size else None


@dataclass
class SweepResult:
    summary: list  # dicts: gain, draw, start, peak_V, settling_step
    errors: dict  # (gain, draw, start) -> matrix error trajectory

    def to_csv(self, path) -> None:
        """Long format: one row per (gain, draw, start, t) with the matrix error."""
        peak = {(s["gain"], s["draw"], s["start"]): s for s in self.summary}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["gain", "draw", "start", "t", "matrix_error", "peak_V", "settling_step"])
            for key, traj in self.errors.items():
                s = peak[key]
                for t, e in enumerate(traj):
                    w.writerow([repr(key[0]), key[1], key[2], t, repr(float(e)),
                                repr(s["peak_V"]), "" if s["settling_step"] is None
                                else s["settling_step"]])

    def settling_by_gain(self) -> dict:
        out: dict = {}
        for s in self.summary:
            out.setdefault(s["gain"], []).append(s["settling_step"])
        return out


def sweep_filter_gain(cfg: ScenarioConfig, gains, art: Optional[Artifacts] = None) -> SweepResult:
    """Run the scenario once per filter gain with identical seeds."""
    gains = [float(g) for g in gains]
    if any(not 0.0 < g <= 1.0 for g in gains):
        raise ValueError("filter gains must lie in (0, 1]")
    art = art or build_artifacts(cfg)
    summary, errors = [], {}
    for g in gains:
        est = dict(cfg.estimator)
        est["gain"] = g
        sub = ScenarioConfig(**{**cfg.to_dict(), "estimator": est, "oracle": False,
                                "output_dir": None})
        for tr in run_scenario(sub, art):
            key = (g, tr.meta["draw"], tr.meta["start"])
            errors[key] = np.array([matrix_error(art.model, xi, xb)
                                    for xi, xb in zip(tr.xi, tr.xi_bar)])
            summary.append({"gain": g, "draw": tr.meta["draw"], "start": tr.meta["start"],
                            "peak_V": float(np.max(tr.V)),
                            "settling_step": settling_step(tr.x)})
    return SweepResult(summary, errors)
