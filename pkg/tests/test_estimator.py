import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iampc.estimator import (
    EstimatorConfig,
    estimator_step,
    ls_estimate,
    matrix_error,
    new_estimator,
    project_simplex,
)
from iampc.model import VertexModel
from iampc.polytope import box
from oracles import project_simplex_qp


@pytest.mark.parametrize("v,expected", [
    ([0.2, 0.3, 0.5], [0.2, 0.3, 0.5]),
    ([1.0, 1.0], [0.5, 0.5]),
    ([2.0, 0.0, 0.0], [1.0, 0.0, 0.0]),
    ([-1.0, 0.5, 0.5], [0.0, 0.5, 0.5]),
    ([0.0, 0.0, 0.0, 0.0], [0.25, 0.25, 0.25, 0.25]),
])
def test_projection_examples(v, expected):
    np.testing.assert_allclose(project_simplex(v), expected, atol=1e-15)


def test_projection_matches_qp(rng):
    worst = 0.0
    for _ in range(1000):
        ell = int(rng.integers(1, 8))
        v = rng.normal(scale=rng.uniform(0.1, 5.0), size=ell)
        worst = max(worst, np.max(np.abs(project_simplex(v) - project_simplex_qp(v))))
    assert worst <= 1e-7


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=10))
def test_projection_invariants(v):
    w = project_simplex(v)
    assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-12
    np.testing.assert_allclose(project_simplex(w), w, atol=1e-12)  # idempotent
    # variational inequality: (v - w)'(z - w) <= 0 for the simplex vertices z
    v = np.asarray(v)
    for i in range(len(v)):
        z = np.zeros(len(v))
        z[i] = 1.0
        assert (v - w) @ (z - w) <= 1e-9 * max(1.0, np.abs(v).max())


def test_projection_rejects_bad_input():
    with pytest.raises(ValueError):
        project_simplex([])
    with pytest.raises(ValueError):
        project_simplex([np.nan, 1.0])


@pytest.fixture
def identifiable():
    """Two vertices with independent matrices, so the coordinates are identifiable."""
    A1 = np.array([[0.9, 0.1], [0.0, 0.8]])
    A2 = np.array([[0.5, -0.3], [0.4, 0.9]])
    return VertexModel((A1, A2), np.array([[0.0], [1.0]]), box([-10, -10], [10, 10]),
                       box([-1], [1]))


def _samples(model, xi, rng, count):
    out = []
    x = rng.standard_normal(model.n)
    for _ in range(count):
        u = rng.uniform(-1, 1, model.m)
        nxt = model.step(x, u, xi)
        out.append((x, u, nxt))
        x = nxt
    return out


def test_ls_recovers_exact_coordinates(identifiable, rng):
    xi = np.array([0.3, 0.7])
    rho, deficient = ls_estimate(_samples(identifiable, xi, rng, 3), identifiable,
                                 [0.5, 0.5], lam_reg=0.0)
    np.testing.assert_allclose(rho, xi, atol=1e-10)
    assert not deficient


def test_ls_ridge_pulls_to_anchor(identifiable):
    window = [(np.zeros(2), np.zeros(1), np.zeros(2))]  # no information
    rho, deficient = ls_estimate(window, identifiable, [0.2, 0.8], lam_reg=1e-3)
    np.testing.assert_allclose(rho, [0.2, 0.8])
    rho0, deficient0 = ls_estimate(window, identifiable, [0.2, 0.8], lam_reg=0.0)
    assert deficient0
    np.testing.assert_allclose(rho0, 0.0)  # minimum-norm solution


def test_ls_unconstrained_can_leave_simplex(identifiable, rng):
    # data generated by a matrix outside the hull of the vertices
    A_out = 1.5 * identifiable.vertex_A[0] - 0.5 * identifiable.vertex_A[1]
    window = []
    for _ in range(2):
        x, u = rng.standard_normal(2), rng.uniform(-1, 1, 1)
        window.append((x, u, A_out @ x + identifiable.B @ u))
    rho, _ = ls_estimate(window, identifiable, [0.5, 0.5], lam_reg=0.0)
    np.testing.assert_allclose(rho, [1.5, -0.5], atol=1e-10)
    np.testing.assert_allclose(project_simplex(rho), [1.0, 0.0])


def test_gain_extremes(identifiable, rng):
    xi_true = np.array([0.25, 0.75])
    data = _samples(identifiable, xi_true, rng, 4)
    frozen = new_estimator(identifiable, EstimatorConfig(gain=0.0))
    jump = new_estimator(identifiable, EstimatorConfig(gain=1.0, lam_reg=0.0))
    for s in data:
        _, xf = estimator_step(frozen, *s, identifiable)
        _, xj = estimator_step(jump, *s, identifiable)
    np.testing.assert_allclose(xf, [0.5, 0.5])
    np.testing.assert_allclose(xj, xi_true, atol=1e-10)


def test_filter_converges_geometrically(identifiable, rng):
    xi_true = np.array([0.9, 0.1])
    est = new_estimator(identifiable, EstimatorConfig(gain=0.5))
    errs = []
    for s in _samples(identifiable, xi_true, rng, 12):
        _, xi = estimator_step(est, *s, identifiable)
        errs.append(np.abs(xi - xi_true).sum())
    # exact data: each step halves the distance
    np.testing.assert_allclose(errs[1:], 0.5 * np.array(errs[:-1]), rtol=1e-5)


def test_window_length(identifiable, rng):
    est = new_estimator(identifiable, EstimatorConfig(window=2))
    for s in _samples(identifiable, [0.5, 0.5], rng, 5):
        estimator_step(est, *s, identifiable)
    assert len(est.window) == 2


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_estimate_stays_on_simplex(seed, gain):
    rng = np.random.default_rng(seed)
    A = [rng.standard_normal((2, 2)) for _ in range(3)]
    model = VertexModel(tuple(A), rng.standard_normal((2, 1)), box([-9, -9], [9, 9]),
                        box([-1], [1]))
    est = new_estimator(model, EstimatorConfig(gain=gain))
    for _ in range(6):
        x, u, nxt = rng.standard_normal(2), rng.standard_normal(1), rng.standard_normal(2)
        _, xi = estimator_step(est, x, u, nxt, model)
        assert np.all(xi >= 0) and abs(xi.sum() - 1) <= 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig(window=0)
    with pytest.raises(ValueError):
        EstimatorConfig(gain=1.5)
    with pytest.raises(ValueError):
        EstimatorConfig(lam_reg=-1.0)


def test_matrix_error_sees_through_collinear_vertices(model):
    # the first three example vertices are A1, 1.1 A1 and 0.6 A1, so
    # 0.85 A1 is reached by different coordinate vectors
    a = np.array([0.0, 0.5, 0.5, 0.0, 0.0])
    b = np.array([0.625, 0.0, 0.375, 0.0, 0.0])
    assert np.abs(a - b).sum() > 1.0
    assert matrix_error(model, a, b) == pytest.approx(0.0, abs=1e-15)
    c = np.array([0.0, 0.0, 0.0, 1.0, 0.0])
    expected = np.linalg.norm(model.vertex_A[3] - model.A_of(a))
    assert matrix_error(model, a, c) == pytest.approx(expected)
