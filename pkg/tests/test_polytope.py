import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iampc.polytope import (
    EmptySetError,
    Polytope,
    RowCapError,
    box,
    chebyshev_center,
    eliminate,
    intersect,
    is_equal,
    is_subset,
    lift,
    preimage_linear,
    remove_redundant,
    support_points,
    circle_directions,
)
from oracles import lp_feasible_point


def test_rows_are_normalized_and_zero_rows_handled():
    P = Polytope([[2.0, 0.0], [0.0, 0.0], [0.0, -3.0]], [4.0, 1.0, 3.0])
    assert P.n_rows == 2
    np.testing.assert_allclose(P.A, [[1, 0], [0, -1]])
    np.testing.assert_allclose(P.b, [2, 1])
    E = Polytope([[0.0, 0.0]], [-1.0])
    assert E.is_empty()


def test_arrays_are_read_only():
    P = box([-1, -1], [1, 1])
    with pytest.raises(ValueError):
        P.A[0, 0] = 5.0


def test_shape_errors():
    with pytest.raises(ValueError):
        Polytope([[1.0, 0.0]], [1.0, 2.0])
    with pytest.raises(ValueError):
        Polytope([[np.inf, 0.0]], [1.0])


def test_chebyshev_of_box():
    c, r = chebyshev_center(box([0, 0], [2, 4]))
    assert r == pytest.approx(1.0)
    assert c[0] == pytest.approx(1.0)


def test_unbounded_chebyshev_raises():
    with pytest.raises(ValueError):
        Polytope([[1.0, 0.0]], [1.0]).chebyshev()


def test_subset_and_equality():
    small, big = box([-1, -1], [1, 1]), box([-2, -2], [2, 2])
    assert is_subset(small, big)
    assert not is_subset(big, small)
    redundant = Polytope(np.vstack([big.A, [[1.0, 1.0]]]), np.append(big.b, 10.0))
    assert is_equal(big, redundant)
    empty = Polytope([[1.0, 0.0], [-1.0, 0.0]], [-1.0, -1.0])
    assert is_subset(empty, small)


def test_remove_redundant_drops_only_redundant_rows():
    B = box([-1, -1], [1, 1])
    P = Polytope(np.vstack([B.A, [[1.0, 1.0]], [[1.0, 0.0]]]), np.append(B.b, [5.0, 3.0]))
    R = remove_redundant(P)
    assert R.n_rows == 4
    assert is_equal(R, B)


def test_support_points_of_square_are_vertices():
    pts = support_points(box([-1, -1], [1, 1]), [[1, 1], [-1, 1]])
    np.testing.assert_allclose(pts[0], [1, 1], atol=1e-9)
    np.testing.assert_allclose(pts[1], [-1, 1], atol=1e-9)


def test_support_points_zero_direction_warns():
    with pytest.warns(UserWarning):
        pts = support_points(box([-1, -1], [1, 1]), [[0.0, 0.0]])
    np.testing.assert_allclose(pts[0], [0, 0], atol=1e-9)


def test_preimage_and_lift():
    B = box([-1], [1])
    P = preimage_linear(B, [[1.0, 1.0]])
    assert P.contains([0.5, 0.5]) and not P.contains([1.0, 0.5])
    L = lift([(B, [[1.0, 0.0]]), (B, [[0.0, 2.0]])], 2)
    assert is_equal(L, box([-1, -0.5], [1, 0.5]))


def test_eliminate_simplex_projection():
    # {(x, y): x >= 0, y >= 0, x + y <= 1} projected on x is [0, 1]
    P = Polytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])
    Q = eliminate(P, [1])
    assert is_equal(Q, box([0], [1]))


def test_eliminate_row_cap():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((80, 3))
    with pytest.raises(RowCapError):
        eliminate(Polytope(A, np.ones(80)), [2], row_cap=10)


def test_eliminate_matches_pointwise_lp():
    """Projection of a random 4-D polytope on 2 coordinates vs. per-point LP feasibility."""
    rng = np.random.default_rng(7)
    B = box([-2] * 4, [2] * 4)
    A = np.vstack([rng.standard_normal((14, 4)), B.A])
    P = Polytope(A, np.concatenate([rng.uniform(0.5, 1.5, 14), B.b]))
    Q = eliminate(P, [2, 3])
    pts = rng.uniform(-3, 3, (1000, 2))
    agree = [Q.contains(p, 1e-9) == lp_feasible_point(P.A, P.b, p, [2, 3]) for p in pts]
    assert all(agree)


def test_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    P = Polytope(rng.standard_normal((6, 3)), rng.uniform(1, 2, 6))
    path = tmp_path / "p.json"
    P.save(path)
    Q = Polytope.load(path)
    assert np.array_equal(P.A, Q.A) and np.array_equal(P.b, Q.b)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_intersection_contains_only_common_points(seed):
    rng = np.random.default_rng(seed)
    P = Polytope(rng.standard_normal((6, 2)), rng.uniform(0.5, 1.5, 6))
    Q = Polytope(rng.standard_normal((6, 2)), rng.uniform(0.5, 1.5, 6))
    R = intersect(P, Q)
    for x in rng.uniform(-2, 2, (50, 2)):
        assert R.contains(x, 1e-9) == (P.contains(x, 1e-9) and Q.contains(x, 1e-9))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_support_points_are_maximizers(seed):
    rng = np.random.default_rng(seed)
    P = intersect(Polytope(rng.standard_normal((8, 2)), rng.uniform(0.5, 1.5, 8)),
                  box([-2.5, -2.5], [2.5, 2.5]))
    D = circle_directions(12)
    samples = rng.uniform(-3, 3, (400, 2))
    inside = samples[[P.contains(s) for s in samples]]
    for d, p in zip(D, support_points(P, D)):
        assert P.contains(p, 1e-8)
        if inside.size:
            assert d @ p >= np.max(inside @ d) - 1e-9
