import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ghosteval.errors import EmptyInput
from ghosteval.spatial import SubmapIndex, build, radius_search


def brute_radius(pts, c, r):
    d = np.sqrt(((pts - c) ** 2).sum(axis=1))
    idx = np.flatnonzero(d <= r)
    return idx[np.lexsort((idx, d[idx]))], d


def test_single_point():
    idx = build([[1.0, 2.0, 3.0]])
    assert len(idx) == 1
    i, d = radius_search(idx, [1, 2, 3], 0.01)
    assert i.tolist() == [0] and d.tolist() == [0.0]


def test_cube_corners():
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    i, d = build(corners).radius_search([0.5, 0.5, 0.5], 1.0)
    assert sorted(i.tolist()) == list(range(8))
    assert np.allclose(d, np.sqrt(0.75))
    assert i.tolist() == list(range(8))  # equal distances keep insertion order


def test_boundary_inclusive():
    idx = build([[0, 0, 0], [1, 0, 0]])
    assert idx.radius_search([0, 0, 0], 0.5)[0].tolist() == [0]
    assert idx.radius_search([0, 0, 0], 1.0)[0].tolist() == [0, 1]


def test_empty_input():
    with pytest.raises(EmptyInput):
        build(np.zeros((0, 3)))


def test_non_positive_radius():
    with pytest.raises(ValueError):
        build([[0, 0, 0]]).radius_search([0, 0, 0], 0.0)


@pytest.mark.parametrize("n,queries", [(500, 50), (1000, 100), (20000, 100)])
def test_matches_linear_scan(rng, n, queries):
    pts = rng.uniform(-10, 10, (n, 3))
    idx = build(pts)
    for c in rng.uniform(-11, 11, (queries, 3)):
        r = rng.uniform(0.1, 4.0)
        got, dist = idx.radius_search(c, r)
        want, d = brute_radius(pts, c, r)
        assert got.tolist() == want.tolist()
        assert np.array_equal(dist, d[want])


def test_duplicate_points_and_degenerate_spread():
    pts = np.zeros((100, 3))
    pts[50:] = [1, 1, 1]
    i, _ = build(pts).radius_search([0, 0, 0], 0.1)
    assert i.tolist() == list(range(50))


def test_batch_csr_matches_single(rng):
    pts = rng.normal(size=(3000, 3))
    idx = build(pts)
    centres = rng.normal(size=(40, 3))
    off, ii, dd = idx.radius_search_batch(centres, 0.5)
    for k, c in enumerate(centres):
        i1, d1 = idx.radius_search(c, 0.5)
        assert ii[off[k]:off[k + 1]].tolist() == i1.tolist()
        assert np.array_equal(dd[off[k]:off[k + 1]], d1)


def test_active_mask_hides_points(rng):
    pts = rng.uniform(-1, 1, (2000, 3))
    active = rng.random(2000) < 0.3
    full = build(pts)
    view = full.restrict(active)
    assert len(view) == active.sum()
    assert view.tree is full.tree
    for c in rng.uniform(-1, 1, (30, 3)):
        got, _ = view.radius_search(c, 0.4)
        want, _ = brute_radius(pts, c, 0.4)
        assert got.tolist() == [w for w in want.tolist() if active[w]]


def test_knn_matches_sort(rng):
    pts = rng.normal(size=(5000, 3))
    idx = build(pts)
    for c in rng.normal(size=(20, 3)):
        got, dist = idx.knn(c, 7)
        d = np.sqrt(((pts - c) ** 2).sum(axis=1))
        want = np.lexsort((np.arange(len(d)), d))[:7]
        assert got.tolist() == want.tolist()
        assert np.allclose(dist, d[want])
    assert len(build(pts[:3]).knn([0, 0, 0], 10)[0]) == 3


def test_deterministic_build(rng):
    pts = rng.normal(size=(1000, 3))
    a, b = build(pts), build(pts)
    for x, y in zip(a.tree, b.tree):
        assert np.array_equal(x, y)


points = st.lists(st.tuples(*[st.floats(-5, 5, allow_nan=False)] * 3), min_size=1, max_size=200)


@given(points, st.tuples(*[st.floats(-6, 6)] * 3), st.floats(0.01, 3), st.floats(0.01, 3))
def test_radius_monotone_and_exact(pts, c, r1, r2):
    pts = np.array(pts)
    idx = build(pts)
    lo, hi = sorted((r1, r2))
    a = set(idx.radius_search(c, lo)[0].tolist())
    b = idx.radius_search(c, hi)[0]
    assert a <= set(b.tolist())
    assert b.tolist() == brute_radius(pts, np.array(c), hi)[0].tolist()


@given(points)
def test_every_point_finds_itself(pts):
    pts = np.array(pts)
    idx = build(pts)
    for k, p in enumerate(pts[:20]):
        assert k in idx.radius_search(p, 1e-9)[0]
