import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from graphdisk.graph import (NearestList, ProximityGraph, build_graph, greedy_search, medoid,
                             reachable_from, robust_prune)
from graphdisk.vecio import brute_force_topk, compute_recall, distance, ground_truth, make_dataset


def _check_invariants(g, n):
    for u in range(n):
        a = g.adj(u).tolist()
        assert len(a) <= g.R_deg
        assert u not in a
        assert len(set(a)) == len(a)
        assert all(0 <= v < n for v in a)
    assert len(reachable_from(g, g.entry)) == n


# -- medoid -------------------------------------------------------------------

def test_medoid_single_and_symmetric():
    assert medoid(make_dataset(np.array([[1.0, 2.0]]))) == 0
    assert medoid(make_dataset(np.array([[-1.0, 3.0], [1.0, -3.0]]))) == 0


def test_medoid_matches_exhaustive_scan():
    x = np.random.default_rng(0).normal(size=(100, 6)).astype(np.float32)
    mean = x.astype(np.float64).mean(0)
    want = min(range(100), key=lambda i: (distance(x[i], mean), i))
    assert medoid(make_dataset(x)) == want


# -- nearest list -------------------------------------------------------------

@given(st.lists(st.tuples(st.integers(0, 40), st.floats(0, 10, allow_nan=False)), max_size=80),
       st.integers(1, 12))
def test_nearest_list_invariants(pairs, cap):
    lst = NearestList(cap)
    best = {}
    for i, d in pairs:
        lst.insert(i, d)
        best.setdefault(i, d)
    assert len(lst) <= cap
    assert lst.items == sorted(lst.items)
    assert len(set(lst.ids())) == len(lst)


def test_nearest_list_cursor_and_visits():
    lst = NearestList(3)
    for i, d in [(1, 0.5), (2, 0.2), (3, 0.9)]:
        lst.insert(i, d)
    assert lst.next_unvisited() == 2
    lst.mark_visited(2)
    lst.insert(4, 0.1)
    assert lst.ids() == [4, 2, 1] and lst.next_unvisited() == 4
    with pytest.raises(ValueError):
        NearestList(0)


# -- greedy search ------------------------------------------------------------

def test_greedy_single_node():
    g = ProximityGraph.from_lists([[]], R_deg=4)
    ds = make_dataset(np.zeros((1, 3), dtype=np.float32))
    _, visited = greedy_search(g, ds, [1, 1, 1], 5)
    assert visited == [0]


def test_greedy_complete_graph_is_exhaustive():
    x = np.random.default_rng(1).normal(size=(50, 5)).astype(np.float32)
    ds = make_dataset(x)
    g = ProximityGraph.from_lists([[v for v in range(50) if v != u] for u in range(50)])
    q = np.random.default_rng(2).normal(size=5)
    lst, _ = greedy_search(g, ds, q, 50)
    assert lst.ids() == [i for i, _ in brute_force_topk(ds, q, 50)]


def test_greedy_walks_the_path():
    x = np.arange(5, dtype=np.float32)[:, None]
    g = ProximityGraph.from_lists([[1], [0, 2], [1, 3], [2, 4], [3]], entry=0)
    lst, visited = greedy_search(g, make_dataset(x), [10.0], 1)
    assert visited == [0, 1, 2, 3, 4]
    assert lst.ids() == [4]


def test_greedy_visits_at_least_D(small):
    base, queries, g, _, _ = small
    for q in queries.data[:20]:
        _, visited = greedy_search(g, base, q, 40)
        assert len(set(visited)) >= 40


def test_recall_grows_with_D(small):
    base, queries, g, _, _ = small
    gt = ground_truth(base, queries, 10)
    med = []
    for D in (20, 100):
        r = [compute_recall(greedy_search(g, base, q, D)[0].ids()[:10], gt.ids[i], 10)
             for i, q in enumerate(queries.data)]
        med.append(np.median(r))
    assert med[0] <= med[1]


# -- robust prune ---------------------------------------------------------------

def _prune_oracle(x, node, cands, alpha, R):
    remaining = sorted(cands, key=lambda c: (c[1], c[0]))
    kept = []
    while remaining and len(kept) < R:
        p, _ = remaining[0]
        kept.append(p)
        nxt = []
        for q, dq in remaining[1:]:
            dpq = float(((x[p].astype(np.float64) - x[q]) ** 2).sum())
            if not alpha * dpq <= dq:
                nxt.append((q, dq))
        remaining = nxt
    return kept


def test_prune_keeps_far_apart_candidates():
    x = np.array([[0, 0], [10, 0], [0, 10], [-10, 0]], dtype=np.float32)
    ds = make_dataset(x)
    cands = [(i, distance(x[0], x[i])) for i in (1, 2, 3)]
    assert sorted(robust_prune(ds, 0, cands, 1.2, 5)) == [1, 2, 3]


def test_prune_coincident_candidates():
    x = np.array([[0, 0], [3, 4], [3, 4]], dtype=np.float32)
    ds = make_dataset(x)
    for alpha in (1.0, 1.5, 3.0):
        assert robust_prune(ds, 0, [(1, 25.0), (2, 25.0)], alpha, 4) == [1]


@pytest.mark.parametrize("seed", range(5))
def test_prune_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(21, 4)).astype(np.float32)
    ds = make_dataset(x)
    cands = [(i, distance(x[0], x[i])) for i in range(1, 21)]
    assert robust_prune(ds, 0, cands, 1.2, 8) == _prune_oracle(x, 0, cands, 1.2, 8)


# -- build --------------------------------------------------------------------

def test_three_node_build():
    x = np.array([[0, 0], [1, 0], [0, 1]], dtype=np.float32)
    g = build_graph(make_dataset(x), R_deg=2, L_build=4)
    for u in range(3):
        assert sorted(g.adj(u).tolist()) == sorted(set(range(3)) - {u})


def test_build_parameter_errors():
    ds = make_dataset(np.zeros((4, 2), dtype=np.float32))
    with pytest.raises(ValueError):
        build_graph(ds, R_deg=1, L_build=4)
    with pytest.raises(ValueError):
        build_graph(ds, R_deg=8, L_build=4)
    with pytest.raises(ValueError):
        build_graph(ds, R_deg=2, L_build=4, alpha=0.9)


@given(st.integers(2, 120), st.integers(2, 8), st.integers(0, 1000))
def test_build_invariants(n, R, seed):
    x = np.random.default_rng(seed).normal(size=(n, 3)).astype(np.float32)
    g = build_graph(make_dataset(x), R_deg=R, L_build=max(R, 10), seed=seed)
    _check_invariants(g, n)


def test_build_is_deterministic(small):
    base, _, g, _, _ = small
    again = build_graph(base, R_deg=16, L_build=48, seed=3)
    assert np.array_equal(g.neighbors, again.neighbors) and g.entry == again.entry


def test_small_build_invariants(small):
    base, _, g, _, _ = small
    _check_invariants(g, base.count)
    assert g.entry == medoid(base)


def test_uniform_10k_recall():
    rng = np.random.default_rng(7)
    ds = make_dataset(rng.random((10_000, 16), dtype=np.float32))
    qs = rng.random((100, 16), dtype=np.float32)
    g = build_graph(ds, R_deg=32, L_build=64, seed=7)
    gt = ground_truth(ds, qs, 10)
    r = np.mean([compute_recall(greedy_search(g, ds, q, 100)[0].ids()[:10], gt.ids[i], 10)
                 for i, q in enumerate(qs)])
    assert r >= 0.95


def test_graph_file_roundtrip(tmp_path, small):
    _, _, g, _, _ = small
    g.save(tmp_path / "g.bin")
    back = ProximityGraph.load(tmp_path / "g.bin")
    assert (back.R_deg, back.entry) == (g.R_deg, g.entry)
    assert all(np.array_equal(back.adj(u), g.adj(u)) for u in range(g.count))
    assert (tmp_path / "g.bin").stat().st_size == 12 + g.total_adjacency_bytes()
