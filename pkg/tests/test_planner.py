import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from graphdisk.planner import (MemoryPlan, adjacency_cache_wins, build_nav_index, expected_reads,
                               io_reduction, memory_cache_wins, plan_memory, rank_nodes,
                               replicated_block_wins, select_graph_cache)
from graphdisk.quantizer import pq_memory_bytes
from graphdisk.vecio import distance

unit = st.floats(0, 1, allow_nan=False)
inner = st.floats(0.01, 0.99, allow_nan=False)
size = st.floats(1, 1e5, allow_nan=False)


# -- analytical models ----------------------------------------------------------

def test_io_reduction_examples():
    assert io_reduction(0, 0.5) == 0
    assert io_reduction(1, 1) == 0
    assert io_reduction(0.88, 0.5) == pytest.approx(0.44)
    for bad in ((-0.1, 0.5), (1.1, 0.5), (0.5, 1.5)):
        with pytest.raises(ValueError):
            io_reduction(*bad)


@given(unit, unit, unit)
def test_io_reduction_monotone(b1, b2, s):
    lo, hi = sorted((b1, b2))
    assert io_reduction(lo, s) <= io_reduction(hi, s)
    assert io_reduction(s, hi) <= io_reduction(s, lo)


@given(st.floats(1, 1000, allow_nan=False), unit, unit)
def test_expected_reads_consistent_with_reduction(D, beta, sigma):
    assert (D - expected_reads(D, beta, sigma)) / D == pytest.approx(io_reduction(beta, sigma),
                                                                      abs=1e-9)


def test_adjacency_cache_examples():
    assert adjacency_cache_wins(1536, 200, 0.5) is True
    assert adjacency_cache_wins(100, 100, 0.5) is False
    assert adjacency_cache_wins(100, 100, 0.4) is True
    for s in (0.0, 1.0):
        with pytest.raises(ValueError):
            adjacency_cache_wins(100, 50, s)
    with pytest.raises(ValueError):
        adjacency_cache_wins(0, 50, 0.5)


@given(size, size)
def test_half_sigma_reduces_to_size_comparison(S_v, S_a):
    assert adjacency_cache_wins(S_v, S_a, 0.5) == (S_a < S_v)


@given(size, size, inner, st.floats(1e3, 1e9), st.floats(1e3, 1e7))
def test_unreduced_cache_comparison_agrees(S_v, S_a, sigma, C, N):
    lhs = memory_cache_wins(C, N, S_v, S_a, sigma)
    rhs = adjacency_cache_wins(S_v, S_a, sigma)
    margin = abs(S_a - (1 - sigma) / sigma * S_v) / max(S_a, S_v)
    if margin > 1e-9:
        assert lhs == rhs


@given(size, size, inner, st.floats(0.1, 1.0))
def test_unreduced_block_comparison_agrees(S_v, S_a, sigma, theta):
    B = S_v + S_a + 4096
    margin = abs(S_a - (1 - sigma) / sigma * S_v) / max(S_a, S_v)
    if margin > 1e-9:
        assert replicated_block_wins(B, S_v, S_a, sigma, theta) == adjacency_cache_wins(S_v, S_a, sigma)


# -- cache selection ------------------------------------------------------------

def test_select_graph_cache_edge_budgets(small):
    base, _, g, _, _ = small
    assert select_graph_cache(g, base, None, 0) == set()
    assert select_graph_cache(g, base, None, g.total_adjacency_bytes()) == set(range(g.count))


def test_select_graph_cache_matches_oracle(small):
    base, _, g, _, _ = small
    sub = base.data[:1000]
    from graphdisk.graph import build_graph
    from graphdisk.vecio import make_dataset
    ds = make_dataset(sub)
    g1 = build_graph(ds, R_deg=8, L_build=24, seed=0)
    nav = build_nav_index(ds, 0.01, seed=4)
    assert nav.sample.count == 10
    sizes = 2 + 4 * g1.degrees
    budget = int(sorted(sizes)[len(sizes) // 2] * 100)
    got = select_graph_cache(g1, ds, nav, budget)
    key = [(min(distance(sub[u], sub[a]) for a in nav.id_map), u) for u in range(1000)]
    order = [u for _, u in sorted(key)]
    want, used = set(), 0
    for u in order:
        if used + sizes[u] > budget:
            break
        want.add(u)
        used += sizes[u]
    assert got == want


def test_rank_nodes_puts_anchors_first(small):
    base = small[0]
    r = rank_nodes(base, [17, 4])
    assert sorted(r[:2].tolist()) == [4, 17]
    assert sorted(r.tolist()) == list(range(base.count))


# -- plan ---------------------------------------------------------------------

def test_plan_budget_equal_to_pq_bytes(small):
    base, queries, g, cb, codes = small
    budget = pq_memory_bytes(base.count, 8, 256, base.dims)
    p = plan_memory(base, queries.data[:10], budget, g, M=8)
    assert not p.nav_enabled and p.n_graph_cache == 0 and p.n_node_cache == 0
    assert p.used_bytes == budget


def test_plan_infeasible_budget(small):
    base, queries, g, _, _ = small
    with pytest.raises(ValueError):
        plan_memory(base, queries.data[:10], 1000, g)
    with pytest.raises(ValueError):
        plan_memory(base, queries.data[:10], 1000, g, M=8)


def test_plan_large_budget_caches_whole_graph(small):
    base, queries, g, cb, codes = small
    budget = (pq_memory_bytes(base.count, 8, 256, base.dims) + 50_000
              + g.total_adjacency_bytes() + 300 * base.vector_bytes)
    p = plan_memory(base, queries.data[:20], budget, g, M=8, codebook=cb, codes=codes)
    assert p.n_graph_cache == base.count
    assert p.n_node_cache > 0
    assert p.used_bytes <= budget
    assert set(p.node_cache_ids.tolist()) <= set(p.graph_cache_ids.tolist())


def test_plan_is_deterministic_and_roundtrips(small, tmp_path):
    base, queries, g, cb, codes = small
    budget = pq_memory_bytes(base.count, 8, 256, base.dims) + 40_000
    a = plan_memory(base, queries.data[:20], budget, g, candidate_Ms=[4, 8], seed=2)
    b = plan_memory(base, queries.data[:20], budget, g, candidate_Ms=[4, 8], seed=2)
    assert a.header() == b.header() and np.array_equal(a.rank, b.rank)
    assert a.used_bytes <= budget and a.M in (4, 8)
    assert 0 < a.n_graph_cache < base.count and a.n_node_cache == 0
    a.save(tmp_path / "plan.bin")
    back = MemoryPlan.load(tmp_path / "plan.bin")
    assert back.header() == a.header()
    assert np.array_equal(back.graph_cache_ids, a.graph_cache_ids)
    (tmp_path / "bad.bin").write_bytes(b"nope" * 8)
    with pytest.raises(ValueError):
        MemoryPlan.load(tmp_path / "bad.bin")


def test_nav_index(small):
    base, queries, _, _, _ = small
    nav = build_nav_index(base, 0.01, seed=1)
    assert nav.sample.count == 20
    assert np.array_equal(nav.sample.data, base.data[nav.id_map])
    ids, hops = nav.search(queries.data[0], 5)
    assert len(ids) == 5 and set(ids) <= set(nav.id_map.tolist()) and hops >= 1
    assert nav.nbytes() > nav.sample.count * base.vector_bytes
