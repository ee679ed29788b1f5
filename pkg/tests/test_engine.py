import numpy as np
import pytest

from graphdisk.engine import (BlockReadError, DiskIndex, PrefetchQueues, SearchParams,
                              reference_two_stage, refine_batch, search_baseline,
                              search_two_stage)
from graphdisk.engine.search import _Traversal
from graphdisk.graph import ProximityGraph
from graphdisk.layout import BlockSpec, LayoutReader, fill_R_pack, pack_neighbors, write_layout
from graphdisk.quantizer import encode, train_pq
from graphdisk.vecio import brute_force_topk, compute_recall, ground_truth, make_dataset


@pytest.fixture(scope="module")
def disk(small, tmp_path_factory):
    """The small corpus written as flat, replicated (full) and replicated (R_pack=0) layouts."""
    base, queries, g, cb, codes = small
    d = tmp_path_factory.mktemp("engine")
    R = fill_R_pack(4096, base.vector_bytes, g.R_deg)
    packed = pack_neighbors(g, base, R)
    paths = {"flat": d / "flat.bin", "rep": d / "rep.bin", "rep0": d / "rep0.bin"}
    write_layout(g, base, BlockSpec(4096, None, "flat"), None, paths["flat"])
    write_layout(g, base, BlockSpec(4096, R), packed, paths["rep"])
    write_layout(g, base, BlockSpec(4096, 0), None, paths["rep0"])
    return paths, packed


def _index(small, path, graph_cache=None, node_cache=None):
    base, _, g, cb, codes = small
    return DiskIndex(LayoutReader(path), cb, codes, g.entry, graph_cache or {}, node_cache or {})


def _params(**kw):
    kw.setdefault("use_nav", False)
    return SearchParams(**kw)


# -- parameters -----------------------------------------------------------------

def test_search_params_validation(monkeypatch):
    assert SearchParams(D=20, sigma=0.25).D_r == 5
    assert SearchParams(k=5, D=7, sigma=0.5).D_r == 4
    for bad in (dict(k=11, D=10), dict(sigma=0.0), dict(sigma=1.5), dict(beam_width=0),
                dict(io_mode="fast")):
        with pytest.raises(ValueError):
            SearchParams(**bad)
    monkeypatch.setenv("GRAPHDISK_IO_MODE", "async_deterministic")
    assert SearchParams().with_env().io_mode == "async_deterministic"


# -- expand -------------------------------------------------------------------

def _traversal(small, D):
    base, queries, g, cb, codes = small
    idx = DiskIndex(None, cb, codes, g.entry)
    return _Traversal(idx, queries.data[0].astype(np.float64), D)


def test_expand_empty_adjacency(small):
    tr = _traversal(small, 10)
    tr.seed([0, 1, 2])
    before = list(tr.L.items)
    tr.expand(0, np.array([], dtype=np.int64))
    assert tr.L.items == before


def test_expand_closer_id_becomes_head(small):
    base, queries, g, cb, codes = small
    tr = _traversal(small, 10)
    d = tr.lut[tr.m_idx, codes].sum(axis=1)
    order = np.argsort(d, kind="stable")
    tr.seed(order[50:55].tolist())
    tr.expand(int(order[50]), np.array([order[0]]))
    assert tr.L.ids()[0] == int(order[0])


def test_expand_keeps_top_of_union(small):
    base, queries, g, cb, codes = small
    tr = _traversal(small, 10)
    rng = np.random.default_rng(0)
    ids = rng.choice(base.count, 100, replace=False)
    tr.expand(-1, ids)
    d = tr.lut[tr.m_idx, codes[ids]].sum(axis=1)
    want = [int(i) for _, i in sorted(zip(d.tolist(), ids.tolist()))[:10]]
    assert tr.L.ids() == want
    # already-seen ids are skipped
    tr.expand(-2, ids[:5])
    assert tr.L.ids() == want


# -- two-stage search -----------------------------------------------------------

def test_full_graph_cache_forces_refinement_only(small, disk):
    base, queries, g, cb, codes = small
    gc = {u: g.adj(u) for u in range(g.count)}
    idx = _index(small, disk[0]["rep"], graph_cache=gc)
    p = _params(D=40, sigma=0.5)
    for q in queries.data[:10]:
        st = search_two_stage(q, p, idx).stats
        assert st.search_stage_reads == 0
        assert st.refinement_reads == p.D_r
    idx.close()


def test_full_node_cache_means_no_reads(small, disk):
    base, queries, g, cb, codes = small
    gc = {u: g.adj(u) for u in range(g.count)}
    nc = {u: base.data[u] for u in range(g.count)}
    idx = _index(small, disk[0]["rep"], graph_cache=gc, node_cache=nc)
    st = search_two_stage(queries.data[0], _params(D=40), idx).stats
    assert st.total_reads == 0 and st.node_cache_hits == 20
    idx.close()


@pytest.mark.parametrize("W", [1, 4])
def test_sigma_one_without_packing_equals_baseline(small, disk, W):
    base, queries, g, cb, codes = small
    a = _index(small, disk[0]["rep0"])
    b = _index(small, disk[0]["flat"])
    p = _params(D=40, sigma=1.0, beam_width=W)
    for q in queries.data[:25]:
        r1 = search_two_stage(q, p, a)
        r2 = search_baseline(q, p, b)
        assert set(r1.ids) == set(r2.ids)
        assert r1.stats.search_stage_reads == r2.stats.search_stage_reads
    a.close()
    b.close()


@pytest.mark.parametrize("layout", ["rep", "flat"])
def test_disk_engine_matches_in_memory_reference(small, disk, layout):
    base, queries, g, cb, codes = small
    paths, packed = disk
    rng = np.random.default_rng(1)
    cached = set(rng.choice(g.count, 500, replace=False).tolist())
    idx = _index(small, paths[layout], graph_cache={u: g.adj(u) for u in cached})
    pk = packed if layout == "rep" else None
    for sigma in (0.5, 1.0):
        p = _params(D=30, sigma=sigma, beam_width=1)
        for q in queries.data[:20]:
            got = search_two_stage(q, p, idx)
            ref = reference_two_stage(q, base, g, cb, codes, 30, sigma, 10,
                                      graph_cache=cached, packed=pk)
            assert got.ids == ref.ids
            assert got.stats.search_stage_reads == ref.search_reads
            assert got.stats.refinement_reads == ref.refinement_reads
            assert got.stats.cache_hits == ref.cache_hits
    idx.close()


def test_io_accounting_and_visit_floor(small, disk):
    base, queries, g, cb, codes = small
    idx = _index(small, disk[0]["rep"], graph_cache={u: g.adj(u) for u in range(0, g.count, 3)})
    p = _params(D=50, sigma=0.5, beam_width=4)
    for q in queries.data[:20]:
        st = search_two_stage(q, p, idx).stats
        assert st.search_stage_reads == st.visited - st.cache_hits - st.packed_hits
        assert st.refinement_reads <= p.D_r
        assert st.visited >= p.D
        assert min(st.as_dict().values()) >= 0
    idx.close()


def test_refinement_monotone_in_sigma(small, disk):
    base, queries, g, cb, codes = small
    gt = ground_truth(base, queries, 10)
    idx = _index(small, disk[0]["rep"], graph_cache={u: g.adj(u) for u in range(g.count)})
    for i, q in enumerate(queries.data[:30]):
        rec = [compute_recall(search_two_stage(q, _params(D=40, sigma=s), idx).ids, gt.ids[i], 10)
               for s in (0.25, 0.5, 1.0)]
        assert rec == sorted(rec)
    idx.close()


def test_determinism_across_io_modes(small, disk):
    base, queries, g, cb, codes = small
    idx = _index(small, disk[0]["rep"], graph_cache={u: g.adj(u) for u in range(0, g.count, 4)})
    for q in queries.data[:30]:
        runs = [search_two_stage(q, _params(D=40, beam_width=4, io_mode=m), idx)
                for m in ("sync", "async_deterministic", "sync")]
        for r in runs[1:]:
            assert r.ids == runs[0].ids and r.dists == runs[0].dists
            assert r.stats == runs[0].stats
    idx.close()


def test_async_recall_close_to_sync(small, disk):
    base, queries, g, cb, codes = small
    gt = ground_truth(base, queries, 10)
    idx = _index(small, disk[0]["rep"])
    rec = {}
    for m in ("sync", "async"):
        p = _params(D=40, beam_width=8, io_mode=m)
        rec[m] = np.mean([compute_recall(search_two_stage(q, p, idx).ids, gt.ids[i], 10)
                          for i, q in enumerate(queries.data)])
    assert abs(rec["sync"] - rec["async"]) <= 0.01
    idx.close()


def test_small_sigma_pads_with_approximate_order(small, disk):
    base, queries, g, cb, codes = small
    idx = _index(small, disk[0]["rep"], graph_cache={u: g.adj(u) for u in range(g.count)})
    r = search_two_stage(queries.data[0], _params(D=20, sigma=0.25), idx)
    assert len(r.ids) == 10 and len(set(r.ids)) == 10
    assert r.stats.refinement_reads == 5
    idx.close()


# -- baseline -----------------------------------------------------------------

def test_baseline_exhaustive_on_complete_graph(tmp_path):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(150, 16)).astype(np.float32)
    ds = make_dataset(x)
    g = ProximityGraph.from_lists([[v for v in range(150) if v != u] for u in range(150)])
    write_layout(g, ds, BlockSpec(4096, None, "flat"), None, tmp_path / "f.bin")
    cb = train_pq(ds, 4, 16, 5)
    idx = DiskIndex(LayoutReader(tmp_path / "f.bin"), cb, encode(cb, ds), 0)
    for q in rng.normal(size=(5, 16)):
        r = search_baseline(q, _params(D=150, beam_width=2), idx)
        want = brute_force_topk(ds, q, 10)
        assert r.ids == [i for i, _ in want]
        np.testing.assert_allclose(r.dists, [d for _, d in want], rtol=1e-9)
    idx.close()


def test_baseline_node_cache_and_repeatability(small, disk):
    base, queries, g, cb, codes = small
    idx = _index(small, disk[0]["flat"])
    nc = {u: (base.data[u], g.adj(u)) for u in range(g.count)}
    p = _params(D=40)
    st = search_baseline(queries.data[1], p, idx, node_cache=nc).stats
    assert st.total_reads == 0 and st.cache_hits == st.visited
    a = search_baseline(queries.data[2], p, idx)
    b = search_baseline(queries.data[2], p, idx)
    assert a.ids == b.ids and a.dists == b.dists and a.stats == b.stats
    idx.close()


# -- prefetch and refinement IO -------------------------------------------------

def test_refine_batch_reads(small, disk):
    base = small[0]
    with LayoutReader(disk[0]["rep"]) as r:
        assert refine_batch([], r) == {} and r.reads == 0
        ids = list(range(100, 150))
        got = refine_batch(ids, r)
        assert r.reads == 50
        assert all(np.array_equal(got[u], base.data[u]) for u in ids)


def test_refine_batch_async_matches_sync(small, disk):
    from concurrent.futures import ThreadPoolExecutor
    base = small[0]
    seen = []
    with LayoutReader(disk[0]["flat"]) as r, ThreadPoolExecutor(4) as ex:
        got = refine_batch(list(range(0, 300, 6)), r, "async", ex,
                           on_vector=lambda u, v: seen.append(u))
        assert sorted(seen) == list(range(0, 300, 6)) and r.reads == 50
        assert all(np.array_equal(v, base.data[u]) for u, v in got.items())


class _FailingReader:
    def __init__(self, inner, bad):
        self.inner = inner
        self.bad = bad

    def read_raw(self, node):
        if node == self.bad:
            raise OSError(5, "Input/output error")
        return self.inner.read_raw(node)

    def __getattr__(self, name):
        return getattr(self.inner, name)


@pytest.mark.parametrize("mode", ["sync", "async_deterministic"])
def test_io_error_surfaces_with_context(small, disk, mode):
    base, queries, g, cb, codes = small
    inner = LayoutReader(disk[0]["rep"])
    idx = DiskIndex(_FailingReader(inner, g.entry), cb, codes, g.entry)
    with pytest.raises(BlockReadError, match=f"node {g.entry}"):
        search_two_stage(queries.data[0], _params(io_mode=mode), idx)
    idx.close()


def test_prefetch_queue_order(small, disk):
    from concurrent.futures import ThreadPoolExecutor
    with LayoutReader(disk[0]["rep"]) as r, ThreadPoolExecutor(4) as ex:
        q = PrefetchQueues(r, "async_deterministic", ex)
        for u in (9, 3, 7):
            q.submit(u)
        assert len(q) == 3
        assert [q.next_ready()[0] for _ in range(3)] == [9, 3, 7]
        assert len(q) == 0
        with pytest.raises(IndexError):
            q.next_ready()
    with pytest.raises(ValueError):
        PrefetchQueues(None, "async")
