import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from graphdisk.graph import build_graph
from graphdisk.quantizer import (PQCodebook, approx_dist, approx_dists, build_lut, d_ladder,
                                 decode, default_candidates, encode, io_proxy, load_codes,
                                 measure_candidates, pick_compression_ratio, pq_memory_bytes,
                                 reconstruction_mse, sample_fraction, save_codes, subspace_bounds,
                                 train_pq)
from graphdisk.quantizer.ratio import compression_ratio
from graphdisk.synth import clustered
from graphdisk.vecio import VectorDataset, distance, ground_truth, make_dataset


def test_subspace_bounds_remainder():
    assert subspace_bounds(10, 3).tolist() == [0, 3, 6, 10]
    assert sum(np.diff(subspace_bounds(128, 7))) == 128
    with pytest.raises(ValueError):
        subspace_bounds(4, 5)


def test_k_distinct_vectors_are_the_centroids():
    x = np.random.default_rng(0).normal(size=(16, 3)).astype(np.float32)
    cb = train_pq(make_dataset(x), 1, 16, iters=10, seed=0)
    got = cb.centroids[0][np.lexsort(cb.centroids[0].T[::-1])]
    want = x[np.lexsort(x.T[::-1])]
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_single_centroid_is_the_mean():
    x = np.random.default_rng(1).normal(size=(40, 5)).astype(np.float32)
    cb = train_pq(make_dataset(x), 5, 1, iters=3)
    np.testing.assert_allclose(np.concatenate([c[0] for c in cb.centroids]), x.mean(0), atol=1e-5)


def test_training_is_deterministic():
    x = np.random.default_rng(2).normal(size=(300, 8)).astype(np.float32)
    a = train_pq(make_dataset(x), 4, 16, 5, seed=7)
    b = train_pq(make_dataset(x), 4, 16, 5, seed=7)
    assert all(np.array_equal(p, q) for p, q in zip(a.centroids, b.centroids))


def test_train_errors():
    ds = make_dataset(np.ones((10, 4), dtype=np.float32))
    with pytest.raises(ValueError):
        train_pq(ds, 2, 11)
    with pytest.raises(ValueError):
        train_pq(ds, 5, 4)


@pytest.fixture(scope="module")
def cb16():
    x = np.random.default_rng(3).normal(size=(600, 16)).astype(np.float32)
    return train_pq(make_dataset(x), 4, 32, 8, seed=3), x


def test_encode_matches_exhaustive_scan(cb16):
    cb, _ = cb16
    v = np.random.default_rng(4).normal(size=16).astype(np.float32)
    code = encode(cb, v[None, :])[0]
    for m, (lo, hi) in enumerate(zip(cb.bounds[:-1], cb.bounds[1:])):
        best, arg = np.inf, -1
        for j, c in enumerate(cb.centroids[m]):
            d = float(((v[lo:hi].astype(np.float64) - c) ** 2).sum())
            if d < best:
                best, arg = d, j
        assert code[m] == arg


def test_centroid_aligned_vector(cb16):
    cb, _ = cb16
    j = 5
    v = np.concatenate([c[j] for c in cb.centroids])
    code = encode(cb, v[None, :])[0]
    assert code.tolist() == [j] * cb.M
    np.testing.assert_array_equal(decode(cb, code)[0], v)


def test_encode_dims_mismatch(cb16):
    with pytest.raises(ValueError):
        encode(cb16[0], np.zeros((1, 15), dtype=np.float32))


def test_encode_idempotent(cb16):
    cb, x = cb16
    c = encode(cb, x[:50])
    assert np.array_equal(encode(cb, decode(cb, c)), c)


@pytest.mark.parametrize("metric", ["L2", "IP"])
def test_approx_dist_is_decode_then_distance(metric):
    rng = np.random.default_rng(5)
    x = rng.normal(size=(500, 12)).astype(np.float32)
    ds = make_dataset(x, metric)
    cb = train_pq(ds, 3, 64, 6, seed=5)
    codes = encode(cb, ds)
    rec = decode(cb, codes)
    for _ in range(50):
        q = rng.normal(size=12).astype(np.float32)
        lut = build_lut(cb, q)
        i = int(rng.integers(500))
        want = distance(q, rec[i], metric)
        assert approx_dist(codes, lut, i) == pytest.approx(want, rel=1e-4, abs=1e-9)
        if metric == "IP":
            assert want == pytest.approx(-float(q.astype(np.float64) @ rec[i]), rel=1e-9)
    lut = build_lut(cb, rec[9])
    if metric == "L2":
        assert approx_dist(codes, lut, 9) == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(approx_dists(codes, lut, [1, 2]),
                               [approx_dist(codes, lut, 1), approx_dist(codes, lut, 2)])
    with pytest.raises(IndexError):
        approx_dist(codes, lut, 500)


def test_reconstruction_error_non_increasing_in_M():
    x = np.random.default_rng(6).normal(size=(512, 16)).astype(np.float32)
    ds = make_dataset(x)
    errs = [reconstruction_mse(train_pq(ds, M, 32, 8, seed=1), ds) for M in (1, 2, 4, 8, 16)]
    assert all(a >= b - 1e-9 for a, b in zip(errs, errs[1:]))


def test_codebook_and_codes_roundtrip(tmp_path, cb16):
    cb, x = cb16
    cb.save(tmp_path / "cb.bin")
    back = PQCodebook.load(tmp_path / "cb.bin")
    assert (back.M, back.K, back.dims, back.metric) == (cb.M, cb.K, cb.dims, cb.metric)
    assert all(np.array_equal(a, b) for a, b in zip(back.centroids, cb.centroids))
    codes = encode(cb, x)
    save_codes(codes, tmp_path / "codes.bin")
    assert (tmp_path / "codes.bin").stat().st_size == x.shape[0] * cb.M
    assert np.array_equal(load_codes(tmp_path / "codes.bin", cb.M, cb.K), codes)


def test_memory_and_ratio_helpers():
    assert pq_memory_bytes(1000, 16, 256, 128) == 16000 + 4 * 256 * 128
    assert compression_ratio(128, 4, 32) == 16
    assert default_candidates(128) == [4, 8, 16, 32]
    assert default_candidates(100) == [2, 5, 10, 25]
    assert d_ladder(10, 40)[0] == 10 and d_ladder(10, 40)[-1] == 40
    assert sample_fraction(100_000) == 0.01
    assert sample_fraction(3000) == pytest.approx(1000 / 3000)
    assert sample_fraction(500) == 1.0


@given(st.integers(1, 64).flatmap(lambda M: st.tuples(st.just(M), st.integers(M, 256))))
def test_default_candidates_divide_dims(pair):
    _, dims = pair
    for c in default_candidates(dims):
        assert dims % c == 0 and 1 <= c <= dims


# -- compression-ratio choice -------------------------------------------------

@pytest.fixture(scope="module")
def ratio_case():
    base, queries = clustered(1500, 32, 30, clusters=12, latent=16, spread=0.6, seed=11)
    return base, queries


def test_single_candidate_that_fits(ratio_case):
    base, q = ratio_case
    budget = pq_memory_bytes(1500, 8, 256, 32)
    assert pick_compression_ratio(base, q.data, [8, 16], budget) == 8


def test_budget_too_small(ratio_case):
    base, q = ratio_case
    with pytest.raises(ValueError, match="cannot hold"):
        pick_compression_ratio(base, q.data, [4, 8], budget_bytes=100)


def test_pick_is_argmin_of_measured_proxy(ratio_case):
    base, q = ratio_case
    cands = [1, 4, 16]
    g = build_graph(base, 16, 40, seed=0)
    picked, points = pick_compression_ratio(base, q.data, cands, graph=g, return_points=True)
    again = measure_candidates(base, q.data, cands, graph=g)
    assert [(p.M, p.reads) for p in points] == [(p.M, p.reads) for p in again]
    assert picked == min(again, key=lambda p: (p.reads, p.M)).M
    # the coarsest codes need far more reads than the finer ones
    reads = {p.M: p.reads for p in again}
    assert reads[1] > reads[16]


def test_io_proxy_reads_at_recall(ratio_case):
    base, q = ratio_case
    g = build_graph(base, 16, 40, seed=0)
    cb = train_pq(base, 8, 256, 5, seed=0)
    codes = encode(cb, base)
    gt = ground_truth(base, q.data, 10)
    p = io_proxy(base, g, cb, codes, q.data, gt, 10, 0.8)
    assert p.recall >= 0.8 and p.reads >= p.D
    assert isinstance(base, VectorDataset)
