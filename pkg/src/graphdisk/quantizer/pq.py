"""Product quantization: per-subspace k-means codebooks, codes and lookup tables."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..vecio import METRIC_CODES, VectorDataset

_HEADER = struct.Struct("<IIIB")


def subspace_bounds(dims: int, M: int) -> np.ndarray:
    """Offsets of the M subspaces; the last one absorbs the remainder."""
    if M < 1 or M > dims:
        raise ValueError(f"M={M} must be in [1, dims={dims}]")
    sub = dims // M
    bounds = np.arange(M + 1) * sub
    bounds[-1] = dims
    return bounds


@dataclass(eq=False)
class PQCodebook:
    M: int
    K: int
    dims: int
    metric: str
    centroids: list  # M arrays of shape (K, sub_dims_m), float32

    @property
    def bounds(self) -> np.ndarray:
        return subspace_bounds(self.dims, self.M)

    @property
    def sub_dims(self) -> list:
        return np.diff(self.bounds).tolist()

    @property
    def code_dtype(self):
        return np.uint8 if self.K <= 256 else np.uint16

    def nbytes(self) -> int:
        return sum(c.nbytes for c in self.centroids)

    def compression_ratio(self, scalar_size: int = 4) -> float:
        return self.dims * scalar_size / (self.M * np.dtype(self.code_dtype).itemsize)

    def save(self, path):
        with open(path, "wb") as f:
            f.write(_HEADER.pack(self.M, self.K, self.dims, METRIC_CODES[self.metric]))
            for c in self.centroids:
                f.write(np.ascontiguousarray(c, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            raw = f.read()
        M, K, dims, mcode = _HEADER.unpack_from(raw)
        metric = {v: k for k, v in METRIC_CODES.items()}[mcode]
        bounds = subspace_bounds(dims, M)
        expected = _HEADER.size + 4 * K * dims
        if len(raw) != expected:
            raise ValueError(f"{path}: codebook size {len(raw)} != {expected}")
        flat = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
        cents, pos = [], 0
        for m in range(M):
            sd = int(bounds[m + 1] - bounds[m])
            cents.append(flat[pos:pos + K * sd].reshape(K, sd).astype(np.float32))
            pos += K * sd
        return cls(M, K, dims, metric, cents)


def _kmeans(x: np.ndarray, K: int, iters: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    # k-means++ seeding
    cent = np.empty((K, x.shape[1]), dtype=np.float64)
    cent[0] = x[rng.integers(n)]
    closest = ((x - cent[0]) ** 2).sum(1)
    for c in range(1, K):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        cent[c] = x[idx]
        np.minimum(closest, ((x - cent[c]) ** 2).sum(1), out=closest)
    for _ in range(iters):
        assign = _assign(x, cent)
        sums = np.zeros_like(cent)
        np.add.at(sums, assign, x)
        counts = np.bincount(assign, minlength=K)
        nonempty = counts > 0
        new = cent.copy()
        new[nonempty] = sums[nonempty] / counts[nonempty, None]
        if np.array_equal(new, cent):
            break
        cent = new
    return cent


def _assign(x: np.ndarray, cent: np.ndarray, chunk: int = 4096) -> np.ndarray:
    out = np.empty(x.shape[0], dtype=np.int64)
    for s in range(0, x.shape[0], chunk):
        diff = x[s:s + chunk, None, :] - cent[None, :, :]
        out[s:s + chunk] = np.argmin(np.einsum("ijk,ijk->ij", diff, diff), axis=1)
    return out


def train_pq(sample: VectorDataset, M: int, K: int = 256, iters: int = 20, seed: int = 0) -> PQCodebook:
    """Train one k-means codebook per subspace (k-means++ seeding, then Lloyd)."""
    if M > sample.dims:
        raise ValueError(f"M={M} exceeds dims={sample.dims}")
    if K > sample.count:
        raise ValueError(f"K={K} exceeds sample size {sample.count}")
    if K < 1 or M < 1:
        raise ValueError("M and K must be positive")
    bounds = subspace_bounds(sample.dims, M)
    x = sample.data.astype(np.float64)
    rng = np.random.default_rng(seed)
    cents = []
    for m in range(M):
        sub = x[:, bounds[m]:bounds[m + 1]]
        cents.append(_kmeans(sub, K, iters, rng).astype(np.float32))
    return PQCodebook(M, K, sample.dims, sample.metric, cents)


def encode(cb: PQCodebook, ds) -> np.ndarray:
    """PQ codes, one centroid index per subspace; ties go to the smaller index."""
    data = ds.data if isinstance(ds, VectorDataset) else np.atleast_2d(np.asarray(ds))
    if data.shape[1] != cb.dims:
        raise ValueError(f"data has {data.shape[1]} dims, codebook expects {cb.dims}")
    x = data.astype(np.float64)
    bounds = cb.bounds
    codes = np.empty((x.shape[0], cb.M), dtype=cb.code_dtype)
    for m in range(cb.M):
        codes[:, m] = _assign(x[:, bounds[m]:bounds[m + 1]], cb.centroids[m].astype(np.float64))
    return codes


def decode(cb: PQCodebook, codes: np.ndarray) -> np.ndarray:
    codes = np.atleast_2d(codes)
    out = np.empty((codes.shape[0], cb.dims), dtype=np.float32)
    bounds = cb.bounds
    for m in range(cb.M):
        out[:, bounds[m]:bounds[m + 1]] = cb.centroids[m][codes[:, m]]
    return out


def build_lut(cb: PQCodebook, query) -> np.ndarray:
    """M x K table of per-subspace partial distances for one query."""
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.shape[0] != cb.dims:
        raise ValueError(f"query has {q.shape[0]} dims, codebook expects {cb.dims}")
    bounds = cb.bounds
    lut = np.empty((cb.M, cb.K), dtype=np.float64)
    for m in range(cb.M):
        c = cb.centroids[m].astype(np.float64)
        qs = q[bounds[m]:bounds[m + 1]]
        if cb.metric == "L2":
            diff = c - qs
            lut[m] = np.einsum("ij,ij->i", diff, diff)
        else:
            lut[m] = -(c @ qs)
    return lut


def approx_dists(codes: np.ndarray, lut: np.ndarray, ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    sub = codes[ids]
    return lut[np.arange(lut.shape[0]), sub].sum(axis=-1)


def approx_dist(codes: np.ndarray, lut: np.ndarray, node: int) -> float:
    if not 0 <= node < codes.shape[0]:
        raise IndexError(f"node {node} out of range [0, {codes.shape[0]})")
    return float(lut[np.arange(lut.shape[0]), codes[node]].sum())


def reconstruction_mse(cb: PQCodebook, ds: VectorDataset) -> float:
    rec = decode(cb, encode(cb, ds))
    return float(((ds.data.astype(np.float64) - rec) ** 2).sum(1).mean())


def pq_memory_bytes(count: int, M: int, K: int = 256, dims: int = 0) -> int:
    """Resident bytes of the codes plus the codebook itself."""
    code_size = 1 if K <= 256 else 2
    return count * M * code_size + 4 * K * dims


def save_codes(codes: np.ndarray, path):
    with open(path, "wb") as f:
        f.write(np.ascontiguousarray(codes).tobytes())


def load_codes(path, M: int, K: int = 256) -> np.ndarray:
    dt = np.uint8 if K <= 256 else np.dtype("<u2")
    raw = np.fromfile(path, dtype=dt)
    if raw.size % M:
        raise ValueError(f"{path}: {raw.size} code entries not divisible by M={M}")
    return raw.reshape(-1, M)
