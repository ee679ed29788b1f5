"""Vector dataset ingestion, sampling, exact top-k and recall.

Distances follow one convention everywhere in the package: smaller is closer.
L2 is the squared Euclidean distance; IP and Cosine are negated inner products
(Cosine data is normalized at ingest, after which it behaves exactly like IP).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

SCALARS = {"u8": np.uint8, "f32": np.float32}
SCALAR_SIZE = {"u8": 1, "f32": 4}
SCALAR_CODES = {"u8": 0, "f32": 1}
METRICS = ("L2", "IP", "Cosine")
METRIC_CODES = {"L2": 0, "IP": 1, "Cosine": 2}

_RAW_HEADER = struct.Struct("<QIB")


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class VectorDataset:
    data: np.ndarray
    scalar: str = "f32"
    metric: str = "L2"

    def __post_init__(self):
        if self.scalar not in SCALARS:
            raise ValueError(f"unknown scalar type {self.scalar!r}")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        data = np.ascontiguousarray(self.data, dtype=SCALARS[self.scalar])
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"dataset must be a non-empty 2-D array, got shape {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]

    @property
    def vector_bytes(self) -> int:
        return self.dims * SCALAR_SIZE[self.scalar]

    def __len__(self):
        return self.count

    def __getitem__(self, i):
        return self.data[i]


def normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    norms[norms == 0] = 1.0
    return (x / norms).astype(np.float32)


def make_dataset(data, metric="L2", scalar=None) -> VectorDataset:
    """Wrap an array as a dataset, normalizing rows for Cosine."""
    data = np.asarray(data)
    if data.ndim == 1:
        data = data.reshape(-1, 1)
    if scalar is None:
        scalar = "u8" if data.dtype == np.uint8 else "f32"
    if metric == "Cosine":
        return VectorDataset(normalize_rows(data), "f32", metric)
    return VectorDataset(data, scalar, metric)


# -- file formats -----------------------------------------------------------

def _read_vecs(raw: bytes, elem: np.dtype, path) -> np.ndarray:
    if len(raw) == 0:
        raise DatasetFormatError(f"{path}: empty file")
    if len(raw) < 4:
        raise DatasetFormatError(f"{path}: truncated header")
    dim = int(np.frombuffer(raw, dtype="<i4", count=1)[0])
    if dim <= 0:
        raise DatasetFormatError(f"{path}: invalid dimension {dim}")
    rec = 4 + dim * elem.itemsize
    if len(raw) % rec:
        raise DatasetFormatError(
            f"{path}: size {len(raw)} is not a multiple of record size {rec} (dim {dim})")
    n = len(raw) // rec
    rows = np.frombuffer(raw, dtype=np.uint8).reshape(n, rec)
    dims = rows[:, :4].copy().view("<i4").ravel()
    if np.any(dims != dim):
        bad = int(np.flatnonzero(dims != dim)[0])
        raise DatasetFormatError(f"{path}: record {bad} has dimension {dims[bad]}, expected {dim}")
    return rows[:, 4:].copy().view(elem).reshape(n, dim)


def load_dataset(path, format=None, metric="L2") -> VectorDataset:
    """Load fvecs, bvecs or raw_bin (u64 count, u32 dims, u8 scalar header)."""
    path = os.fspath(path)
    if format is None:
        format = os.path.splitext(path)[1].lstrip(".") or "raw_bin"
        if format == "bin":
            format = "raw_bin"
    with open(path, "rb") as f:
        raw = f.read()
    if format == "fvecs":
        return make_dataset(_read_vecs(raw, np.dtype("<f4"), path), metric, "f32")
    if format == "bvecs":
        return make_dataset(_read_vecs(raw, np.dtype("u1"), path), metric, "u8")
    if format == "raw_bin":
        if len(raw) == 0:
            raise DatasetFormatError(f"{path}: empty file")
        if len(raw) < _RAW_HEADER.size:
            raise DatasetFormatError(f"{path}: truncated header")
        count, dims, code = _RAW_HEADER.unpack_from(raw)
        scalar = {v: k for k, v in SCALAR_CODES.items()}.get(code)
        if scalar is None or count < 1 or dims < 1:
            raise DatasetFormatError(f"{path}: malformed header ({count}, {dims}, {code})")
        want = _RAW_HEADER.size + count * dims * SCALAR_SIZE[scalar]
        if len(raw) != want:
            raise DatasetFormatError(f"{path}: expected {want} bytes, found {len(raw)}")
        dt = np.dtype("<f4") if scalar == "f32" else np.dtype("u1")
        arr = np.frombuffer(raw, dtype=dt, offset=_RAW_HEADER.size).reshape(count, dims)
        return make_dataset(arr.copy(), metric, scalar)
    raise ValueError(f"unknown dataset format {format!r}")


def save_dataset(ds_or_array, path, format=None):
    path = os.fspath(path)
    if isinstance(ds_or_array, VectorDataset):
        arr, scalar = ds_or_array.data, ds_or_array.scalar
    else:
        arr = np.asarray(ds_or_array)
        scalar = "u8" if arr.dtype == np.uint8 else "f32"
        arr = arr.astype(SCALARS[scalar])
    if format is None:
        format = os.path.splitext(path)[1].lstrip(".")
        if format in ("", "bin"):
            format = "raw_bin"
    n, d = arr.shape
    with open(path, "wb") as f:
        if format in ("fvecs", "bvecs"):
            elem = "<f4" if format == "fvecs" else "u1"
            rec = np.empty((n, 4 + d * np.dtype(elem).itemsize), dtype=np.uint8)
            rec[:, :4] = np.full((n, 1), d, dtype="<i4").view(np.uint8)
            rec[:, 4:] = np.ascontiguousarray(arr.astype(elem)).view(np.uint8).reshape(n, -1)
            f.write(rec.tobytes())
        elif format == "raw_bin":
            f.write(_RAW_HEADER.pack(n, d, SCALAR_CODES[scalar]))
            f.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
        else:
            raise ValueError(f"unknown dataset format {format!r}")


# -- sampling ---------------------------------------------------------------

def sample_dataset(ds: VectorDataset, fraction: float, seed: int = 0):
    """Uniform sample without replacement; returns (sample, id_map) with id_map ascending."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = int(round(fraction * ds.count))
    if n < 1:
        raise ValueError(f"fraction {fraction} of {ds.count} vectors selects nothing")
    if n == ds.count:
        ids = np.arange(ds.count, dtype=np.int64)
    else:
        rng = np.random.default_rng(seed)
        ids = np.sort(rng.choice(ds.count, size=n, replace=False))
    return VectorDataset(ds.data[ids], ds.scalar, ds.metric), ids


# -- distances --------------------------------------------------------------

def distances(ds_or_data, query, metric=None) -> np.ndarray:
    """Exact distances from query to every row, float64, smaller is closer."""
    if isinstance(ds_or_data, VectorDataset):
        metric = metric or ds_or_data.metric
        data = ds_or_data.data
    else:
        data = np.asarray(ds_or_data)
        metric = metric or "L2"
    x = data.astype(np.float64)
    q = np.asarray(query, dtype=np.float64)
    if metric == "L2":
        diff = x - q
        return np.einsum("ij,ij->i", diff, diff)
    return -(x @ q)


def distance(a, b, metric="L2") -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if metric == "L2":
        d = a - b
        return float(d @ d)
    return float(-(a @ b))


def prepare_query(query, metric):
    q = np.asarray(query, dtype=np.float32).ravel()
    if metric == "Cosine":
        q = normalize_rows(q[None, :])[0]
    return q


def brute_force_topk(ds: VectorDataset, query, k: int):
    """Exact top-k as a list of (id, distance); ties go to the smaller id."""
    if k > ds.count:
        raise ValueError(f"k={k} exceeds dataset size {ds.count}")
    q = prepare_query(query, ds.metric)
    if q.shape[0] != ds.dims:
        raise ValueError(f"query has {q.shape[0]} dims, dataset has {ds.dims}")
    d = distances(ds, q)
    order = np.argsort(d, kind="stable")[:k]
    return [(int(i), float(d[i])) for i in order]


# -- ground truth -----------------------------------------------------------

@dataclass
class GroundTruth:
    k: int
    ids: np.ndarray    # (nq, k) int64
    dists: np.ndarray  # (nq, k) float32

    def __len__(self):
        return self.ids.shape[0]

    def __getitem__(self, i):
        return self.ids[i]

    def save(self, path):
        nq = len(self)
        rec = np.empty(nq, dtype=[("ids", "<u4", (self.k,)), ("dists", "<f4", (self.k,))])
        rec["ids"] = self.ids
        rec["dists"] = self.dists
        with open(path, "wb") as f:
            f.write(struct.pack("<I", self.k))
            f.write(rec.tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            raw = f.read()
        if len(raw) < 4:
            raise DatasetFormatError(f"{path}: truncated ground-truth header")
        (k,) = struct.unpack_from("<I", raw)
        rec_size = 8 * k
        if k == 0 or (len(raw) - 4) % rec_size:
            raise DatasetFormatError(f"{path}: inconsistent ground-truth size for k={k}")
        rec = np.frombuffer(raw, offset=4,
                            dtype=[("ids", "<u4", (k,)), ("dists", "<f4", (k,))])
        return cls(k, rec["ids"].astype(np.int64), rec["dists"].astype(np.float32))


def ground_truth(ds: VectorDataset, queries, k: int, batch: int = 256) -> GroundTruth:
    """Batched exact top-k via the matrix form of the distance (independent of brute_force_topk)."""
    if k > ds.count:
        raise ValueError(f"k={k} exceeds dataset size {ds.count}")
    q = queries.data if isinstance(queries, VectorDataset) else np.asarray(queries)
    if q.ndim == 1:
        q = q[None, :]
    q = np.stack([prepare_query(v, ds.metric) for v in q]).astype(np.float64)
    x = ds.data.astype(np.float64)
    sq = np.einsum("ij,ij->i", x, x) if ds.metric == "L2" else None
    ids = np.empty((q.shape[0], k), dtype=np.int64)
    dists = np.empty((q.shape[0], k), dtype=np.float32)
    for s in range(0, q.shape[0], batch):
        qb = q[s:s + batch]
        ip = qb @ x.T
        if ds.metric == "L2":
            d = sq[None, :] - 2.0 * ip + np.einsum("ij,ij->i", qb, qb)[:, None]
            np.maximum(d, 0.0, out=d)
        else:
            d = -ip
        part = np.argpartition(d, k - 1, axis=1)[:, :k] if k < ds.count else \
            np.tile(np.arange(ds.count), (qb.shape[0], 1))
        for r in range(qb.shape[0]):
            # widen to all rows tied with the k-th value so the id tie rule holds
            kth = d[r, part[r]].max()
            cand = np.flatnonzero(d[r] <= kth)
            order = cand[np.lexsort((cand, d[r, cand]))][:k]
            ids[s + r] = order
            dists[s + r] = d[r, order]
    return GroundTruth(k, ids, dists)


def compute_recall(results, gt_ids, k: int) -> float:
    """|first min(len(results), k) results ∩ true top-k| / k."""
    top = set(int(i) for i in list(results)[:k])
    if not top:
        return 0.0
    truth = set(int(i) for i in list(gt_ids)[:k])
    return len(top & truth) / k
