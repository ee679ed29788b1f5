"""On-disk block layouts.

graph_replicated: one B-byte block per node holding its exact vector, its
adjacency list and the adjacency lists of up to R_pack packed neighbors.
flat: fixed-size (vector, padded adjacency) records, floor(B/record) per block.

The first B bytes of a layout file hold the global header; node blocks start at
offset B so every read is B-aligned.
"""

from __future__ import annotations

import math
import mmap
import os
import struct
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .graph import ProximityGraph
from .vecio import (METRIC_CODES, SCALAR_CODES, SCALAR_SIZE, SCALARS, VectorDataset,
                    distances)

MAGIC = b"GDLAYOUT"
VERSION = 1
KINDS = {"graph_replicated": 0, "flat": 1}
_GLOBAL = struct.Struct("<8sHQIBBIIIB")
NODE_HEADER = struct.Struct("<IHH")   # node_id, degree, pack_count
PACK_HEADER = struct.Struct("<IH")    # neighbor_id, degree


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class BlockSpec:
    B: int = 4096
    R_pack: int | None = None  # None = fill the block
    layout_kind: str = "graph_replicated"

    def __post_init__(self):
        if self.layout_kind not in KINDS:
            raise ValueError(f"unknown layout kind {self.layout_kind!r}")
        if self.R_pack is not None and self.R_pack < 0:
            raise ValueError("R_pack must be >= 0")
        if self.B < 64:
            raise ValueError("block size too small")


def own_bytes(vector_bytes: int, degree: int) -> int:
    return NODE_HEADER.size + vector_bytes + 4 * degree


def packed_entry_bytes(degree: int) -> int:
    return PACK_HEADER.size + 4 * degree


def flat_record_bytes(vector_bytes: int, R_deg: int) -> int:
    return NODE_HEADER.size + vector_bytes + 4 * R_deg


def fill_R_pack(B: int, vector_bytes: int, R_deg: int) -> int:
    """Largest R such that a max-degree node with R max-degree packed lists fits in B."""
    free = B - own_bytes(vector_bytes, R_deg)
    if free < 0:
        raise LayoutError(
            f"a node with a {vector_bytes}-byte vector and degree {R_deg} needs "
            f"{own_bytes(vector_bytes, R_deg)} bytes; use a larger block size (e.g. 8192 or 16384)")
    return free // packed_entry_bytes(R_deg)


def space_blowup(S_v: float, S_a: float, R: float) -> float:
    """Disk space of the replicated layout relative to vector+adjacency storage."""
    if S_v <= 0 or S_a < 0 or (S_a == 0 and S_v <= 0):
        raise ValueError("sizes must be positive")
    return ((1 + R) * S_a + S_v) / (S_a + S_v)


def pack_neighbors(g: ProximityGraph, ds: VectorDataset, R_pack: int, B: int = 4096, order=None):
    """Per node, the ids whose adjacency lists are packed into its block.

    Nodes are processed in ``order`` (default ascending id). Each node takes its
    neighbors by ascending exact distance, skipping any whose list has already
    been packed R_pack + 1 times, and stops when R_pack are taken or the next
    list would overflow the block.
    """
    if R_pack < 0:
        raise ValueError("R_pack must be >= 0")
    n = g.count
    packed = [[] for _ in range(n)]
    if R_pack == 0:
        return packed
    times = np.zeros(n, dtype=np.int64)
    cap = R_pack + 1
    order = range(n) if order is None else order
    vb = ds.vector_bytes
    x = ds.data
    for u in order:
        adj = g.adj(u)
        if len(adj) == 0:
            continue
        d = distances(x[adj], x[u].astype(np.float64), ds.metric)
        ranked = adj[np.lexsort((adj, d))]
        room = B - own_bytes(vb, len(adj))
        chosen = packed[u]
        for v in ranked:
            if len(chosen) >= R_pack:
                break
            if times[v] >= cap:
                continue
            need = packed_entry_bytes(int(g.degrees[v]))
            if need > room:
                break
            chosen.append(int(v))
            times[v] += 1
            room -= need
    return packed


@dataclass
class NodeBlock:
    node_id: int
    vector: np.ndarray
    adjacency: np.ndarray
    packed: list = field(default_factory=list)  # [(neighbor_id, adjacency ndarray)]

    def __eq__(self, other):
        if not isinstance(other, NodeBlock):
            return NotImplemented
        return (self.node_id == other.node_id
                and self.vector.dtype == other.vector.dtype
                and np.array_equal(self.vector, other.vector)
                and np.array_equal(self.adjacency, other.adjacency)
                and len(self.packed) == len(other.packed)
                and all(a == c and np.array_equal(b, d)
                        for (a, b), (c, d) in zip(list(self.packed), list(other.packed))))

    def packed_ids(self):
        if isinstance(self.packed, PackedEntries):
            return list(self.packed.ids)
        return [v for v, _ in self.packed]


def encode_block(nb: NodeBlock, B: int) -> bytes:
    parts = [NODE_HEADER.pack(nb.node_id, len(nb.adjacency), len(nb.packed)),
             np.ascontiguousarray(nb.vector).astype(nb.vector.dtype.newbyteorder("<")).tobytes(),
             np.asarray(nb.adjacency, dtype="<u4").tobytes()]
    for v, adj in nb.packed:
        parts.append(PACK_HEADER.pack(v, len(adj)))
        parts.append(np.asarray(adj, dtype="<u4").tobytes())
    raw = b"".join(parts)
    if len(raw) > B:
        raise LayoutError(f"block for node {nb.node_id} needs {len(raw)} bytes > B={B}")
    return raw + bytes(B - len(raw))


class PackedEntries(Sequence):
    """Packed (neighbor id, adjacency) entries of a decoded block.

    Headers are parsed up front; adjacency arrays are only materialized when read.
    """

    def __init__(self, buf, entries):
        self._buf = buf
        self._entries = entries  # [(neighbor id, byte offset, degree)]
        self.ids = [v for v, _, _ in entries]

    def __len__(self):
        return len(self._entries)

    def adjacency(self, i) -> np.ndarray:
        _, off, d = self._entries[i]
        return np.frombuffer(self._buf, dtype="<u4", count=d, offset=off).astype(np.int64)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        return self._entries[i][0], self.adjacency(i)


def decode_block(buf, dims: int, scalar: str, B: int) -> NodeBlock:
    if len(buf) < B:
        raise LayoutError(f"short block: {len(buf)} < {B}")
    node_id, deg, npk = NODE_HEADER.unpack_from(buf, 0)
    pos = NODE_HEADER.size
    vb = dims * SCALAR_SIZE[scalar]
    if pos + vb + 4 * deg > B:
        raise LayoutError(f"block of node {node_id} claims degree {deg} beyond B={B}")
    vec = np.frombuffer(buf, dtype=np.dtype(SCALARS[scalar]).newbyteorder("<"),
                        count=dims, offset=pos).astype(SCALARS[scalar])
    pos += vb
    adj = np.frombuffer(buf, dtype="<u4", count=deg, offset=pos).astype(np.int64)
    pos += 4 * deg
    entries = []
    unpack = PACK_HEADER.unpack_from
    hs = PACK_HEADER.size
    for _ in range(npk):
        if pos + hs > B:
            raise LayoutError(f"block of node {node_id} claims {npk} packed entries beyond B={B}")
        v, d = unpack(buf, pos)
        pos += hs
        if pos + 4 * d > B:
            raise LayoutError(f"block of node {node_id} claims {npk} packed entries beyond B={B}")
        entries.append((v, pos, d))
        pos += 4 * d
    return NodeBlock(int(node_id), vec, adj, PackedEntries(bytes(buf), entries))


def _encode_flat_record(node_id, vector, adj, R_deg) -> bytes:
    ids = np.zeros(R_deg, dtype="<u4")
    ids[:len(adj)] = adj
    return (NODE_HEADER.pack(node_id, len(adj), 0)
            + np.ascontiguousarray(vector).astype(vector.dtype.newbyteorder("<")).tobytes()
            + ids.tobytes())


@dataclass
class LayoutHeader:
    count: int
    dims: int
    scalar: str
    metric: str
    B: int
    R_deg: int
    R_pack: int
    layout_kind: str

    def pack(self) -> bytes:
        raw = _GLOBAL.pack(MAGIC, VERSION, self.count, self.dims, SCALAR_CODES[self.scalar],
                           METRIC_CODES[self.metric], self.B, self.R_deg, self.R_pack,
                           KINDS[self.layout_kind])
        return raw + bytes(self.B - len(raw))

    @classmethod
    def unpack(cls, raw):
        if len(raw) < _GLOBAL.size:
            raise LayoutError("truncated layout header")
        magic, ver, count, dims, sc, mc, B, R_deg, R_pack, kind = _GLOBAL.unpack_from(raw)
        if magic != MAGIC or ver != VERSION:
            raise LayoutError(f"not a layout file (magic={magic!r}, version={ver})")
        inv = lambda d: {v: k for k, v in d.items()}  # noqa: E731
        return cls(count, dims, inv(SCALAR_CODES)[sc], inv(METRIC_CODES)[mc], B, R_deg, R_pack,
                   inv(KINDS)[kind])

    @property
    def vector_bytes(self):
        return self.dims * SCALAR_SIZE[self.scalar]

    @property
    def nodes_per_block(self):
        if self.layout_kind == "graph_replicated":
            return 1
        return self.B // flat_record_bytes(self.vector_bytes, self.R_deg)

    @property
    def num_blocks(self):
        return math.ceil(self.count / self.nodes_per_block)

    def block_of(self, node):
        return node // self.nodes_per_block

    def offset_of_block(self, b):
        return (1 + b) * self.B

    def file_size(self):
        return self.B * (1 + self.num_blocks)


@dataclass
class LayoutStats:
    bytes: int
    blowup_vs_flat: float
    avg_packed: float
    nodes_per_block: int
    R_pack: int


def flat_file_size(count, vector_bytes, R_deg, B=4096) -> int:
    npb = B // flat_record_bytes(vector_bytes, R_deg)
    if npb < 1:
        raise LayoutError("flat record exceeds block size")
    return B * (1 + math.ceil(count / npb))


def write_layout(g: ProximityGraph, ds: VectorDataset, spec: BlockSpec, packed, path) -> LayoutStats:
    """Serialize the layout; ``packed`` is ignored for the flat kind."""
    vb = ds.vector_bytes
    n = g.count
    if n != ds.count:
        raise LayoutError(f"graph has {n} nodes, dataset has {ds.count}")
    R_pack = 0
    if spec.layout_kind == "graph_replicated":
        R_pack = spec.R_pack if spec.R_pack is not None else fill_R_pack(spec.B, vb, g.R_deg)
        worst = own_bytes(vb, int(g.degrees.max()) if n else 0)
        if worst > spec.B:
            raise LayoutError(
                f"a node needs {worst} bytes for vector + adjacency + header but B={spec.B}; "
                f"use a larger block size (e.g. 8192 or 16384)")
        if packed is None:
            packed = pack_neighbors(g, ds, R_pack, spec.B)
    else:
        if flat_record_bytes(vb, g.R_deg) > spec.B:
            raise LayoutError(f"flat record of {flat_record_bytes(vb, g.R_deg)} bytes exceeds B={spec.B}")
    hdr = LayoutHeader(n, ds.dims, ds.scalar, ds.metric, spec.B, g.R_deg, R_pack, spec.layout_kind)
    total_packed = 0
    with open(path, "wb") as f:
        f.write(hdr.pack())
        if spec.layout_kind == "graph_replicated":
            for u in range(n):
                pk = packed[u]
                if len(pk) > R_pack:
                    raise LayoutError(f"node {u} packs {len(pk)} > R_pack={R_pack}")
                total_packed += len(pk)
                nb = NodeBlock(u, ds.data[u], g.adj(u), [(v, g.adj(v)) for v in pk])
                f.write(encode_block(nb, spec.B))
        else:
            npb = hdr.nodes_per_block
            for b in range(hdr.num_blocks):
                recs = [_encode_flat_record(u, ds.data[u], g.adj(u), g.R_deg)
                        for u in range(b * npb, min(n, (b + 1) * npb))]
                raw = b"".join(recs)
                f.write(raw + bytes(spec.B - len(raw)))
    size = os.path.getsize(path)
    return LayoutStats(size, size / flat_file_size(n, vb, g.R_deg, spec.B),
                       total_packed / n if n else 0.0, hdr.nodes_per_block, R_pack)


class FlatBlock(Sequence):
    """The records of one flat-layout block, decoded on access."""

    def __init__(self, data, first, n, header):
        self.data = data
        self.first = first
        self.n = n
        self._h = header

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(self.n))]
        if not 0 <= i < self.n:
            raise IndexError(i)
        h = self._h
        rec = flat_record_bytes(h.vector_bytes, h.R_deg)
        base = i * rec
        node_id, deg, _ = NODE_HEADER.unpack_from(self.data, base)
        if node_id != self.first + i or deg > h.R_deg:
            raise LayoutError(f"flat record {self.first + i} is corrupt")
        vec = np.frombuffer(self.data, dtype=np.dtype(SCALARS[h.scalar]).newbyteorder("<"),
                            count=h.dims, offset=base + NODE_HEADER.size).astype(SCALARS[h.scalar])
        adj = np.frombuffer(self.data, dtype="<u4", count=deg,
                            offset=base + NODE_HEADER.size + h.vector_bytes).astype(np.int64)
        return NodeBlock(int(node_id), vec, adj, [])


class LayoutReader:
    """Block reader over a layout file. Each read_block call is one B-byte pread."""

    def __init__(self, path, direct: bool = False):
        self.path = os.fspath(path)
        flags = os.O_RDONLY
        if direct:
            flags |= getattr(os, "O_DIRECT", 0)
        self.fd = os.open(self.path, flags)
        self.direct = direct
        with open(self.path, "rb") as f:
            head = f.read(_GLOBAL.size)
        self.header = LayoutHeader.unpack(head)
        size = os.fstat(self.fd).st_size
        if size < self.header.file_size():
            raise LayoutError(f"{self.path}: file is {size} bytes, header implies {self.header.file_size()}")
        self.reads = 0

    def close(self):
        if self.fd is not None:
            os.close(self.fd)
            self.fd = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def count(self):
        return self.header.count

    def _pread(self, offset):
        B = self.header.B
        if self.direct:
            buf = mmap.mmap(-1, B)
            n = os.preadv(self.fd, [buf], offset)
            data = bytes(buf[:n])
        else:
            data = os.pread(self.fd, B, offset)
        if len(data) != B:
            raise LayoutError(f"short read at offset {offset}: {len(data)} of {B} bytes")
        return data

    def read_raw(self, node: int):
        """One block read; returns (block index, raw bytes)."""
        if not 0 <= node < self.header.count:
            raise IndexError(f"node {node} out of range [0, {self.header.count})")
        b = self.header.block_of(node)
        off = self.header.offset_of_block(b)
        try:
            data = self._pread(off)
        except OSError as e:
            raise LayoutError(f"IO error reading block {b} at offset {off}: {e}") from e
        self.reads += 1
        return b, data

    def parse(self, b, data):
        """Decode a raw block into NodeBlock (replicated) or list of NodeBlocks (flat)."""
        h = self.header
        if h.layout_kind == "graph_replicated":
            nb = decode_block(data, h.dims, h.scalar, h.B)
            if nb.node_id != b:
                raise LayoutError(f"block {b} holds node {nb.node_id}")
            if len(nb.packed) > h.R_pack:
                raise LayoutError(f"block {b} claims {len(nb.packed)} packed entries > R_pack")
            return nb
        first = b * h.nodes_per_block
        return FlatBlock(data, first, min(h.nodes_per_block, h.count - first), h)

    def read_block(self, node: int):
        return self.parse(*self.read_raw(node))

    def node_from(self, parsed, node: int) -> NodeBlock:
        if isinstance(parsed, NodeBlock):
            return parsed
        return parsed[node - parsed.first]

    def read_node(self, node: int) -> NodeBlock:
        return self.node_from(self.read_block(node), node)
