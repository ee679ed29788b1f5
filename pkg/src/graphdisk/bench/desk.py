"""Seeded desk-scale corpora with their graph, PQ state and both layouts, cached on disk."""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from ..graph import ProximityGraph, build_graph
from ..layout import BlockSpec, LayoutStats, write_layout
from ..quantizer import PQCodebook, encode, load_codes, sample_fraction, save_codes, train_pq
from ..synth import clustered
from ..vecio import GroundTruth, VectorDataset, ground_truth, load_dataset, sample_dataset, save_dataset


@dataclass(frozen=True)
class DeskConfig:
    n: int = 100_000
    dims: int = 128
    n_queries: int = 1000
    n_tune: int = 100
    clusters: int = 128
    latent: int = 64
    spread: float = 1.0
    noise: float = 0.1
    metric: str = "L2"
    R_deg: int = 24
    L_build: int = 64
    alpha: float = 1.2
    M: int = 64
    K: int = 256
    pq_iters: int = 15
    k: int = 10
    B: int = 4096
    R_pack: int | None = None
    seed: int = 1

    def key(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class DeskCorpus:
    cfg: DeskConfig
    dir: str
    base: VectorDataset
    queries: VectorDataset      # evaluation queries (disjoint from tune)
    tune: VectorDataset         # tuning queries
    gt: GroundTruth             # for ``queries``
    graph: ProximityGraph
    codebook: PQCodebook
    codes: np.ndarray
    layouts: dict               # kind -> path
    stats: dict                 # kind -> LayoutStats


def prepare(root, cfg: DeskConfig = DeskConfig(), log=print) -> DeskCorpus:
    """Load the corpus for ``cfg`` from ``root``, building anything missing."""
    d = os.path.join(root, f"desk-{cfg.key()}")
    os.makedirs(d, exist_ok=True)
    p = lambda name: os.path.join(d, name)  # noqa: E731
    if not os.path.exists(p("queries.bin")):
        base, qs = clustered(cfg.n, cfg.dims, cfg.n_queries + cfg.n_tune, clusters=cfg.clusters,
                             latent=cfg.latent, spread=cfg.spread, noise=cfg.noise,
                             metric=cfg.metric, seed=cfg.seed)
        save_dataset(base, p("base.bin"))
        save_dataset(qs, p("queries.bin"))
    base = load_dataset(p("base.bin"), metric=cfg.metric)
    allq = load_dataset(p("queries.bin"), metric=cfg.metric)
    tune = VectorDataset(allq.data[:cfg.n_tune], allq.scalar, allq.metric)
    queries = VectorDataset(allq.data[cfg.n_tune:], allq.scalar, allq.metric)

    if not os.path.exists(p("gt.bin")):
        ground_truth(base, queries, cfg.k).save(p("gt.bin"))
    gt = GroundTruth.load(p("gt.bin"))

    if not os.path.exists(p("graph.bin")):
        t0 = time.perf_counter()
        build_graph(base, cfg.R_deg, cfg.L_build, cfg.alpha, cfg.seed).save(p("graph.bin"))
        log(f"desk graph built in {time.perf_counter() - t0:.1f}s")
    graph = ProximityGraph.load(p("graph.bin"))

    if not os.path.exists(p("pq_codes.bin")):
        sample, _ = sample_dataset(base, sample_fraction(base.count, 0.01, cfg.K), cfg.seed)
        cb = train_pq(sample, cfg.M, cfg.K, cfg.pq_iters, cfg.seed)
        cb.save(p("pq_codebook.bin"))
        save_codes(encode(cb, base), p("pq_codes.bin"))
    cb = PQCodebook.load(p("pq_codebook.bin"))
    codes = load_codes(p("pq_codes.bin"), cb.M, cb.K)

    layouts, stats = {}, {}
    for kind in ("flat", "graph_replicated"):
        path = p(f"layout_{kind}.bin")
        meta = p(f"layout_{kind}.json")
        if not os.path.exists(meta):
            st = write_layout(graph, base, BlockSpec(cfg.B, cfg.R_pack, kind), None, path)
            with open(meta, "w") as f:
                json.dump(asdict(st), f)
        with open(meta) as f:
            stats[kind] = LayoutStats(**json.load(f))
        layouts[kind] = path
    return DeskCorpus(cfg, d, base, queries, tune, gt, graph, cb, codes, layouts, stats)
