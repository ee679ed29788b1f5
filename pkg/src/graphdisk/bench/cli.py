"""graphdisk command line: gen, gt, build, plan, search, bench, analyze.

Exit status is 0 only when the command completed fully; argument errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from ..engine import IO_MODES, SearchParams
from ..engine.search import IO_MODE_ENV
from ..graph import ProximityGraph
from ..layout import KINDS
from ..planner import plan_memory
from ..synth import clustered
from ..vecio import (METRIC_CODES, GroundTruth, VectorDataset, ground_truth, load_dataset,
                     save_dataset)
from . import report
from .runner import (BuildConfig, StageError, baseline_cache, build_artifacts, eval_query_ids,
                     load_artifacts, load_manifest, open_index, rebuild_nav, run_queries,
                     sha256_array, sha256_file, summarize, MANIFEST)


def _floats(s):
    return [float(x) for x in s.split(",") if x]


def _ints(s):
    return [int(x) for x in s.split(",") if x]


def _cache_fracs(s):
    out = []
    for x in s.split(","):
        out.append(None if x in ("plan", "") else float(x))
    return out


def _load(path, fmt, metric):
    return load_dataset(path, fmt, metric)


def _tuning(queries: VectorDataset | None, n_tune: int, base: VectorDataset, seed: int):
    """Tuning queries and a record of where they came from."""
    if queries is not None:
        n = min(n_tune, queries.count)
        ids = list(range(n))
        tq = VectorDataset(queries.data[:n], queries.scalar, queries.metric)
        return tq, {"source": "queries", "queries_sha256": sha256_array(queries.data), "ids": ids}
    rng = np.random.default_rng(seed)
    ids = np.sort(rng.choice(base.count, size=min(n_tune, base.count), replace=False))
    tq = VectorDataset(base.data[ids], base.scalar, base.metric)
    return tq, {"source": "corpus_sample", "ids": [int(i) for i in ids]}


# -- subcommands ------------------------------------------------------------

def cmd_gen(a):
    base, queries = clustered(a.n, a.dims, a.queries, clusters=a.clusters, latent=a.latent,
                              spread=a.spread, noise=a.noise, metric=a.metric, seed=a.seed)
    save_dataset(base, a.out_base)
    if queries is not None:
        save_dataset(queries, a.out_queries)
    print(f"wrote {base.count} base vectors to {a.out_base}"
          + (f" and {queries.count} queries to {a.out_queries}" if queries is not None else ""))
    return 0


def cmd_gt(a):
    ds = _load(a.corpus, a.format, a.metric)
    qs = _load(a.queries, a.format, a.metric)
    t0 = time.perf_counter()
    gt = ground_truth(ds, qs, a.k)
    gt.save(a.out)
    print(f"ground truth for {qs.count} queries, k={a.k} -> {a.out} "
          f"({time.perf_counter() - t0:.1f}s)")
    return 0


def _build_config(a) -> BuildConfig:
    return BuildConfig(R_deg=a.R_deg, L_build=a.L_build, alpha=a.alpha, M=a.M, K=a.K,
                       pq_iters=a.pq_iters, pq_fraction=a.pq_fraction, layout_kind=a.layout_kind,
                       B=a.B, R_pack=a.R_pack, budget_fraction=a.budget_fraction,
                       budget_bytes=a.budget_bytes,
                       sigma=a.sigma[0] if isinstance(a.sigma, list) else a.sigma, nav_fraction=a.nav_fraction,
                       recall_target=a.recall_target, k=a.k, seed=a.seed)


def cmd_build(a):
    ds = _load(a.corpus, a.format, a.metric)
    qs = _load(a.queries, a.format, a.metric) if a.queries else None
    tq, info = _tuning(qs, a.n_tune, ds, a.seed)
    cfg = _build_config(a)
    m = build_artifacts(ds, a.out, cfg, tq, info)
    print(f"manifest: {os.path.join(a.out, MANIFEST)} ({len(m['artifacts'])} artifacts)")
    return 0


def cmd_plan(a):
    man = load_manifest(a.artifacts)
    c = man["corpus"]
    ds = _load(a.corpus, a.format, c["metric"])
    if sha256_array(ds.data) != c["sha256"]:
        raise StageError("plan", "corpus does not match the one the artifacts were built from")
    art = load_artifacts(a.artifacts)
    qs = _load(a.queries, a.format, c["metric"]) if a.queries else None
    cfg = man["config"]
    seed = cfg["seed"]
    tq, info = _tuning(qs, a.n_tune, ds, seed)
    budget = a.budget_bytes if a.budget_bytes is not None else int(
        a.budget_fraction * ds.count * ds.vector_bytes)
    sigma = a.sigma if a.sigma is not None else cfg["sigma"]
    nav_fraction = a.nav_fraction if a.nav_fraction is not None else cfg["nav_fraction"]
    plan = plan_memory(ds, tq, budget, art.graph, M=art.codebook.M, K=art.codebook.K,
                       sigma=sigma, nav_fraction=nav_fraction, pq_fraction=cfg["pq_fraction"],
                       seed=seed, recall_target=cfg["recall_target"], k=cfg["k"],
                       codebook=art.codebook, codes=art.codes)
    path = os.path.join(a.artifacts, "plan.bin")
    plan.save(path)
    man["artifacts"]["plan.bin"] = {"bytes": os.path.getsize(path), "sha256": sha256_file(path)}
    man["config"].update({"budget_bytes": budget, "sigma": sigma, "nav_fraction": nav_fraction})
    man["tuning"] = info
    with open(os.path.join(a.artifacts, MANIFEST), "w") as f:
        json.dump(man, f, indent=2, sort_keys=True)
    print(f"plan: budget {budget} B, used {plan.used_bytes} B "
          f"(pq {plan.pq_bytes}, nav {plan.nav_bytes}, graph cache {plan.graph_cache_bytes}, "
          f"node cache {plan.node_cache_bytes}); nav {'on' if plan.nav_enabled else 'off'}")
    return 0


def _select_queries(a, art, qs):
    sha = sha256_array(qs.data)
    requested = None
    if a.query_ids:
        lo, _, hi = a.query_ids.partition(":")
        requested = list(range(int(lo), int(hi) if hi else qs.count))
    ids = eval_query_ids(qs.count, art.manifest.get("tuning", {}), sha, requested)
    if a.limit:
        ids = ids[:a.limit]
    return ids


def sweep(art, qs_data, gt_ids, a, log=print, qids=None, per_query=None):
    """All (cache, D, sigma, W, threads) points; one report row per point.

    ``per_query`` is an open text file receiving one JSON record per query and point.
    """
    rows = []
    qids = np.arange(len(qs_data)) if qids is None else qids
    nav = rebuild_nav(art) if not a.no_nav else None
    io_mode = os.environ.get(IO_MODE_ENV) or a.io_mode
    for cf in a.cache_fraction:
        index = open_index(art, cf, nav=nav, io_threads=a.io_threads)
        try:
            bcache = baseline_cache(art, index, cf or 0.0) if a.engine == "baseline" else None
            for D in a.D:
                for sigma in a.sigma:
                    for W in a.W:
                        for T in a.threads:
                            params = SearchParams(k=a.k, D=D, sigma=sigma, beam_width=W,
                                                  use_nav=not a.no_nav, io_mode=io_mode,
                                                  nav_L=a.nav_L)
                            pt = run_queries(index, qs_data, params, a.engine, T, bcache)
                            cfg = {"layout_kind": art.layout_kind, "engine": a.engine,
                                   "cache_fraction": cf if cf is not None else "plan",
                                   "threads": T, "n_queries": len(qs_data),
                                   "artifacts": os.path.abspath(art.dir),
                                   "build_seed": art.manifest["config"]["seed"],
                                   "M": art.codebook.M} | asdict(params)
                            row = report.make_row(cfg, summarize(pt, gt_ids, a.k))
                            row["cache_fraction"] = cf if cf is not None else "plan"
                            rows.append(row)
                            if per_query is not None:
                                for j, r in enumerate(pt.results):
                                    rec = {"point": len(rows) - 1, "query_id": int(qids[j]),
                                           "ids": [int(x) for x in r.ids],
                                           "gt_ids": [int(x) for x in gt_ids[j][:a.k]],
                                           "latency_ns": r.latency_ns} | r.stats.as_dict()
                                    per_query.write(json.dumps(rec) + "\n")
                            log(f"D={D} sigma={sigma} W={W} T={T} cache={row['cache_fraction']}: "
                                f"recall {row['recall']:.4f}, ios {row['mean_ios']:.2f}, "
                                f"qps {row['qps']:.1f}")
        finally:
            index.close()
    return rows


def cmd_search(a):
    art = load_artifacts(a.artifacts)
    c = art.manifest["corpus"]
    qs = _load(a.queries, a.format, c["metric"])
    gt = GroundTruth.load(a.gt)
    if len(gt) != qs.count:
        raise StageError("search", f"ground truth has {len(gt)} rows for {qs.count} queries")
    if gt.k < a.k:
        raise StageError("search", f"ground truth k={gt.k} is smaller than k={a.k}")
    ids = _select_queries(a, art, qs)
    if a.per_query:
        with open(a.per_query, "w") as pq:
            rows = sweep(art, qs.data[ids], gt.ids[ids], a, qids=ids, per_query=pq)
    else:
        rows = sweep(art, qs.data[ids], gt.ids[ids], a, qids=ids)
    if a.out:
        report.write_jsonl(rows, a.out)
    print(report.summary(rows))
    return 0


def cmd_analyze(a):
    rows = []
    for p in a.reports:
        rows += report.read_jsonl(p)
    rows = [r for r in rows if r.get("cache_fraction") != "plan"]
    records, flagged = report.analyze(rows, a.limit)
    print(report.analyze_table(records))
    print(f"\n{flagged} of {len(records)} points deviate by more than {a.limit:.0%}")
    return 1 if (flagged and a.strict) else 0


def cmd_bench(a):
    """End to end on a seeded synthetic corpus: build, ground truth, sweeps, analysis."""
    os.makedirs(a.out, exist_ok=True)
    n_q = a.n_tune + a.n_eval
    base, queries = clustered(a.n, a.dims, n_q, clusters=a.clusters, latent=a.latent,
                              spread=a.spread, noise=a.noise, metric=a.metric, seed=a.seed)
    tq, info = _tuning(queries, a.n_tune, base, a.seed)
    graph = None
    rows = []
    for kind in a.layouts:
        cfg = _build_config(a)
        cfg.layout_kind = kind
        art_dir = os.path.join(a.out, kind)
        m = build_artifacts(base, art_dir, cfg, tq, info, graph=graph)
        graph = graph or ProximityGraph.load(os.path.join(art_dir, "graph.bin"))
        art = load_artifacts(art_dir)
        ev = np.arange(a.n_tune, n_q)
        gt = ground_truth(base, queries.data[ev], a.k)
        a.engine = "two_stage"
        rows += sweep(art, queries.data[ev], gt.ids, a)
        print(f"{kind}: {m['layout_stats']}")
    path = os.path.join(a.out, "report.jsonl")
    report.write_jsonl(rows, path)
    print(report.summary(rows))
    records, flagged = report.analyze([r for r in rows if r["cache_fraction"] != "plan"])
    print("\n" + report.analyze_table(records))
    print(f"\nreport: {path}; {flagged} model deviations over 25%")
    return 0


# -- argument parsing -------------------------------------------------------

def _add_data_args(p, corpus=True):
    if corpus:
        p.add_argument("--corpus", required=True, help="base vectors (fvecs, bvecs or raw .bin)")
    p.add_argument("--format", choices=["fvecs", "bvecs", "raw_bin"], default=None,
                   help="file format (default: from the extension)")
    p.add_argument("--metric", choices=sorted(METRIC_CODES), default="L2")


def _add_build_args(p, sweep=False):
    p.add_argument("--R-deg", dest="R_deg", type=int, default=32)
    p.add_argument("--L-build", dest="L_build", type=int, default=64)
    p.add_argument("--alpha", type=float, default=1.2)
    p.add_argument("--M", type=int, default=None, help="PQ subspaces (default: chosen by IO proxy)")
    p.add_argument("--K", type=int, default=256)
    p.add_argument("--pq-iters", type=int, default=15)
    p.add_argument("--pq-fraction", type=float, default=0.01)
    p.add_argument("--layout-kind", choices=sorted(KINDS), default="graph_replicated")
    p.add_argument("--B", type=int, default=4096, help="block size in bytes")
    p.add_argument("--R-pack", dest="R_pack", type=int, default=None,
                   help="packed neighbor lists per block (default: fill the block)")
    p.add_argument("--budget-fraction", type=float, default=0.1,
                   help="memory budget as a fraction of the raw corpus size")
    p.add_argument("--budget-bytes", type=int, default=None)
    p.add_argument("--nav-fraction", type=float, default=0.005)
    p.add_argument("--recall-target", type=float, default=0.9)
    if not sweep:  # the sweep options provide these
        p.add_argument("--sigma", type=float, default=0.5)
        p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-tune", type=int, default=100, help="tuning queries for the planner")


def _add_sweep_args(p, engine=True):
    p.add_argument("--D", type=_ints, default=[100], help="queue sizes, comma separated")
    p.add_argument("--sigma", type=_floats, default=[0.5], help="refinement ratios")
    p.add_argument("--W", type=_ints, default=[4], help="beam widths")
    p.add_argument("--cache-fraction", type=_cache_fracs, default=[None],
                   help="graph cache as a fraction of adjacency bytes; 'plan' uses the plan")
    p.add_argument("--threads", type=_ints, default=[1])
    p.add_argument("--io-mode", choices=IO_MODES, default="sync",
                   help=f"overridden by ${IO_MODE_ENV}")
    p.add_argument("--io-threads", type=int, default=16)
    p.add_argument("--no-nav", action="store_true")
    p.add_argument("--nav-L", dest="nav_L", type=int, default=16)
    p.add_argument("--k", type=int, default=10)
    if engine:
        p.add_argument("--engine", choices=["two_stage", "baseline"], default="two_stage")


def build_parser():
    ap = argparse.ArgumentParser(prog="graphdisk", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen", help="write a seeded synthetic clustered corpus")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--dims", type=int, default=128)
    p.add_argument("--queries", type=int, default=1000)
    p.add_argument("--clusters", type=int, default=128)
    p.add_argument("--latent", type=int, default=64)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--metric", choices=sorted(METRIC_CODES), default="L2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-base", required=True)
    p.add_argument("--out-queries", default=None)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("gt", help="exact top-k ground truth")
    _add_data_args(p)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gt)

    p = sub.add_parser("build", help="graph, PQ, layout, plan and manifest")
    _add_data_args(p)
    p.add_argument("--queries", default=None, help="query file; the first --n-tune are for tuning")
    p.add_argument("--out", required=True, help="artifact directory")
    _add_build_args(p)
    p.set_defaults(fn=cmd_build)

    p = sub.add_parser("plan", help="re-plan memory for existing artifacts")
    _add_data_args(p)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--queries", default=None)
    p.add_argument("--n-tune", type=int, default=100)
    p.add_argument("--budget-fraction", type=float, default=0.1)
    p.add_argument("--budget-bytes", type=int, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--nav-fraction", type=float, default=None)
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("search", help="parameter sweep over held-out queries")
    _add_data_args(p, corpus=False)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--query-ids", default=None, help="range 'lo:hi' of query ids to evaluate")
    p.add_argument("--limit", type=int, default=None, help="evaluate at most this many queries")
    p.add_argument("--out", default=None, help="JSONL report path")
    p.add_argument("--per-query", default=None, help="JSONL path for per-query records")
    _add_sweep_args(p)
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("bench", help="end-to-end run on a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--dims", type=int, default=128)
    p.add_argument("--clusters", type=int, default=128)
    p.add_argument("--latent", type=int, default=64)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--metric", choices=sorted(METRIC_CODES), default="L2")
    p.add_argument("--n-eval", type=int, default=1000)
    p.add_argument("--layouts", type=lambda s: s.split(","), default=["graph_replicated"])
    _add_build_args(p, sweep=True)
    _add_sweep_args(p, engine=False)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("analyze", help="compare measured IO reduction with the cache model")
    p.add_argument("reports", nargs="+")
    p.add_argument("--limit", type=float, default=report.DEVIATION_LIMIT)
    p.add_argument("--strict", action="store_true", help="exit 1 when any point deviates")
    p.set_defaults(fn=cmd_analyze)
    return ap


def main(argv=None):
    ap = build_parser()
    a = ap.parse_args(argv)
    try:
        return a.fn(a)
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"error: {a.cmd}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
