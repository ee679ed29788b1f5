"""Shared command-line options for the desk-scale experiment scripts."""

import argparse
import json
import os

from graphdisk.bench.desk import DeskConfig, prepare


def parser(description):
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--root", default=os.environ.get("GRAPHDISK_DESK_CACHE", "desk-cache"),
                    help="directory caching the generated corpus and its index")
    ap.add_argument("--n", type=int, default=DeskConfig.n)
    ap.add_argument("--dims", type=int, default=DeskConfig.dims)
    ap.add_argument("--queries", type=int, default=DeskConfig.n_queries)
    ap.add_argument("--R-deg", dest="R_deg", type=int, default=DeskConfig.R_deg)
    ap.add_argument("--M", type=int, default=DeskConfig.M)
    ap.add_argument("--seed", type=int, default=DeskConfig.seed)
    ap.add_argument("--json", default=None, help="also write the results to this JSON file")
    return ap


def load(a):
    cfg = DeskConfig(n=a.n, dims=a.dims, n_queries=a.queries, R_deg=a.R_deg, M=a.M, seed=a.seed)
    return prepare(a.root, cfg)


def dump(a, payload):
    if a.json:
        with open(a.json, "w") as f:
            json.dump(payload, f, indent=2)
