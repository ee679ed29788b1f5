"""Reads per query at the recall target for each PQ subspace count M."""

from dataclasses import asdict

from _common import dump, load, parser

from graphdisk.bench.experiments import ratio_knee
from graphdisk.vecio import sample_dataset


def main():
    ap = parser(__doc__)
    ap.add_argument("--candidates", default="4,8,16,32,64")
    ap.add_argument("--sample", type=float, default=0.02, help="fraction of the corpus to index")
    ap.add_argument("--target", type=float, default=0.9)
    a = ap.parse_args()
    desk = load(a)
    sample, _ = sample_dataset(desk.base, a.sample, seed=a.seed)
    cands = [int(x) for x in a.candidates.split(",")]
    points, pick = ratio_knee(sample, desk.tune.data, cands, recall_target=a.target, seed=a.seed)
    print(f"{'M':>4} {'ratio':>6} {'D':>5} {'recall':>7} {'reads':>7}")
    for p in points:
        print(f"{p.M:>4} {desk.base.dims * 4 / p.M:>6.0f} {p.D:>5} {p.recall:>7.3f} {p.reads:>7.1f}")
    print(f"picked M={pick}")
    dump(a, {"points": [asdict(p) for p in points], "pick": pick})


if __name__ == "__main__":
    main()
