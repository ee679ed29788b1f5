"""Reads per query at a recall target: flat layout with the single-stage search
against the graph-replicated layout with the two-stage search."""

from dataclasses import asdict

from _common import dump, load, parser

from graphdisk.bench.experiments import layout_comparison


def main():
    ap = parser(__doc__)
    ap.add_argument("--target", type=float, default=0.9)
    ap.add_argument("--sigma", default="0.5")
    ap.add_argument("--W", type=int, default=1)
    a = ap.parse_args()
    desk = load(a)
    res = layout_comparison(desk, a.target, tuple(float(x) for x in a.sigma.split(",")),
                            beam_width=a.W)
    out = {}
    for (kind, sigma), (best, pts) in res.items():
        name = f"{kind} sigma={sigma}"
        if best is None:
            print(f"{name}: target not reached")
        else:
            print(f"{name}: D={best.D}, recall {best.recall:.4f}, {best.ios:.1f} reads/query")
        out[name] = {"best": asdict(best) if best else None, "points": [asdict(p) for p in pts]}
    dump(a, out)


if __name__ == "__main__":
    main()
