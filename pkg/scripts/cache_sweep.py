"""Measured read reduction from a graph cache against the beta*(1 - sigma) model."""

from dataclasses import asdict

from _common import dump, load, parser

from graphdisk.bench.experiments import cache_sweep


def main():
    ap = parser(__doc__)
    ap.add_argument("--fractions", default="0.1,0.25,0.5,0.75,0.9")
    ap.add_argument("--D", type=int, default=100)
    ap.add_argument("--sigma", type=float, default=0.5)
    ap.add_argument("--layout", choices=["flat", "graph_replicated"], default="flat")
    ap.add_argument("--W", type=int, default=1)
    a = ap.parse_args()
    desk = load(a)
    pts = cache_sweep(desk, tuple(float(x) for x in a.fractions.split(",")), a.D, a.sigma,
                      kind=a.layout, beam_width=a.W)
    print(f"{'cache':>6} {'beta':>6} {'predicted':>9} {'measured':>9} {'dev':>6} {'reads':>7}")
    for p in pts:
        print(f"{p.fraction:>6} {p.hit_rate:>6.3f} {p.predicted:>9.3f} {p.measured:>9.3f} "
              f"{p.deviation:>6.2f} {p.ios:>7.1f}")
    dump(a, [asdict(p) | {"deviation": p.deviation} for p in pts])


if __name__ == "__main__":
    main()
