"""Recall against queue size D and refinement ratio sigma, all adjacency lists in memory."""

from dataclasses import asdict

from _common import dump, load, parser

from graphdisk.bench.experiments import sigma_sweep


def main():
    ap = parser(__doc__)
    ap.add_argument("--D", default="20,50,100")
    ap.add_argument("--sigma", default="0.25,0.5,0.75,1.0")
    ap.add_argument("--W", type=int, default=4)
    a = ap.parse_args()
    desk = load(a)
    pts = sigma_sweep(desk, [int(x) for x in a.D.split(",")],
                      [float(x) for x in a.sigma.split(",")], a.W)
    print(f"{'D':>5} {'sigma':>6} {'recall':>8} {'reads':>8}")
    for p in pts:
        print(f"{p.D:>5} {p.sigma:>6} {p.recall:>8.4f} {p.ios:>8.1f}")
    dump(a, [asdict(p) for p in pts])


if __name__ == "__main__":
    main()
