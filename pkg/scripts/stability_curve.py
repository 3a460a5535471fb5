"""Density continuity scan for lorenz_singular: offsets, map distance and L1 to the base density.

    python scripts/stability_curve.py --a0 1.9 --eps 0.02 --scales 7 --method ulam
"""
import argparse

from statstab.stability import DensityBudget, dyadic_offsets, median_l1_by_scale, spearman, stability_curve


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--family", default="lorenz_singular")
    ap.add_argument("--a0", type=float, default=1.9)
    ap.add_argument("--eps", type=float, default=0.02)
    ap.add_argument("--scales", type=int, default=7)
    ap.add_argument("--method", default="ulam", choices=["ulam", "birkhoff"])
    ap.add_argument("--cells", type=int, default=512)
    args = ap.parse_args()

    budget = DensityBudget(method=args.method, cells=args.cells)
    rows = stability_curve(args.family, args.a0, dyadic_offsets(args.eps, args.scales), budget)
    print(f"{'offset':>12} {'d':>12} {'L1':>10}")
    for r in rows:
        print(f"{r.offset:12.6g} {r.d:12.6g} {r.l1:10.5f}")
    print("median L1 by |offset|:")
    for k, v in median_l1_by_scale(rows).items():
        print(f"  {k:10.6g}  {v:.5f}")
    print(f"spearman(d, L1) = {spearman(rows):.4f}")


if __name__ == "__main__":
    main()
