"""Distribution of production Gini coefficients over generated maps.

    python3 scripts/gini_sweep.py --maps 500
    python3 scripts/gini_sweep.py --maps 200 --gamma 1.0 1.4 1.8 2.5 3.5
"""

import argparse

import numpy as np

from torus_arena.mapgen import TILINGS, MapGenParams, generate_map, gini_coefficient


def sweep(maps, gamma=None, seed0=0):
    players = sorted(TILINGS)
    return np.array([
        gini_coefficient(generate_map(
            MapGenParams(players[i % len(players)], seed0 + i, gamma=gamma)).production)
        for i in range(maps)])


def summarize(label, g):
    q1, med, q3 = np.percentile(g, [25, 50, 75])
    print(f"{label:>10}  n={len(g)}  median {med:.4f}  IQR [{q1:.4f}, {q3:.4f}]  "
          f"mean {g.mean():.4f}  sd {g.std(ddof=1):.4f}")


def histogram(g, bins=20):
    counts, edges = np.histogram(g, bins=bins, range=(0, 0.6))
    peak = counts.max()
    for c, lo in zip(counts, edges):
        print(f"  {lo:.2f} {'#' * round(40 * c / peak) if peak else ''} {c}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--maps", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0, help="first map seed")
    ap.add_argument("--gamma", type=float, nargs="*",
                    help="fixed gamma values to compare (default: drawn per map)")
    ap.add_argument("--hist", action="store_true")
    args = ap.parse_args()

    for gamma in args.gamma or [None]:
        g = sweep(args.maps, gamma, args.seed)
        summarize("drawn" if gamma is None else f"gamma {gamma}", g)
        if args.hist:
            histogram(g)


if __name__ == "__main__":
    main()
