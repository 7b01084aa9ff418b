"""Non-aggression wrapper against plain expanders in four-player games.

Each game seats two NAP-wrapped expanders and two plain expanders in random
seats on a random four-player map.  Reports mean finishing ranks and a
one-sided sign test over games.

    python3 scripts/nap_experiment.py --games 200
"""

import argparse
import time

import numpy as np
from scipy.stats import binomtest

from torus_arena.bots import make_policy
from torus_arena.engine import run_game
from torus_arena.mapgen import MapGenParams, generate_map


def play(seed, buffer=None):
    rng = np.random.default_rng(seed)
    nap_seats = set(rng.permutation(4)[:2].tolist())
    pols = []
    for i in range(4):
        pol = make_policy("nap-expander" if i in nap_seats else "expander")
        if buffer is not None and i in nap_seats:
            pol.buffer = buffer
        pols.append(pol)
    r = run_game(generate_map(MapGenParams(4, seed)), pols)
    nap = np.mean([r.ranks[i] for i in nap_seats])
    plain = np.mean([r.ranks[i] for i in range(4) if i not in nap_seats])
    return nap, plain, r.num_turns


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--games", type=int, default=200)
    ap.add_argument("--seed", type=int, default=10_000, help="first map seed")
    ap.add_argument("--buffer", type=int, help="override the NAP buffer distance")
    args = ap.parse_args()

    start = time.perf_counter()
    rows = [play(args.seed + g, args.buffer) for g in range(args.games)]
    nap = np.array([r[0] for r in rows])
    plain = np.array([r[1] for r in rows])
    wins, losses = int((nap < plain).sum()), int((nap > plain).sum())
    p = binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue if wins + losses else 1
    print(f"games {args.games}  mean turns {np.mean([r[2] for r in rows]):.0f}  "
          f"elapsed {time.perf_counter() - start:.0f} s")
    print(f"mean rank  NAP {nap.mean():.3f}  expander {plain.mean():.3f}")
    print(f"NAP better {wins}  worse {losses}  tied {args.games - wins - losses}  "
          f"sign test p = {p:.3g}")


if __name__ == "__main__":
    main()
