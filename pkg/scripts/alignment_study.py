#!/usr/bin/env python3
"""Alignment study: small/large text overlap binned by probe entropy.

Uses a wide entropy mixture so every bin is populated, scores each step's
small-versus-large body with smoothed n-gram overlap, and prints the
per-bin means. Overlap should decay as probe entropy grows.
"""

from __future__ import annotations

import argparse
import sys

from steproute.analysis import AlignmentPair, alignment_by_bin
from steproute.simulation import MixtureParams, build_distribution_scenario


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=120)
    parser.add_argument("--steps", type=int, default=12)
    parser.add_argument("--edges", default="0,0.5,1.0,1.5,2.0,3.0")
    args = parser.parse_args()

    params = MixtureParams(
        low_mean=0.3, low_spread=0.45, high_mean=2.0, high_spread=0.45, weight_high=0.5
    )
    pairs: list[AlignmentPair] = []
    for seed in range(args.seeds):
        scenario = build_distribution_scenario(seed=seed, n_steps=args.steps, params=params)
        for script, h in zip(scenario.steps, scenario.h_init_values()):
            pairs.append(AlignmentPair(h, script.small_body, script.large_body, provenance=f"seed{seed}"))

    edges = [float(e) for e in args.edges.split(",")]
    print(f"pairs={len(pairs)}")
    print(f"{'bin':<16} {'n':>6} {'mean overlap':>14}")
    for stat in alignment_by_bin(pairs, edges):
        mean = f"{stat.mean_overlap:.4f}" if stat.mean_overlap is not None else "(empty)"
        print(f"[{stat.lo:.2f}, {stat.hi:.2f})  {stat.count:>6} {mean:>14}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
