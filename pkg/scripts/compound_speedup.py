#!/usr/bin/env python3
"""Compound-speedup comparison under the simulated cost model.

Compares four configurations on the same scenario family: entropy-routed
with draft-based acceleration of the large model, entropy-routed alone,
large-only, and the generate-then-measure baseline that pays for rejected
small-model drafts.
"""

from __future__ import annotations

import argparse
import sys

from steproute.routing import Policy, PolicyConfig, run_trace
from steproute.simulation import (
    BackendProfile,
    MixtureParams,
    SpecDecoding,
    build_distribution_scenario,
    scripted_pair,
    simulate_latency,
)


def routed(scenario, policy, tau):
    small, large = scripted_pair(scenario)
    return run_trace(scenario.question, small, large, PolicyConfig(policy=policy, threshold=tau))


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=25)
    parser.add_argument("--steps", type=int, default=14)
    parser.add_argument("--tau", type=float, default=0.9)
    parser.add_argument("--draft-length", type=int, default=3)
    parser.add_argument("--acceptance-rate", type=float, default=0.7)
    args = parser.parse_args()

    plain = BackendProfile()
    spec = BackendProfile(
        spec_decoding=SpecDecoding(draft_length=args.draft_length, acceptance_rate=args.acceptance_rate)
    )
    params = MixtureParams(weight_high=0.3)

    totals = {"routed+draft": 0, "routed": 0, "large-only": 0, "measure-then-route": 0}
    rates = []
    for seed in range(args.seeds):
        scenario = build_distribution_scenario(seed=seed, n_steps=args.steps, params=params)
        routed_trace = routed(scenario, Policy.INIT_ENTROPY, args.tau)
        rates.append(routed_trace.accounting.intervention_rate)
        totals["routed+draft"] += simulate_latency(routed_trace, spec)
        totals["routed"] += simulate_latency(routed_trace, plain)
        totals["large-only"] += simulate_latency(routed(scenario, Policy.ALWAYS_LARGE, 0.0), plain)
        totals["measure-then-route"] += simulate_latency(
            routed(scenario, Policy.STEP_ENTROPY, args.tau), plain
        )

    base = totals["large-only"]
    print(
        f"scenarios={args.seeds} steps={args.steps} tau={args.tau} "
        f"draft_length={args.draft_length} acceptance={args.acceptance_rate} "
        f"mean_intervention_rate={sum(rates) / len(rates):.2%}"
    )
    print(f"{'configuration':<20} {'total ms':>10} {'vs large-only':>14}")
    for name in ("routed+draft", "routed", "large-only", "measure-then-route"):
        ratio = totals[name] / base
        print(f"{name:<20} {totals[name]:>10} {ratio:>13.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
