#!/usr/bin/env python3
"""Rebuild the demo scenario files under scenarios/.

Each scenario scripts a short multi-step derivation in which routine steps
carry near-zero probe entropy and one pivot step carries high entropy, so
the router intervenes exactly there at the default threshold.
"""

from __future__ import annotations

import sys
from pathlib import Path

from steproute.simulation import Scenario, StepScript, distribution_with_entropy, save_scenario

OUT_DIR = Path(__file__).resolve().parent.parent / "scenarios"


def step(h: float, small: str, large: str | None = None, small_ok: bool = True) -> StepScript:
    lead = small.split()[0]
    return StepScript(
        first_token_distribution=distribution_with_entropy(h, lead),
        small_body=small,
        large_body=large if large is not None else small,
        small_correct=small_ok,
        large_correct=True,
    )


def binary_expansion() -> Scenario:
    steps = (
        step(0.2369, "First, Alice chooses a set A, and Bob lists all nonempty sets B whose maximum is in A; there are 2024 such sets.\n\n"),
        step(0.3485, "If A={2}, then B can be {2} or {1,2}, giving 2^(2-1)=2 sets. Generally, the count of sets is a sum of powers of 2.\n\n"),
        step(
            1.8985,
            "Maybe I can try to find candidate sets by checking small cases one by one.\n\n",
            "The most efficient way is to divide 2024 by 2 repeatedly to find its binary representation directly.\n\n",
            small_ok=False,
        ),
        step(0.0046, "Compute 2024/2=1012, remainder 0.\n\n"),
        step(0.0008, "Then 1012/2=506, remainder 0.\n\n"),
        step(0.0102, "Next 506/2=253, remainder 0.\n\n"),
        step(0.0055, "Then 253/2=126, remainder 1.\n\n"),
        step(0.0032, "Then 126/2=63, remainder 0.\n\n"),
        step(0.0041, "Then 63/2=31, remainder 1.\n\n"),
        step(0.1205, "So the binary representation is 11111101000_2, covering powers 2^10 down to 2^3. Since each term is 2^(a-1), the elements are a in {11, 10, 9, 8, 7, 6, 4}.\n\n"),
        step(0.0020, "Finally, the sum is 11+10+9+8+7+6+4 = 55."),
    )
    return Scenario(
        question=(
            "Alice chooses a set A of positive integers. Bob lists all finite nonempty sets B "
            "whose maximum is in A. Bob's list has 2024 sets. Find the sum of the elements of A."
        ),
        steps=steps,
        answer="The sum of the elements of A is \\boxed{55}.",
        answer_oracle="55",
    )


def gridpath() -> Scenario:
    steps = (
        step(0.2457, "So, the problem is about paths on a grid starting at (0,0) and ending at (8,8), moving only right (R) or up (U), each step a unit move.\n\n"),
        step(0.3914, "Let me recall that such a grid path from (0,0) to (8,8) is a sequence of right (R) and up (U) moves.\n\n"),
        step(0.5210, "Suppose a path starts in some direction; four direction changes mean the path has four segments.\n\n", small_ok=False),
        step(
            1.9106,
            "Maybe each segment then covers two cells, so multiply the four segment counts together.\n\n",
            "Wait, if a path changes direction exactly four times, it has five straight segments, because each change of direction starts a new segment; starting with R gives R-U-R-U-R.\n\n",
            small_ok=False,
        ),
        step(0.4949, "Let me recall that the number of compositions of n into k positive integers is C(n-1, k-1), by placing k-1 dividers in the n-1 gaps.\n\n"),
        step(0.2771, "Therefore, the total number is 2 * [C(7,2) * C(7,1)] = 2 * 21 * 7 = 294."),
    )
    return Scenario(
        question=(
            "Consider paths of length 16 that follow the lines from the lower left corner to the "
            "upper right corner on an 8x8 grid. Find the number of such paths that change "
            "direction exactly four times."
        ),
        steps=steps,
        answer="The number of such paths is \\boxed{294}.",
        answer_oracle="294",
    )


def main() -> int:
    OUT_DIR.mkdir(exist_ok=True)
    for name, scenario in (
        ("demo_binary_expansion", binary_expansion()),
        ("demo_gridpath", gridpath()),
    ):
        path = OUT_DIR / f"{name}.json"
        save_scenario(scenario, path)
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
