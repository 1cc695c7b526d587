"""Entropy and perplexity metrics over token probability distributions.

All values are in nats (natural log). Backends return truncated top-k
logprobs, so a distribution is a list of explicit candidates plus one
aggregate "tail" outcome holding the unseen probability mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

SUM_TOLERANCE = 1e-6
EXCESS_TOLERANCE = 1e-4


class InvalidDistributionError(ValueError):
    """A token distribution violates its mass or ordering invariants."""


class EmptyStepError(ValueError):
    """A per-token metric was requested for a zero-length step."""


class MalformedProbeError(ValueError):
    """Raw top-k logprobs could not be turned into a distribution."""


@dataclass(frozen=True)
class TokenDistribution:
    """Truncated first-token distribution: top-k candidates plus tail mass.

    entries are (token_text, probability) sorted by descending probability;
    tail_mass aggregates every token not listed. Probabilities plus tail
    must sum to 1 within SUM_TOLERANCE.
    """

    entries: tuple[tuple[str, float], ...]
    tail_mass: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple((str(t), float(p)) for t, p in self.entries))
        # Float noise in 1 - sum(p) wanders a hair below zero; gross deficits
        # are still caught by the mass check in validate().
        object.__setattr__(self, "tail_mass", max(0.0, float(self.tail_mass)))

    @property
    def k(self) -> int:
        return len(self.entries)

    @property
    def top_token(self) -> str:
        return self.entries[0][0]

    def validate(self) -> None:
        if not self.entries:
            raise InvalidDistributionError("distribution has no entries")
        prev = math.inf
        for token, p in self.entries:
            if not math.isfinite(p) or p <= 0:
                raise InvalidDistributionError(f"non-positive probability {p!r} for token {token!r}")
            if p > prev:
                raise InvalidDistributionError("entries not sorted by descending probability")
            prev = p
        total = math.fsum(p for _, p in self.entries) + self.tail_mass
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise InvalidDistributionError(f"probability mass sums to {total}, expected 1 +/- {SUM_TOLERANCE}")


@dataclass(frozen=True)
class StepLogprobs:
    """Per-token record of one generated step.

    Each element is (logprob of the sampled token, entropy of the token's
    full distribution), both in nats.
    """

    per_token: tuple[tuple[float, float], ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.per_token)


def shannon_entropy(dist: TokenDistribution) -> float:
    """Entropy of a distribution in nats; the tail bucket counts as one outcome.

    0 * ln 0 is taken as 0, so one-hot distributions score exactly 0.
    """
    dist.validate()
    total = -math.fsum(p * math.log(p) for _, p in dist.entries)
    if dist.tail_mass > 0:
        total -= dist.tail_mass * math.log(dist.tail_mass)
    # Tiny negative results are float noise from the fsum; entropy is >= 0.
    return max(total, 0.0)


def initial_token_entropy(probe: TokenDistribution) -> float:
    """Entropy of a step's first-token distribution given the step's context."""
    return shannon_entropy(probe)


def step_entropy(step: StepLogprobs) -> float:
    """Mean per-token entropy across a whole step, in nats."""
    if len(step) == 0:
        raise EmptyStepError("step entropy of an empty step is undefined")
    return math.fsum(e for _, e in step.per_token) / len(step)


def step_perplexity(step: StepLogprobs) -> float:
    """exp of the mean negative log-likelihood of the step's sampled tokens."""
    if len(step) == 0:
        raise EmptyStepError("step perplexity of an empty step is undefined")
    mean_logprob = math.fsum(lp for lp, _ in step.per_token) / len(step)
    return math.exp(-mean_logprob)


def normalize_probe(
    raw: list[tuple[str, float]] | tuple[tuple[str, float], ...],
    policy: str = "tail-bucket",
) -> TokenDistribution:
    """Turn raw (token, logprob) candidates into a TokenDistribution.

    policy "tail-bucket" (default) keeps the unseen mass as one aggregate
    outcome; "renormalize" rescales the entries to sum to 1 with zero tail.
    Logprob round-trips may overshoot unit mass by float noise; overshoot
    up to EXCESS_TOLERANCE is rescaled away, anything larger is an error.
    """
    if not raw:
        raise MalformedProbeError("empty logprob list")
    if policy not in ("tail-bucket", "renormalize"):
        raise MalformedProbeError(f"unknown normalization policy {policy!r}")
    probs: list[tuple[str, float]] = []
    for token, logprob in raw:
        if not math.isfinite(logprob):
            raise MalformedProbeError(f"non-finite logprob {logprob!r} for token {token!r}")
        if logprob > SUM_TOLERANCE:
            raise MalformedProbeError(f"positive logprob {logprob!r} for token {token!r}")
        probs.append((token, min(math.exp(logprob), 1.0)))
    probs.sort(key=lambda item: item[1], reverse=True)
    total = math.fsum(p for _, p in probs)
    if total > 1.0 + EXCESS_TOLERANCE:
        raise MalformedProbeError(f"probabilities sum to {total}, more than 1 + {EXCESS_TOLERANCE}")
    if policy == "renormalize" or total > 1.0:
        entries = tuple((token, p / total) for token, p in probs)
        return TokenDistribution(entries=entries, tail_mass=0.0)
    return TokenDistribution(entries=tuple(probs), tail_mass=max(0.0, 1.0 - total))
