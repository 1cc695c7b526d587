import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from steproute.uncertainty import (
    EmptyStepError,
    InvalidDistributionError,
    MalformedProbeError,
    StepLogprobs,
    TokenDistribution,
    initial_token_entropy,
    normalize_probe,
    shannon_entropy,
    step_entropy,
    step_perplexity,
)


def entropy_oracle(probs):
    """Independent route: vectorized numpy summation."""
    p = np.asarray([q for q in probs if q > 0], dtype=float)
    return float(np.sum(-p * np.log(p)))


def dist(*probs, tail=0.0):
    entries = tuple((f"t{i}", p) for i, p in enumerate(sorted(probs, reverse=True)))
    return TokenDistribution(entries=entries, tail_mass=tail)


class TestShannonEntropy:
    def test_one_hot_is_zero(self):
        assert shannon_entropy(dist(1.0)) == 0.0

    def test_uniform_four(self):
        assert shannon_entropy(dist(0.25, 0.25, 0.25, 0.25)) == pytest.approx(math.log(4), abs=1e-12)

    def test_half_quarter_quarter(self):
        # -sum p ln p with terms evaluated one by one.
        expected = entropy_oracle([0.5, 0.25, 0.25])
        assert expected == pytest.approx(1.0397207708399179, abs=1e-12)
        assert shannon_entropy(dist(0.5, 0.25, 0.25)) == pytest.approx(expected, abs=1e-12)

    def test_tail_counts_as_one_outcome(self):
        value = shannon_entropy(dist(0.7, 0.2, tail=0.1))
        assert value == pytest.approx(entropy_oracle([0.7, 0.2, 0.1]), abs=1e-12)
        assert value == pytest.approx(0.8018185525433374, abs=1e-9)

    def test_rejects_bad_mass(self):
        bad = TokenDistribution(entries=(("a", 0.5), ("b", 0.3)), tail_mass=0.0)
        with pytest.raises(InvalidDistributionError):
            shannon_entropy(bad)

    def test_rejects_nonpositive_entry(self):
        bad = TokenDistribution(entries=(("a", 1.0), ("b", 0.0)), tail_mass=0.0)
        with pytest.raises(InvalidDistributionError):
            shannon_entropy(bad)

    def test_rejects_unsorted_entries(self):
        bad = TokenDistribution(entries=(("a", 0.3), ("b", 0.7)), tail_mass=0.0)
        with pytest.raises(InvalidDistributionError):
            shannon_entropy(bad)


class TestInitialTokenEntropy:
    def test_one_hot(self):
        assert initial_token_entropy(dist(1.0)) == 0.0

    def test_uniform_two(self):
        assert initial_token_entropy(dist(0.5, 0.5)) == pytest.approx(math.log(2), abs=1e-12)

    def test_matches_shannon(self):
        d = dist(0.7, 0.2, tail=0.1)
        assert initial_token_entropy(d) == shannon_entropy(d)


class TestStepEntropy:
    def test_single_deterministic_token(self):
        assert step_entropy(StepLogprobs(((0.0, 0.0),))) == 0.0

    def test_mean_of_two(self):
        step = StepLogprobs(((0.0, 0.0), (-0.1, math.log(2))))
        assert step_entropy(step) == pytest.approx(0.34657359027997264, abs=1e-12)

    def test_constant_mean_is_exact(self):
        for x in (0.0, 0.3, 1.7):
            step = StepLogprobs(tuple((-0.5, x) for _ in range(7)))
            assert step_entropy(step) == x

    def test_empty_step_rejected(self):
        with pytest.raises(EmptyStepError):
            step_entropy(StepLogprobs(()))


class TestStepPerplexity:
    def test_certain_tokens(self):
        assert step_perplexity(StepLogprobs(((0.0, 0.0), (0.0, 0.0)))) == 1.0

    def test_constant_half(self):
        lp = math.log(0.5)
        assert step_perplexity(StepLogprobs(((lp, 0.0), (lp, 0.0)))) == pytest.approx(2.0, abs=1e-12)

    def test_mixed(self):
        step = StepLogprobs(((math.log(0.25), 0.0), (0.0, 0.0)))
        assert step_perplexity(step) == pytest.approx(2.0, abs=1e-12)

    def test_empty_step_rejected(self):
        with pytest.raises(EmptyStepError):
            step_perplexity(StepLogprobs(()))


class TestNormalizeProbe:
    def test_exact_mass(self):
        d = normalize_probe([("a", math.log(0.6)), ("b", math.log(0.4))])
        assert d.entries[0] == ("a", pytest.approx(0.6))
        assert d.entries[1] == ("b", pytest.approx(0.4))
        assert d.tail_mass == pytest.approx(0.0, abs=1e-9)

    def test_tail_bucket_conserves_mass(self):
        d = normalize_probe([("a", math.log(0.5))])
        assert d.entries == (("a", pytest.approx(0.5)),)
        assert d.tail_mass == pytest.approx(0.5)

    def test_renormalize(self):
        d = normalize_probe([("a", math.log(0.5)), ("b", math.log(0.3))], policy="renormalize")
        assert d.entries[0][1] == pytest.approx(0.625)
        assert d.entries[1][1] == pytest.approx(0.375)
        assert d.tail_mass == 0.0

    def test_sorts_descending(self):
        d = normalize_probe([("lo", math.log(0.2)), ("hi", math.log(0.8))])
        assert [t for t, _ in d.entries] == ["hi", "lo"]

    def test_rejects_empty(self):
        with pytest.raises(MalformedProbeError):
            normalize_probe([])

    def test_rejects_nonfinite(self):
        with pytest.raises(MalformedProbeError):
            normalize_probe([("a", float("nan"))])

    def test_rejects_gross_excess(self):
        with pytest.raises(MalformedProbeError):
            normalize_probe([("a", math.log(0.9)), ("b", math.log(0.2))])

    def test_rejects_unknown_policy(self):
        with pytest.raises(MalformedProbeError):
            normalize_probe([("a", math.log(0.5))], policy="truncate")

    def test_small_overshoot_rescaled(self):
        # float round-trips can overshoot unit mass by a hair
        lp = math.log(0.5 + 2e-7)
        d = normalize_probe([("a", lp), ("b", lp)])
        total = sum(p for _, p in d.entries) + d.tail_mass
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_result_is_valid_distribution(self):
        d = normalize_probe([("a", math.log(0.61)), ("b", math.log(0.18)), ("c", math.log(0.11))])
        d.validate()


# -- property tests -----------------------------------------------------

random_probs = st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=1, max_size=64)


@st.composite
def random_distributions(draw):
    raw = draw(random_probs)
    keep_tail = draw(st.booleans())
    total = sum(raw)
    if keep_tail:
        tail_frac = draw(st.floats(min_value=0.0, max_value=0.5))
        scale = (1.0 - tail_frac) / total
        tail = 1.0 - sum(p * scale for p in raw)
    else:
        scale = 1.0 / total
        tail = max(0.0, 1.0 - sum(p * scale for p in raw))
    entries = tuple((f"t{i}", p) for i, p in enumerate(sorted((p * scale for p in raw), reverse=True)))
    return TokenDistribution(entries=entries, tail_mass=tail)


@given(random_distributions())
@settings(max_examples=300)
def test_entropy_nonnegative(d):
    assert shannon_entropy(d) >= 0.0


@given(random_distributions())
@settings(max_examples=300)
def test_entropy_upper_bound(d):
    outcomes = d.k + (1 if d.tail_mass > 0 else 0)
    assert shannon_entropy(d) <= math.log(outcomes) + 1e-9


@given(random_distributions(), st.randoms(use_true_random=False))
@settings(max_examples=200)
def test_permutation_invariance(d, rng):
    shuffled = list(d.entries)
    rng.shuffle(shuffled)
    # bypass the sortedness check: entropy is order-free by definition
    base = math.fsum(-p * math.log(p) for _, p in shuffled)
    if d.tail_mass > 0:
        base += -d.tail_mass * math.log(d.tail_mass)
    assert shannon_entropy(d) == pytest.approx(max(base, 0.0), abs=1e-12)


@given(st.lists(st.floats(min_value=-8.0, max_value=0.0), min_size=1, max_size=40))
@settings(max_examples=300)
def test_perplexity_at_least_one(logprobs):
    step = StepLogprobs(tuple((lp, 0.0) for lp in logprobs))
    assert step_perplexity(step) >= 1.0 - 1e-12


@given(
    st.lists(st.floats(min_value=-8.0, max_value=0.0), min_size=1, max_size=20),
    st.integers(min_value=0, max_value=19),
    st.floats(min_value=0.01, max_value=4.0),
)
@settings(max_examples=200)
def test_perplexity_monotone_in_logprob_drop(logprobs, which, drop):
    step = StepLogprobs(tuple((lp, 0.0) for lp in logprobs))
    which = which % len(logprobs)
    lowered = list(logprobs)
    lowered[which] -= drop
    worse = StepLogprobs(tuple((lp, 0.0) for lp in lowered))
    assert step_perplexity(worse) >= step_perplexity(step) - 1e-12


def test_entropy_oracle_equivalence_10k():
    """10k random truncated distributions against the numpy summation oracle."""
    rng = np.random.default_rng(2024)
    for _ in range(10_000):
        k = int(rng.integers(1, 65))
        raw = rng.dirichlet(np.full(k, 0.7))
        tail = float(rng.uniform(0.0, 0.4)) if rng.random() < 0.5 else 0.0
        probs = np.sort(raw * (1.0 - tail))[::-1]
        probs = probs[probs > 0]
        d = TokenDistribution(
            entries=tuple((f"t{i}", float(p)) for i, p in enumerate(probs)),
            tail_mass=1.0 - float(np.sum(probs)),
        )
        expected = entropy_oracle(list(probs) + ([d.tail_mass] if d.tail_mass > 0 else []))
        got = shannon_entropy(d)
        assert math.isclose(got, expected, rel_tol=1e-9, abs_tol=1e-12)
