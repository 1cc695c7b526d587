import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from steproute.analysis import (
    AlignmentPair,
    AnalysisError,
    MetricSample,
    alignment_by_bin,
    bimodality_coefficient,
    histogram,
    ngram_overlap,
    sweep_table,
    write_histogram_data,
)
from steproute.routing import Policy, SweepCell, SweepReport


class TestMetricSample:
    def test_valid(self):
        MetricSample(step_id="t1", metric_name="h_init", value=0.5)

    def test_rejects_unknown_metric(self):
        with pytest.raises(AnalysisError):
            MetricSample(step_id="t1", metric_name="nope", value=0.5)

    def test_rejects_sub_one_perplexity(self):
        with pytest.raises(AnalysisError):
            MetricSample(step_id="t1", metric_name="ppl_step", value=0.5)


class TestHistogram:
    def test_four_values_two_bins(self):
        hist = histogram([0, 1, 2, 3], 2)
        assert hist.counts == (2, 2)

    def test_all_equal_single_occupied_bin(self):
        hist = histogram([1.5] * 10, 4)
        assert sum(1 for c in hist.counts if c > 0) == 1
        assert sum(hist.counts) == 10

    def test_mass_conservation(self):
        rng = np.random.default_rng(0)
        values = rng.normal(size=1000).tolist()
        hist = histogram(values, 17)
        assert sum(hist.counts) == 1000
        assert sum(hist.frequencies) == pytest.approx(1.0)

    def test_empty_rejected(self):
        with pytest.raises(AnalysisError):
            histogram([], 4)
        with pytest.raises(AnalysisError):
            histogram([1.0], 0)

    def test_gnuplot_output(self, tmp_path):
        hist = histogram([0, 1, 2, 3], 2)
        out = tmp_path / "h.dat"
        write_histogram_data(hist, out)
        lines = out.read_text().splitlines()
        assert lines[0].startswith("#")
        assert len(lines) == 3
        assert lines[1].split()[2] == "2"


class TestBimodalityCoefficient:
    def test_uniform_near_five_ninths(self):
        rng = np.random.default_rng(7)
        values = rng.uniform(0, 1, size=200_000)
        # oracle: population skew 0 and excess kurtosis -1.2 give 1/(1.8)
        assert bimodality_coefficient(values) == pytest.approx(5 / 9, abs=0.01)

    def test_two_point_mass_approaches_one(self):
        small = bimodality_coefficient([0.0, 1.0] * 200)
        big = bimodality_coefficient([0.0, 1.0] * 2000)
        assert small < big < 1.0
        assert big > 0.99

    def test_normal_near_one_third(self):
        rng = np.random.default_rng(9)
        values = rng.normal(0, 1, size=200_000)
        assert bimodality_coefficient(values) == pytest.approx(1 / 3, abs=0.01)

    def test_small_sample_rejected(self):
        with pytest.raises(AnalysisError):
            bimodality_coefficient([1.0, 2.0, 3.0])

    def test_two_point_exact_moments(self):
        # closed-form check at n=1000: m-based excess kurtosis is exactly -2
        n = 1000
        values = [0.0, 1.0] * (n // 2)
        correction = 3 * (n - 1) ** 2 / ((n - 2) * (n - 3))
        expected = 1.0 / (-2.0 + correction)
        assert bimodality_coefficient(values) == pytest.approx(expected, rel=1e-12)


class TestNgramOverlap:
    def test_identical_is_one(self):
        assert ngram_overlap("a b c d e", "a b c d e") == pytest.approx(1.0)

    def test_identical_single_token(self):
        assert ngram_overlap("x", "x") == pytest.approx(1.0)

    def test_disjoint_vocabulary_floor(self):
        ref = " ".join(f"r{i}" for i in range(24))
        cand = " ".join(f"c{i}" for i in range(24))
        assert ngram_overlap(ref, cand) < 0.05

    def test_hand_counted_example(self):
        # precisions 3/4, 2/3, 1/2 and smoothed 4-gram (0+1)/(1+1)
        expected = (0.75 * (2 / 3) * 0.5 * 0.5) ** 0.25
        assert ngram_overlap("a b c d", "a b c e") == pytest.approx(expected, rel=1e-12)

    def test_brevity_penalty_applies(self):
        full = ngram_overlap("a b c d", "a b c d")
        short = ngram_overlap("a b c d", "a b")
        assert short < full
        # p1 = p2 = 1, smoothed p3 = p4 = 1, BP = exp(1 - 4/2)
        assert short == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(AnalysisError):
            ngram_overlap("", "a")
        with pytest.raises(AnalysisError):
            ngram_overlap("a", " ")

    @given(st.lists(st.sampled_from(["a", "b", "c", "d"]), min_size=1, max_size=12))
    @settings(max_examples=200)
    def test_self_overlap_is_always_one(self, words):
        text = " ".join(words)
        assert ngram_overlap(text, text) == pytest.approx(1.0, abs=1e-12)


class TestAlignmentByBin:
    def test_identical_pairs_score_one_everywhere(self):
        pairs = [AlignmentPair(h, "x y z", "x y z") for h in (0.1, 0.5, 1.5, 2.5)]
        stats = alignment_by_bin(pairs, [0, 1, 2, 3])
        for stat in stats:
            if stat.count:
                assert stat.mean_overlap == pytest.approx(1.0)

    def test_divergence_above_threshold(self):
        low = [AlignmentPair(0.3, "p q r s", "p q r s") for _ in range(5)]
        high = [AlignmentPair(1.7, "p q r s", "p q zz ww") for _ in range(5)]
        stats = alignment_by_bin(low + high, [0.0, 1.0, 2.0])
        assert stats[0].mean_overlap > stats[1].mean_overlap

    def test_single_bin_equals_global_mean(self):
        pairs = [
            AlignmentPair(0.2, "a b c", "a b c"),
            AlignmentPair(0.9, "a b c", "a x c"),
            AlignmentPair(1.4, "a b c", "x y z"),
        ]
        stats = alignment_by_bin(pairs, [0.0, 2.0])
        expected = sum(ngram_overlap(p.small_text, p.large_text) for p in pairs) / 3
        assert stats[0].mean_overlap == pytest.approx(expected, abs=1e-12)

    def test_empty_bins_flagged(self):
        pairs = [AlignmentPair(0.1, "a", "a")]
        stats = alignment_by_bin(pairs, [0.0, 1.0, 2.0])
        assert stats[1].count == 0 and stats[1].mean_overlap is None

    def test_bad_edges_rejected(self):
        pairs = [AlignmentPair(0.1, "a", "a")]
        with pytest.raises(AnalysisError):
            alignment_by_bin(pairs, [1.0, 1.0])
        with pytest.raises(AnalysisError):
            alignment_by_bin([], [0.0, 1.0])


class TestSweepTable:
    def make_report(self, rows):
        return SweepReport(policy=Policy.INIT_ENTROPY, rows=tuple(rows))

    def test_five_rows(self):
        rows = [
            SweepCell(t, 10, 0, rate, 1000.0 + 100 * rate, 0.8)
            for t, rate in zip((0.01, 0.1, 0.6, 0.9, 1.8), (1.0, 0.8, 0.4, 0.25, 0.02))
        ]
        csv_text, aligned = sweep_table(self.make_report(rows))
        lines = csv_text.strip().splitlines()
        assert len(lines) == 6
        assert lines[0].startswith("threshold")
        assert "100.00" in lines[1]  # rate as percentage
        assert len(aligned.splitlines()) == 6

    def test_empty_report_is_header_only(self):
        csv_text, aligned = sweep_table(self.make_report([]))
        assert csv_text.strip().splitlines() == ["threshold,accuracy_pct,latency_ms,intervention_rate_pct"]
        assert len(aligned.splitlines()) == 1

    def test_always_large_row_shows_100(self):
        rows = [SweepCell(-1.0, 5, 0, 1.0, 500.0, None)]
        csv_text, aligned = sweep_table(self.make_report(rows))
        assert "100.00" in csv_text
        assert "-" in aligned.splitlines()[1]  # accuracy placeholder
