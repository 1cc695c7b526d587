"""Offline analysis over recorded or simulated traces.

Covers metric-distribution histograms, a moment-based bimodality statistic,
lexical n-gram overlap between small- and large-model step texts, overlap
binned by probe entropy, and sweep-report rendering.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .routing import SweepReport

METRIC_NAMES = ("h_init", "h_step", "ppl_step")


class AnalysisError(ValueError):
    """Analysis input is empty or malformed."""


@dataclass(frozen=True)
class MetricSample:
    step_id: str
    metric_name: str
    value: float

    def __post_init__(self) -> None:
        if self.metric_name not in METRIC_NAMES:
            raise AnalysisError(f"unknown metric {self.metric_name!r}")
        if self.value < 0:
            raise AnalysisError(f"metric value {self.value} is negative")
        if self.metric_name == "ppl_step" and self.value < 1:
            raise AnalysisError(f"perplexity {self.value} below 1")


@dataclass(frozen=True)
class AlignmentPair:
    h_init: float
    small_text: str
    large_text: str
    provenance: str = ""


@dataclass(frozen=True)
class Histogram:
    bin_edges: tuple[float, ...]
    counts: tuple[int, ...]

    @property
    def frequencies(self) -> tuple[float, ...]:
        total = sum(self.counts)
        return tuple(c / total for c in self.counts) if total else tuple(0.0 for _ in self.counts)


def histogram(values: Sequence[float], bin_count: int) -> Histogram:
    """Equal-width histogram over [min, max]; counts sum to len(values)."""
    if bin_count < 1:
        raise AnalysisError("bin_count must be >= 1")
    if len(values) == 0:
        raise AnalysisError("no samples to histogram")
    counts, edges = np.histogram(np.asarray(values, dtype=float), bins=bin_count)
    return Histogram(bin_edges=tuple(float(e) for e in edges), counts=tuple(int(c) for c in counts))


def write_histogram_data(hist: Histogram, path: str | Path) -> None:
    """Write a gnuplot-friendly table: bin_left bin_right count frequency."""
    lines = ["# bin_left bin_right count frequency"]
    for i, count in enumerate(hist.counts):
        lo, hi = hist.bin_edges[i], hist.bin_edges[i + 1]
        lines.append(f"{lo:.9g} {hi:.9g} {count} {hist.frequencies[i]:.9g}")
    Path(path).write_text("\n".join(lines) + "\n")


BIMODALITY_THRESHOLD = 5.0 / 9.0


def bimodality_coefficient(values: Sequence[float]) -> float:
    """Sarle's moment-based bimodality statistic; > 5/9 suggests bimodality.

    Uses the plain moment estimators for skewness and excess kurtosis with
    the usual small-sample correction in the denominator.
    """
    n = len(values)
    if n < 4:
        raise AnalysisError(f"need at least 4 samples, got {n}")
    arr = np.asarray(values, dtype=float)
    g1 = float(stats.skew(arr, bias=True))
    g2 = float(stats.kurtosis(arr, fisher=True, bias=True))
    correction = 3.0 * (n - 1) ** 2 / ((n - 2) * (n - 3))
    return (g1 * g1 + 1.0) / (g2 + correction)


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def ngram_overlap(reference: str, candidate: str, max_n: int = 4) -> float:
    """Lexical overlap: smoothed geometric mean of n-gram precisions times
    the brevity penalty. Whitespace tokenization; zero-match orders get
    add-one smoothing."""
    ref_tokens = reference.split()
    cand_tokens = candidate.split()
    if not ref_tokens or not cand_tokens:
        raise AnalysisError("overlap of empty text is undefined")
    log_precisions = []
    for n in range(1, max_n + 1):
        cand_counts = _ngram_counts(cand_tokens, n)
        ref_counts = _ngram_counts(ref_tokens, n)
        possible = max(len(cand_tokens) - n + 1, 0)
        clipped = sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
        if clipped == 0 or possible == 0:
            precision = (clipped + 1.0) / (possible + 1.0)
        else:
            precision = clipped / possible
        log_precisions.append(math.log(precision))
    geo_mean = math.exp(sum(log_precisions) / max_n)
    c, r = len(cand_tokens), len(ref_tokens)
    brevity = 1.0 if c >= r else math.exp(1.0 - r / c)
    return geo_mean * brevity


@dataclass(frozen=True)
class BinStat:
    lo: float
    hi: float
    count: int
    mean_overlap: float | None  # None flags an empty bin


def alignment_by_bin(
    pairs: Sequence[AlignmentPair],
    bin_edges: Sequence[float],
    max_n: int = 4,
) -> list[BinStat]:
    """Mean small/large overlap per probe-entropy interval.

    Bins are [lo, hi) with the last bin closed on the right; pairs outside
    the edges are ignored.
    """
    if not pairs:
        raise AnalysisError("no alignment pairs")
    edges = list(bin_edges)
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise AnalysisError("bin edges must be strictly increasing")
    sums = [0.0] * (len(edges) - 1)
    counts = [0] * (len(edges) - 1)
    last = len(edges) - 2
    for pair in pairs:
        h = pair.h_init
        if h < edges[0] or h > edges[-1]:
            continue
        idx = min(int(np.searchsorted(edges, h, side="right")) - 1, last)
        idx = max(idx, 0)
        sums[idx] += ngram_overlap(pair.small_text, pair.large_text, max_n=max_n)
        counts[idx] += 1
    return [
        BinStat(
            lo=edges[i],
            hi=edges[i + 1],
            count=counts[i],
            mean_overlap=(sums[i] / counts[i]) if counts[i] else None,
        )
        for i in range(len(edges) - 1)
    ]


def sweep_table(report: SweepReport) -> tuple[str, str]:
    """Render a sweep report as (csv_text, aligned_text).

    Rates and accuracy are percentages; latency keeps the report's unit.
    """
    header = ["threshold", "accuracy_pct", "latency_ms", "intervention_rate_pct"]
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    aligned = [f"{'thr':>8}  {'acc%':>7}  {'lat(ms)':>10}  {'rate%':>7}"]
    for row in report.rows:
        acc = f"{row.accuracy * 100:.2f}" if row.accuracy is not None else ""
        writer.writerow([f"{row.threshold:g}", acc, f"{row.mean_latency_ms:.1f}", f"{row.intervention_rate * 100:.2f}"])
        aligned.append(
            f"{row.threshold:>8g}  {acc or '-':>7}  {row.mean_latency_ms:>10.1f}  {row.intervention_rate * 100:>7.2f}"
        )
    return buf.getvalue(), "\n".join(aligned)
