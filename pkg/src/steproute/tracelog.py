"""Persisted trace records: append-only JSONL, one routed request per line."""

from __future__ import annotations

import json
import threading
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

from .routing import Trace


class TraceLogError(ValueError):
    """A persisted record could not be parsed."""


@dataclass(frozen=True)
class StepRow:
    index: int
    h_init: float | None
    action: str  # "delegate" | "intervene"
    model: str  # "small" | "large"
    tokens: int
    latency_ms: float
    probed: bool = False
    discarded_small_tokens: int = 0
    score: float = 0.0


@dataclass(frozen=True)
class TraceTotals:
    intervention_rate: float
    small_tokens: int
    large_tokens: int
    probe_count: int
    total_latency_ms: float
    think_latency_ms: float
    answer_latency_ms: float
    answer_tokens: int


@dataclass(frozen=True)
class TraceRecord:
    request_id: str
    timestamp: str
    question: str
    rows: tuple[StepRow, ...]
    totals: TraceTotals
    final_answer: str
    policy: str = ""
    threshold: float = 0.0
    failure: str | None = None

    @staticmethod
    def from_trace(
        trace: Trace,
        request_id: str,
        timestamp: str | None = None,
        failure: str | None = None,
    ) -> "TraceRecord":
        rows = tuple(
            StepRow(
                index=decision.step_index,
                h_init=decision.h_init_nats,
                action=decision.action.value,
                model=step.generator,
                tokens=step.token_count,
                latency_ms=step.latency_ms,
                probed=decision.probed,
                discarded_small_tokens=decision.discarded_tokens,
                score=decision.score,
            )
            for step, decision in zip(trace.steps, trace.decisions)
        )
        totals = compute_totals(rows, trace)
        return TraceRecord(
            request_id=request_id,
            timestamp=timestamp or datetime.now(timezone.utc).isoformat(),
            question=trace.question,
            rows=rows,
            totals=totals,
            final_answer=trace.final_answer,
            policy=trace.decisions[0].policy.value if trace.decisions else "",
            threshold=trace.decisions[0].threshold if trace.decisions else 0.0,
            failure=failure,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "TraceRecord":
        try:
            rows = tuple(StepRow(**row) for row in data["rows"])
            totals = TraceTotals(**data["totals"])
            return TraceRecord(
                request_id=data["request_id"],
                timestamp=data["timestamp"],
                question=data["question"],
                rows=rows,
                totals=totals,
                final_answer=data["final_answer"],
                policy=data.get("policy", ""),
                threshold=float(data.get("threshold", 0.0)),
                failure=data.get("failure"),
            )
        except (KeyError, TypeError) as exc:
            raise TraceLogError(f"malformed trace record: {exc}") from exc


def compute_totals(rows: tuple[StepRow, ...], trace: Trace) -> TraceTotals:
    """Totals derived from the rows themselves plus the answer call."""
    think_latency = sum(row.latency_ms for row in rows)
    small = sum(row.tokens for row in rows if row.model == "small")
    small += sum(row.discarded_small_tokens for row in rows)
    large = sum(row.tokens for row in rows if row.model == "large")
    return TraceTotals(
        intervention_rate=trace.accounting.intervention_rate,
        small_tokens=small,
        large_tokens=large + trace.accounting.answer_tokens,
        probe_count=sum(1 for row in rows if row.probed),
        total_latency_ms=think_latency + trace.accounting.answer_wall_ms,
        think_latency_ms=think_latency,
        answer_latency_ms=trace.accounting.answer_wall_ms,
        answer_tokens=trace.accounting.answer_tokens,
    )


class TraceSink:
    """Append-only JSONL sink; appends are serialized under a lock."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, record: TraceRecord) -> None:
        line = json.dumps(record.to_dict(), ensure_ascii=False)
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(line + "\n")

    def read_all(self) -> list[TraceRecord]:
        return read_records(self.path)


def read_records(path: str | Path) -> list[TraceRecord]:
    path = Path(path)
    if not path.exists():
        return []
    records = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            records.append(TraceRecord.from_dict(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise TraceLogError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
    return records


def metric_values(records: list[TraceRecord], metric: str) -> list[float]:
    """Pull one metric's per-step values out of persisted records.

    h_init comes from probe-bearing rows; h_step / ppl_step come from the
    decision scores of traces routed under the matching generate-then-measure
    policy.
    """
    wanted_policy = {"h_step": "step_entropy", "ppl_step": "step_perplexity"}.get(metric)
    values: list[float] = []
    for record in records:
        for row in record.rows:
            if metric == "h_init" and row.h_init is not None:
                values.append(row.h_init)
            elif wanted_policy is not None and record.policy == wanted_policy:
                values.append(row.score)
    return values
