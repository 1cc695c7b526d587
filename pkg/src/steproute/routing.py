"""Per-step routing between a small and a large backend.

The primary policy probes one token with the small model and dispatches the
step on the probe's entropy: below the threshold the small model keeps the
probe token and finishes the step, above it the probe is discarded and the
large model generates the step from the shared context. Step-level metric
policies (generate-then-measure) and trivial baselines are provided for
comparison. The final answer always comes from the large backend.
"""

from __future__ import annotations

import enum
import math
import random
import re
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

from .backends import (
    Backend,
    BackendError,
    Boundary,
    GenerationContext,
    MissingLogprobsError,
    SamplingParams,
)
from .segmenter import DEFAULT_BUDGET, DEFAULT_THINK_CLOSE, DEFAULT_THINK_OPEN
from .uncertainty import step_entropy, step_perplexity


class Policy(enum.Enum):
    INIT_ENTROPY = "init_entropy"
    STEP_ENTROPY = "step_entropy"
    STEP_PERPLEXITY = "step_perplexity"
    RANDOM_SCORE = "random_score"
    ALWAYS_SMALL = "always_small"
    ALWAYS_LARGE = "always_large"


class Action(enum.Enum):
    DELEGATE = "delegate"
    INTERVENE = "intervene"


class ConfigurationError(ValueError):
    """A policy configuration violates its invariants."""


@dataclass(frozen=True)
class PolicyConfig:
    policy: Policy = Policy.INIT_ENTROPY
    threshold: float = 0.9
    rng_seed: int = 0
    budget_tokens: int = DEFAULT_BUDGET
    sampling: SamplingParams = SamplingParams()

    def __post_init__(self) -> None:
        if not math.isfinite(self.threshold):
            raise ConfigurationError(f"threshold must be finite, got {self.threshold}")
        if self.budget_tokens < 1:
            raise ConfigurationError(f"budget_tokens must be >= 1, got {self.budget_tokens}")


@dataclass(frozen=True)
class RoutingDecision:
    step_index: int  # 1-based
    action: Action
    threshold: float
    policy: Policy
    probe_kept: bool
    score: float
    h_init_nats: float | None = None
    probed: bool = False
    discarded_tokens: int = 0
    probe_latency_ms: float = 0.0


@dataclass(frozen=True)
class StepMetrics:
    h_init: float | None = None
    h_step: float | None = None
    ppl_step: float | None = None


@dataclass(frozen=True)
class ReasoningStep:
    text: str
    generator: str  # "small" | "large"
    boundary: Boundary
    token_count: int
    metrics: StepMetrics = StepMetrics()
    latency_ms: float = 0.0


@dataclass(frozen=True)
class TraceAccounting:
    small_tokens: int = 0
    large_tokens: int = 0
    probe_count: int = 0
    discarded_small_tokens: int = 0
    think_tokens: int = 0
    answer_tokens: int = 0
    wall_ms_small: float = 0.0
    wall_ms_large: float = 0.0
    think_wall_ms: float = 0.0
    answer_wall_ms: float = 0.0
    intervention_rate: float = 0.0


@dataclass(frozen=True)
class Trace:
    question: str
    steps: tuple[ReasoningStep, ...]
    decisions: tuple[RoutingDecision, ...]
    final_answer: str
    answer_generator: str
    accounting: TraceAccounting

    @property
    def think_text(self) -> str:
        return "".join(step.text for step in self.steps)


class TraceFailure(RuntimeError):
    """A backend failed mid-trace; the partial trace rides along."""

    def __init__(self, message: str, partial_trace: Trace):
        super().__init__(message)
        self.partial_trace = partial_trace


def decide_init_entropy(h_init: float, threshold: float) -> Action:
    """Strict comparison: a tie delegates."""
    return Action.INTERVENE if h_init > threshold else Action.DELEGATE


@dataclass
class _StepCosts:
    small_tokens: int = 0
    large_tokens: int = 0
    discarded_small: int = 0
    wall_small: float = 0.0
    wall_large: float = 0.0


def _run_step(
    context: GenerationContext,
    small: Backend,
    large: Backend,
    config: PolicyConfig,
    rng: random.Random,
    budget_left: int,
    step_index: int,
) -> tuple[ReasoningStep, RoutingDecision, _StepCosts]:
    costs = _StepCosts()
    policy = config.policy

    if policy is Policy.INIT_ENTROPY:
        probe = small.probe_first(context)
        h_init = probe.entropy
        action = decide_init_entropy(h_init, config.threshold)
        costs.wall_small += probe.latency_ms
        if action is Action.DELEGATE:
            result = small.generate_step(context, prefix=probe.token, budget_left=budget_left)
            generator = "small"
            costs.small_tokens += result.token_count
            costs.wall_small += result.latency_ms
            discarded = 0
        else:
            result = large.generate_step(context, budget_left=budget_left)
            generator = "large"
            costs.small_tokens += 1  # the discarded probe still cost one decode
            costs.discarded_small += 1
            costs.large_tokens += result.token_count
            costs.wall_large += result.latency_ms
            discarded = 1
        step = ReasoningStep(
            text=result.text,
            generator=generator,
            boundary=result.boundary,
            token_count=result.token_count,
            metrics=StepMetrics(h_init=h_init),
            latency_ms=probe.latency_ms + result.latency_ms,
        )
        decision = RoutingDecision(
            step_index=step_index,
            action=action,
            threshold=config.threshold,
            policy=policy,
            probe_kept=action is Action.DELEGATE,
            score=h_init,
            h_init_nats=h_init,
            probed=True,
            discarded_tokens=discarded,
            probe_latency_ms=probe.latency_ms,
        )
        return step, decision, costs

    if policy in (Policy.STEP_ENTROPY, Policy.STEP_PERPLEXITY):
        candidate = small.generate_step(context, budget_left=budget_left, want_logprobs=True)
        costs.wall_small += candidate.latency_ms
        if candidate.logprobs and len(candidate.logprobs) > 0:
            if policy is Policy.STEP_ENTROPY:
                score = step_entropy(candidate.logprobs)
            else:
                score = step_perplexity(candidate.logprobs)
        elif candidate.token_count > 0:
            raise MissingLogprobsError(
                f"backend {small.model!r} returned no per-token logprobs; "
                f"{policy.value} routing cannot score the candidate step"
            )
        else:
            score = 0.0  # empty candidate (immediate think close); nothing to score
        action = Action.INTERVENE if score > config.threshold else Action.DELEGATE
        metrics = StepMetrics(
            h_step=score if policy is Policy.STEP_ENTROPY else None,
            ppl_step=score if policy is Policy.STEP_PERPLEXITY else None,
        )
        if action is Action.DELEGATE:
            costs.small_tokens += candidate.token_count
            step = ReasoningStep(
                text=candidate.text,
                generator="small",
                boundary=candidate.boundary,
                token_count=candidate.token_count,
                metrics=metrics,
                latency_ms=candidate.latency_ms,
            )
            discarded = 0
        else:
            # Generate-then-measure sunk cost: the candidate is thrown away.
            result = large.generate_step(context, budget_left=budget_left)
            costs.small_tokens += candidate.token_count
            costs.discarded_small += candidate.token_count
            costs.large_tokens += result.token_count
            costs.wall_large += result.latency_ms
            step = ReasoningStep(
                text=result.text,
                generator="large",
                boundary=result.boundary,
                token_count=result.token_count,
                metrics=metrics,
                latency_ms=candidate.latency_ms + result.latency_ms,
            )
            discarded = candidate.token_count
        decision = RoutingDecision(
            step_index=step_index,
            action=action,
            threshold=config.threshold,
            policy=policy,
            probe_kept=action is Action.DELEGATE,
            score=score,
            discarded_tokens=discarded,
        )
        return step, decision, costs

    if policy is Policy.RANDOM_SCORE:
        score = float(rng.randint(0, 9))
        action = Action.INTERVENE if score > config.threshold else Action.DELEGATE
    elif policy is Policy.ALWAYS_SMALL:
        score = 0.0
        action = Action.DELEGATE
    elif policy is Policy.ALWAYS_LARGE:
        score = 0.0
        action = Action.INTERVENE
    else:  # pragma: no cover - exhaustive over Policy
        raise ConfigurationError(f"unhandled policy {policy}")

    backend = small if action is Action.DELEGATE else large
    generator = "small" if action is Action.DELEGATE else "large"
    result = backend.generate_step(context, budget_left=budget_left)
    if generator == "small":
        costs.small_tokens += result.token_count
        costs.wall_small += result.latency_ms
    else:
        costs.large_tokens += result.token_count
        costs.wall_large += result.latency_ms
    step = ReasoningStep(
        text=result.text,
        generator=generator,
        boundary=result.boundary,
        token_count=result.token_count,
        latency_ms=result.latency_ms,
    )
    decision = RoutingDecision(
        step_index=step_index,
        action=action,
        threshold=config.threshold,
        policy=policy,
        probe_kept=action is Action.DELEGATE,
        score=score,
    )
    return step, decision, costs


def _assemble(
    question: str,
    steps: list[ReasoningStep],
    decisions: list[RoutingDecision],
    final_answer: str,
    accounting: TraceAccounting,
) -> Trace:
    interventions = sum(1 for d in decisions if d.action is Action.INTERVENE)
    rate = interventions / len(decisions) if decisions else 0.0
    return Trace(
        question=question,
        steps=tuple(steps),
        decisions=tuple(decisions),
        final_answer=final_answer,
        answer_generator="large",
        accounting=replace(accounting, intervention_rate=rate),
    )


def run_trace(
    question: str,
    small: Backend,
    large: Backend,
    config: PolicyConfig,
    think_open: str = DEFAULT_THINK_OPEN,
    think_close: str = DEFAULT_THINK_CLOSE,
) -> Trace:
    """Route one question end to end and return the full trace.

    Raises TraceFailure (with the partial trace attached) if a backend call
    fails; configuration problems surface as ConfigurationError before any
    backend is contacted.
    """
    context = GenerationContext(question=question, think_open=think_open, think_close=think_close)
    rng = random.Random(config.rng_seed)
    steps: list[ReasoningStep] = []
    decisions: list[RoutingDecision] = []
    acct = _StepCosts()
    think_tokens = 0
    probe_count = 0
    think_wall = 0.0

    try:
        while True:
            budget_left = config.budget_tokens - think_tokens
            if budget_left < 1:
                break
            step, decision, costs = _run_step(
                context, small, large, config, rng, budget_left, len(steps) + 1
            )
            steps.append(step)
            decisions.append(decision)
            acct.small_tokens += costs.small_tokens
            acct.large_tokens += costs.large_tokens
            acct.discarded_small += costs.discarded_small
            acct.wall_small += costs.wall_small
            acct.wall_large += costs.wall_large
            think_wall += step.latency_ms
            think_tokens += step.token_count
            probe_count += 1 if decision.probed else 0
            if step.text:
                context = context.with_step(step.text)
            if step.boundary is not Boundary.DELIMITER or step.token_count == 0:
                break

        answer = large.generate_answer(context)
        accounting = TraceAccounting(
            small_tokens=acct.small_tokens,
            large_tokens=acct.large_tokens + answer.token_count,
            probe_count=probe_count,
            discarded_small_tokens=acct.discarded_small,
            think_tokens=think_tokens,
            answer_tokens=answer.token_count,
            wall_ms_small=acct.wall_small,
            wall_ms_large=acct.wall_large + answer.latency_ms,
            think_wall_ms=think_wall,
            answer_wall_ms=answer.latency_ms,
        )
        return _assemble(question, steps, decisions, answer.text, accounting)
    except BackendError as exc:
        accounting = TraceAccounting(
            small_tokens=acct.small_tokens,
            large_tokens=acct.large_tokens,
            probe_count=probe_count,
            discarded_small_tokens=acct.discarded_small,
            think_tokens=think_tokens,
            wall_ms_small=acct.wall_small,
            wall_ms_large=acct.wall_large,
            think_wall_ms=think_wall,
        )
        partial = _assemble(question, steps, decisions, "", accounting)
        raise TraceFailure(str(exc), partial) from exc


# -- threshold sweeps ---------------------------------------------------------


_BOXED_RE = re.compile(r"\\boxed\{([^{}]*)\}")


def boxed_answer(text: str) -> str | None:
    """Content of the last boxed expression in an answer, if any."""
    found = _BOXED_RE.findall(text)
    return found[-1] if found else None


def exact_boxed_oracle(expected: str) -> Callable[[str], bool]:
    """Default accuracy proxy: exact match on the boxed answer string."""

    def check(answer: str) -> bool:
        got = boxed_answer(answer)
        return (got if got is not None else answer.strip()) == expected

    return check


@dataclass(frozen=True)
class SweepCase:
    """One question to route during a sweep.

    make_backends returns a fresh (small, large) pair per run; latency_of
    overrides the measured wall time (simulated sweeps plug a cost model in).
    """

    question: str
    make_backends: Callable[[], tuple[Backend, Backend]]
    answer_oracle: Callable[[str], bool] | None = None
    latency_of: Callable[[Trace], float] | None = None


@dataclass(frozen=True)
class SweepCell:
    threshold: float
    n_traces: int
    n_errors: int
    intervention_rate: float
    mean_latency_ms: float
    accuracy: float | None


@dataclass(frozen=True)
class SweepReport:
    policy: Policy
    rows: tuple[SweepCell, ...]


DEFAULT_SWEEP_THRESHOLDS = (0.01, 0.1, 0.6, 0.9, 1.8)


def sweep(
    cases: Sequence[SweepCase],
    thresholds: Iterable[float] = DEFAULT_SWEEP_THRESHOLDS,
    config: PolicyConfig = PolicyConfig(),
) -> SweepReport:
    """Route every case at every threshold; failures skip the cell's trace.

    Intervention rates are pooled over steps; latency is the mean per trace.
    """
    thresholds = list(thresholds)
    if not thresholds:
        raise ConfigurationError("threshold list is empty")
    rows: list[SweepCell] = []
    for tau in thresholds:
        cfg = replace(config, threshold=tau)
        interventions = 0
        total_steps = 0
        latencies: list[float] = []
        correct = 0
        with_oracle = 0
        errors = 0
        traces = 0
        for case in cases:
            small, large = case.make_backends()
            try:
                trace = run_trace(case.question, small, large, cfg)
            except TraceFailure:
                errors += 1
                continue
            traces += 1
            interventions += sum(1 for d in trace.decisions if d.action is Action.INTERVENE)
            total_steps += len(trace.decisions)
            if case.latency_of is not None:
                latencies.append(case.latency_of(trace))
            else:
                latencies.append(trace.accounting.think_wall_ms + trace.accounting.answer_wall_ms)
            if case.answer_oracle is not None:
                with_oracle += 1
                if case.answer_oracle(trace.final_answer):
                    correct += 1
        rows.append(
            SweepCell(
                threshold=tau,
                n_traces=traces,
                n_errors=errors,
                intervention_rate=interventions / total_steps if total_steps else 0.0,
                mean_latency_ms=sum(latencies) / len(latencies) if latencies else 0.0,
                accuracy=correct / with_oracle if with_oracle else None,
            )
        )
    return SweepReport(policy=config.policy, rows=tuple(rows))
