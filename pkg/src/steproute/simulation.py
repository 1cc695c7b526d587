"""Deterministic scripted backends and an integer-millisecond cost model.

Scenarios script, per reasoning step, the first-token distribution plus the
small and large model's step text, which is enough to replay the full
routing loop without any real model. The latency model prices decoding,
prefix-cache-aware handovers, and draft-based acceleration of the large
model so that routing policies can be compared at desk scale.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .backends import (
    AnswerResult,
    Boundary,
    GenerationContext,
    ProbeResult,
    StepResult,
    TransportError,
    resolve_step_events,
    resolve_stream_end,
)
from .routing import Action, Policy, SweepCase, Trace, exact_boxed_oracle
from .segmenter import DEFAULT_DELIMITER, Phase, StepSegmenter
from .uncertainty import StepLogprobs, TokenDistribution, shannon_entropy


class ScenarioError(ValueError):
    """A scenario file or generator parameter set is malformed."""


_TOKEN_RE = re.compile(r"\s+|\S+")


def sim_tokenize(text: str) -> list[str]:
    """Whitespace-run tokenization; joining the pieces restores the text."""
    return _TOKEN_RE.findall(text)


@dataclass(frozen=True)
class StepScript:
    first_token_distribution: TokenDistribution
    small_body: str
    large_body: str
    small_correct: bool = True
    large_correct: bool = True


@dataclass(frozen=True)
class SpecDecoding:
    draft_length: int = 3
    acceptance_rate: float = 0.7

    def __post_init__(self) -> None:
        if self.draft_length < 1:
            raise ScenarioError("draft_length must be >= 1")
        if not 0.0 <= self.acceptance_rate <= 1.0:
            raise ScenarioError(f"acceptance rate {self.acceptance_rate} outside [0, 1]")


@dataclass(frozen=True)
class BackendProfile:
    """Cost model: ms-per-token decodes, prefix-cache prefill, handover cost.

    Defaults put the large model at 3x the small model's decode cost.
    """

    small_decode_ms: int = 10
    large_decode_ms: int = 30
    prefill_ms_per_token: int = 1
    switch_overhead_ms: int = 5
    spec_decoding: SpecDecoding | None = None

    def __post_init__(self) -> None:
        for name in ("small_decode_ms", "large_decode_ms", "prefill_ms_per_token", "switch_overhead_ms"):
            if getattr(self, name) < 0:
                raise ScenarioError(f"{name} must be >= 0")

    def decode_ms(self, generator: str) -> int:
        return self.small_decode_ms if generator == "small" else self.large_decode_ms


@dataclass(frozen=True)
class Scenario:
    question: str
    steps: tuple[StepScript, ...]
    answer: str
    answer_oracle: str = ""
    profile: BackendProfile = BackendProfile()

    def __post_init__(self) -> None:
        if not self.steps:
            raise ScenarioError("scenario has no steps")

    def h_init_values(self) -> list[float]:
        return [shannon_entropy(s.first_token_distribution) for s in self.steps]


def scripted_probe(scenario: Scenario, step_index: int) -> tuple[str, TokenDistribution]:
    """Scripted first-token sample: deterministically the distribution's mode."""
    if not 0 <= step_index < len(scenario.steps):
        raise ScenarioError(f"step index {step_index} outside scripted range 0..{len(scenario.steps) - 1}")
    dist = scenario.steps[step_index].first_token_distribution
    return dist.top_token, dist


_CORRUPTED_ANSWER = "\\boxed{?}"


class ScriptedBackend:
    """Backend playing one side (small or large) of a scenario's script.

    The step index is recovered structurally from how many steps the caller's
    context already holds, so the backend itself stays stateless across steps.
    """

    def __init__(
        self,
        scenario: Scenario,
        role: str,
        delimiter: str = DEFAULT_DELIMITER,
        fail_on_step: int | None = None,
        seed: int | None = None,
    ):
        if role not in ("small", "large"):
            raise ScenarioError(f"role must be 'small' or 'large', got {role!r}")
        self.scenario = scenario
        self.role = role
        self.model = f"scripted-{role}"
        self.delimiter = delimiter
        self.fail_on_step = fail_on_step
        self._rng = np.random.default_rng(seed) if seed is not None else None

    # -- script lookups ---------------------------------------------------

    def _script(self, step_index: int) -> StepScript:
        if not 0 <= step_index < len(self.scenario.steps):
            raise ScenarioError(f"no scripted step {step_index} (scenario has {len(self.scenario.steps)})")
        return self.scenario.steps[step_index]

    def _body(self, step_index: int) -> str:
        script = self._script(step_index)
        return script.small_body if self.role == "small" else script.large_body

    def _maybe_fail(self, step_index: int) -> None:
        if self.fail_on_step is not None and step_index == self.fail_on_step:
            raise TransportError(f"scripted {self.role} backend failure at step {step_index}")

    # -- capability surface -------------------------------------------------

    def probe_first(self, context: GenerationContext) -> ProbeResult:
        step_index = len(context.steps)
        self._maybe_fail(step_index)
        dist = self._script(step_index).first_token_distribution
        if self._rng is None:
            token = dist.top_token
        else:
            outcomes = [t for t, _ in dist.entries]
            probs = np.array([p for _, p in dist.entries])
            if dist.tail_mass > 0:
                outcomes.append(dist.top_token)  # tail collapses onto the mode
                probs = np.append(probs, dist.tail_mass)
            token = str(self._rng.choice(outcomes, p=probs / probs.sum()))
        logprob = math.log(next(p for t, p in dist.entries if t == token))
        return ProbeResult(token=token, distribution=dist, logprob=logprob)

    def generate_step(
        self,
        context: GenerationContext,
        prefix: str | None = None,
        budget_left: int = 8192,
        want_logprobs: bool = False,
    ) -> StepResult:
        step_index = len(context.steps)
        self._maybe_fail(step_index)
        script = self._script(step_index)
        body = self._body(step_index)
        if prefix and body.startswith(prefix):
            stream = [prefix] + sim_tokenize(body[len(prefix):])
        elif prefix:
            stream = [prefix] + sim_tokenize(body)
        else:
            stream = sim_tokenize(body)

        segmenter = StepSegmenter(
            delimiter=self.delimiter,
            think_open=context.think_open,
            think_close=context.think_close,
            budget_tokens=budget_left,
            initial_phase=Phase.THINKING,
        )
        tokens: list[str] = []
        terminal = None
        for piece in stream:
            tokens.append(piece)
            terminal = resolve_step_events(segmenter.feed(piece), segmenter, self.delimiter)
            if terminal:
                break
        if terminal is None:
            terminal = resolve_stream_end(segmenter.flush(), None, self.delimiter)
        text, boundary = terminal

        logprobs = None
        if want_logprobs:
            # Flat per-token surface: every token inherits the step's probe
            # entropy and the mode's logprob, so step-level means equal the
            # probe values exactly.
            entropy = shannon_entropy(script.first_token_distribution)
            mode_logprob = math.log(script.first_token_distribution.entries[0][1])
            logprobs = StepLogprobs(tuple((mode_logprob, entropy) for _ in tokens))
        return StepResult(
            text=text,
            tokens=tuple(tokens),
            boundary=boundary,
            logprobs=logprobs,
            think_closed=boundary is Boundary.THINK_CLOSED,
        )

    def generate_answer(self, context: GenerationContext) -> AnswerResult:
        self._maybe_fail(len(self.scenario.steps))
        answer = self.scenario.answer if self._context_sound(context) else _CORRUPTED_ANSWER
        return AnswerResult(text=answer, token_count=len(sim_tokenize(answer)))

    def _context_sound(self, context: GenerationContext) -> bool:
        """A kept incorrect step corrupts the run unless the very next kept
        step came from the large model, which models the correction that an
        immediate intervention performs on accumulated drift."""
        for index, text in enumerate(context.steps):
            if index >= len(self.scenario.steps):
                break
            script = self.scenario.steps[index]
            wrong = (text == script.small_body and not script.small_correct) or (
                text == script.large_body and not script.large_correct
            )
            if not wrong:
                continue
            healed = False
            if index + 1 < len(context.steps) and index + 1 < len(self.scenario.steps):
                nxt_script = self.scenario.steps[index + 1]
                nxt_text = context.steps[index + 1]
                healed = (
                    nxt_text == nxt_script.large_body
                    and nxt_script.large_correct
                    and nxt_script.large_body != nxt_script.small_body
                )
            if not healed:
                return False
        return True

    def healthy(self) -> bool:
        return True


def scripted_pair(
    scenario: Scenario,
    delimiter: str = DEFAULT_DELIMITER,
    fail_large_on_step: int | None = None,
) -> tuple[ScriptedBackend, ScriptedBackend]:
    small = ScriptedBackend(scenario, "small", delimiter=delimiter)
    large = ScriptedBackend(scenario, "large", delimiter=delimiter, fail_on_step=fail_large_on_step)
    return small, large


# -- latency model ---------------------------------------------------------


def expected_accepted_drafts(acceptance_rate: float, draft_length: int) -> float:
    """Expected accepted draft tokens per verification cycle.

    Truncated-geometric form: sum over i in 1..n of alpha^i.
    """
    if not 0.0 <= acceptance_rate <= 1.0:
        raise ScenarioError(f"acceptance rate {acceptance_rate} outside [0, 1]")
    if acceptance_rate == 1.0:
        return float(draft_length)
    a = acceptance_rate
    n = draft_length
    return (1.0 - a ** (n + 1)) / (1.0 - a) - 1.0


def apply_spec_decoding(step_tokens: int, profile: BackendProfile) -> int:
    """Effective decode cost in ms for a large-model generation of step_tokens.

    Each verification cycle drafts n tokens with the small model and runs one
    large-model verification pass, committing the accepted drafts plus the
    verifier's own token.
    """
    if profile.spec_decoding is None:
        raise ScenarioError("profile has no speculative-decoding settings")
    if step_tokens <= 0:
        return 0
    sd = profile.spec_decoding
    expected = expected_accepted_drafts(sd.acceptance_rate, sd.draft_length)
    per_cycle = expected + 1.0  # accepted drafts + the verified token
    cycles = math.ceil(step_tokens / per_cycle)
    cycle_cost = sd.draft_length * profile.small_decode_ms + profile.large_decode_ms
    return cycles * cycle_cost


@dataclass(frozen=True)
class LatencyEvent:
    kind: str  # probe | candidate | step | answer
    step_index: int  # 1-based; 0 for the answer event
    backend: str  # small | large
    decode_ms: int
    prefill_ms: int
    switch_ms: int

    @property
    def total_ms(self) -> int:
        return self.decode_ms + self.prefill_ms + self.switch_ms


def latency_events(trace: Trace, profile: BackendProfile) -> list[LatencyEvent]:
    """Per-call cost breakdown for a routed trace under the given profile.

    Prefix-cache model: each backend call first prefills whatever context
    appeared since that backend last held the context; a handover from the
    other backend additionally pays the switch overhead. Probes cost one
    small-model decode; a kept probe token is not decoded twice.
    """
    if len(trace.steps) != len(trace.decisions):
        raise ScenarioError("trace steps and decisions are misaligned")
    events: list[LatencyEvent] = []
    ctx_tokens = len(sim_tokenize(trace.question))
    cache = {"small": 0, "large": 0}
    holder: str | None = None

    def charge(kind: str, index: int, backend: str, decode_tokens: int, spec_ok: bool = False) -> None:
        nonlocal holder
        uncached = ctx_tokens - cache[backend]
        prefill = uncached * profile.prefill_ms_per_token
        switch = profile.switch_overhead_ms if holder not in (None, backend) else 0
        if spec_ok and backend == "large" and profile.spec_decoding is not None:
            decode = apply_spec_decoding(decode_tokens, profile)
        else:
            decode = decode_tokens * profile.decode_ms(backend)
        events.append(LatencyEvent(kind, index, backend, decode, prefill, switch))
        cache[backend] = ctx_tokens
        holder = backend

    for step, decision in zip(trace.steps, trace.decisions):
        index = decision.step_index
        if decision.probed:
            charge("probe", index, "small", 1)
        generate_then_measure = decision.policy in (Policy.STEP_ENTROPY, Policy.STEP_PERPLEXITY)
        if generate_then_measure:
            candidate_tokens = (
                step.token_count if decision.action is Action.DELEGATE else decision.discarded_tokens
            )
            charge("candidate", index, "small", candidate_tokens)
        if decision.action is Action.INTERVENE:
            charge("step", index, "large", step.token_count, spec_ok=True)
        elif not generate_then_measure:
            # The kept probe token was already decoded during the probe call.
            decode_tokens = step.token_count - (1 if decision.probed else 0)
            charge("step", index, "small", decode_tokens)
        ctx_tokens += step.token_count
        cache[step.generator] = ctx_tokens

    charge("answer", 0, "large", trace.accounting.answer_tokens, spec_ok=True)
    return events


def simulate_latency(trace: Trace, profile: BackendProfile) -> int:
    """Total simulated latency in integer milliseconds."""
    return sum(event.total_ms for event in latency_events(trace, profile))


# -- synthetic scenario family ----------------------------------------------


def distribution_with_entropy(target_nats: float, mode_token: str) -> TokenDistribution:
    """Construct a distribution whose entropy equals target_nats.

    One adjustable mode probability plus equal-mass alternatives; the mode
    stays the most likely outcome for any target.
    """
    if target_nats < 0:
        raise ScenarioError(f"target entropy {target_nats} is negative")
    if target_nats < 1e-9:
        return TokenDistribution(entries=((mode_token, 1.0),), tail_mass=0.0)
    k = max(2, math.ceil(math.exp(target_nats)) + 1)

    def entropy_at(x: float) -> float:
        rest = (1.0 - x) / (k - 1)
        return -x * math.log(x) - (k - 1) * rest * math.log(rest)

    x = brentq(lambda v: entropy_at(v) - target_nats, 1.0 / k, 1.0 - 1e-12)
    rest = (1.0 - x) / (k - 1)
    entries = ((mode_token, float(x)),) + tuple((f"alt{j}", float(rest)) for j in range(1, k))
    return TokenDistribution(entries=entries, tail_mass=0.0)


@dataclass(frozen=True)
class MixtureParams:
    """Two-component entropy mixture shaping a synthetic scenario family."""

    low_mean: float = 0.15
    low_spread: float = 0.07
    high_mean: float = 2.0
    high_spread: float = 0.35
    weight_high: float = 0.25
    high_error_rate: float = 0.5  # chance the small model's high-entropy step is wrong
    diverge_above: float = 1.0  # large text diverges when h_init exceeds this
    identical_bodies: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.weight_high <= 1.0:
            raise ScenarioError(f"weight_high {self.weight_high} outside [0, 1]")
        if self.low_spread <= 0 or self.high_spread <= 0:
            raise ScenarioError("mixture spreads must be positive")
        if not 0.0 <= self.high_error_rate <= 1.0:
            raise ScenarioError(f"high_error_rate {self.high_error_rate} outside [0, 1]")


_LEAD_WORDS = ["So", "Then", "Next", "Thus", "Now", "Hence", "First", "Also"]
_FILLER_WORDS = [
    "compute", "the", "value", "of", "term", "sum", "and", "carry", "digit",
    "over", "remainder", "gives", "factor", "with", "total", "count", "step",
]
_DIVERGENT_WORDS = [
    "reconsider", "instead", "contradiction", "restart", "alternative",
    "however", "differs", "revisit", "mistake", "correct",
]


def build_distribution_scenario(
    seed: int,
    n_steps: int,
    params: MixtureParams = MixtureParams(),
    profile: BackendProfile = BackendProfile(),
) -> Scenario:
    """Generate a scenario whose probe entropies follow a bimodal mixture.

    Low-component steps are routine: the small and large bodies agree and the
    small model is correct. High-component steps are pivots: the large body
    diverges word-by-word (token counts stay matched) and the small model is
    wrong with probability high_error_rate.
    """
    if n_steps < 1:
        raise ScenarioError("n_steps must be >= 1")
    rng = np.random.default_rng(seed)
    steps: list[StepScript] = []
    for i in range(n_steps):
        is_high = bool(rng.random() < params.weight_high)
        if is_high:
            h = float(rng.normal(params.high_mean, params.high_spread))
        else:
            h = float(rng.normal(params.low_mean, params.low_spread))
        h = max(0.0, h)
        lead = _LEAD_WORDS[int(rng.integers(len(_LEAD_WORDS)))]
        n_words = int(rng.integers(8, 24))
        words = [lead] + [
            _FILLER_WORDS[int(rng.integers(len(_FILLER_WORDS)))] for _ in range(n_words - 1)
        ]
        terminal = i == n_steps - 1
        small_body = " ".join(words) + ("" if terminal else "\n\n")
        if params.identical_bodies or h <= params.diverge_above:
            large_body = small_body
            small_correct = True
        else:
            frac = min(0.8, 0.3 + 0.2 * (h - params.diverge_above))
            swapped = list(words)
            n_swaps = max(1, int(round(frac * (len(words) - 1))))
            positions = rng.choice(np.arange(1, len(words)), size=min(n_swaps, len(words) - 1), replace=False)
            for pos in positions:
                swapped[int(pos)] = _DIVERGENT_WORDS[int(rng.integers(len(_DIVERGENT_WORDS)))]
            large_body = " ".join(swapped) + ("" if terminal else "\n\n")
            small_correct = bool(rng.random() >= params.high_error_rate)
        steps.append(
            StepScript(
                first_token_distribution=distribution_with_entropy(h, lead),
                small_body=small_body,
                large_body=large_body,
                small_correct=small_correct,
                large_correct=True,
            )
        )
    oracle = str(int(rng.integers(10, 1000)))
    return Scenario(
        question=f"Synthetic question {seed}: resolve the {n_steps}-step derivation.",
        steps=tuple(steps),
        answer=f"\\boxed{{{oracle}}}",
        answer_oracle=oracle,
        profile=profile,
    )


def sample_unimodal_entropies(seed: int, n: int, mean: float = 0.6, spread: float = 0.15) -> list[float]:
    """Unimodal control population for distribution-shape comparisons."""
    rng = np.random.default_rng(seed)
    return [max(0.0, float(v)) for v in rng.normal(mean, spread, size=n)]


def scenario_sweep_case(scenario: Scenario, profile: BackendProfile | None = None) -> SweepCase:
    """Adapt one scenario to the sweep harness with simulated latency."""
    chosen = profile if profile is not None else scenario.profile

    def make_backends():
        return scripted_pair(scenario)

    oracle = exact_boxed_oracle(scenario.answer_oracle) if scenario.answer_oracle else None
    return SweepCase(
        question=scenario.question,
        make_backends=make_backends,
        answer_oracle=oracle,
        latency_of=lambda trace: float(simulate_latency(trace, chosen)),
    )


# -- scenario files -----------------------------------------------------------


def _profile_from_dict(data: dict) -> BackendProfile:
    spec = data.get("spec_decoding")
    sd = SpecDecoding(**spec) if spec else None
    known = {k: v for k, v in data.items() if k != "spec_decoding"}
    try:
        return replace(BackendProfile(spec_decoding=sd), **known)
    except TypeError as exc:
        raise ScenarioError(f"bad profile override: {exc}") from exc


def scenario_from_dict(data: dict) -> Scenario:
    try:
        steps = []
        for raw in data["steps"]:
            pairs = [(str(t), float(p)) for t, p in raw["probe"]]
            pairs.sort(key=lambda tp: tp[1], reverse=True)
            total = sum(p for _, p in pairs)
            dist = TokenDistribution(entries=tuple(pairs), tail_mass=max(0.0, 1.0 - total))
            steps.append(
                StepScript(
                    first_token_distribution=dist,
                    small_body=raw["small_body"],
                    large_body=raw["large_body"],
                    small_correct=bool(raw.get("small_correct", True)),
                    large_correct=bool(raw.get("large_correct", True)),
                )
            )
        profile = _profile_from_dict(data.get("profile", {}))
        return Scenario(
            question=data["question"],
            steps=tuple(steps),
            answer=data["answer"],
            answer_oracle=str(data.get("answer_oracle", "")),
            profile=profile,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"malformed scenario: {exc}") from exc


def scenario_to_dict(scenario: Scenario) -> dict:
    data: dict = {
        "question": scenario.question,
        "steps": [
            {
                "probe": [[t, p] for t, p in s.first_token_distribution.entries],
                "small_body": s.small_body,
                "large_body": s.large_body,
                "small_correct": s.small_correct,
                "large_correct": s.large_correct,
            }
            for s in scenario.steps
        ],
        "answer": scenario.answer,
        "answer_oracle": scenario.answer_oracle,
    }
    profile = scenario.profile
    data["profile"] = {
        "small_decode_ms": profile.small_decode_ms,
        "large_decode_ms": profile.large_decode_ms,
        "prefill_ms_per_token": profile.prefill_ms_per_token,
        "switch_overhead_ms": profile.switch_overhead_ms,
    }
    if profile.spec_decoding:
        data["profile"]["spec_decoding"] = {
            "draft_length": profile.spec_decoding.draft_length,
            "acceptance_rate": profile.spec_decoding.acceptance_rate,
        }
    return data


def load_scenario(path: str | Path) -> Scenario:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    return scenario_from_dict(raw)


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n")
