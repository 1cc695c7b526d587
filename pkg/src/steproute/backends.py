"""Text-generation backend contract and the OpenAI-compatible HTTP client.

A backend exposes three capabilities: probe one token with its top-k
distribution, continue a step until a stop condition, and generate a final
answer. The HTTP client targets completion-style endpoints (vLLM, sglang,
llama.cpp server and friends) with streaming and per-token logprobs; a
chat-completions fallback covers servers without /v1/completions.
"""

from __future__ import annotations

import enum
import json
import os
import time
from dataclasses import dataclass
from typing import Iterator, Protocol, runtime_checkable

import httpx

from .segmenter import (
    DEFAULT_DELIMITER,
    DEFAULT_THINK_CLOSE,
    DEFAULT_THINK_OPEN,
    EventKind,
    Phase,
    StepSegmenter,
)
from .uncertainty import StepLogprobs, TokenDistribution, normalize_probe, shannon_entropy


class BackendError(RuntimeError):
    """Base class for backend failures."""


class TransportError(BackendError):
    """Request could not be completed after the configured retries."""


class MissingLogprobsError(BackendError):
    """The backend did not return logprobs; entropy routing cannot proceed."""


class StreamInterruptedError(BackendError):
    """A generation stream died mid-step; partial tokens are attached."""

    def __init__(self, message: str, partial_tokens: tuple[str, ...] = ()):
        super().__init__(message)
        self.partial_tokens = partial_tokens


class Boundary(enum.Enum):
    DELIMITER = "delimiter"
    THINK_CLOSED = "think_closed"
    EOS = "eos"
    BUDGET = "budget"


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.6
    top_p: float = 0.95


@dataclass(frozen=True)
class GenerationContext:
    """Question plus every previously generated step, in order.

    All backends see the same accumulated context; the HTTP client renders
    it to a flat prompt, scripted backends can index it structurally.
    """

    question: str
    steps: tuple[str, ...] = ()
    think_open: str = DEFAULT_THINK_OPEN
    think_close: str = DEFAULT_THINK_CLOSE

    def with_step(self, step_text: str) -> "GenerationContext":
        return GenerationContext(
            question=self.question,
            steps=self.steps + (step_text,),
            think_open=self.think_open,
            think_close=self.think_close,
        )

    def render(self, closed: bool = False) -> str:
        text = f"{self.question}\n{self.think_open}\n" + "".join(self.steps)
        if closed:
            text += f"{self.think_close}\n\n"
        return text


@dataclass(frozen=True)
class ProbeResult:
    token: str
    distribution: TokenDistribution
    logprob: float
    latency_ms: float = 0.0
    first_token_ms: float | None = None

    @property
    def entropy(self) -> float:
        return shannon_entropy(self.distribution)


@dataclass(frozen=True)
class StepResult:
    text: str
    tokens: tuple[str, ...]
    boundary: Boundary
    logprobs: StepLogprobs | None = None
    think_closed: bool = False
    latency_ms: float = 0.0
    first_token_ms: float | None = None

    @property
    def token_count(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class AnswerResult:
    text: str
    token_count: int = 0
    latency_ms: float = 0.0


@runtime_checkable
class Backend(Protocol):
    """Minimal capability surface the routing loop relies on."""

    model: str

    def probe_first(self, context: GenerationContext) -> ProbeResult: ...

    def generate_step(
        self,
        context: GenerationContext,
        prefix: str | None = None,
        budget_left: int = 8192,
        want_logprobs: bool = False,
    ) -> StepResult: ...

    def generate_answer(self, context: GenerationContext) -> AnswerResult: ...

    def healthy(self) -> bool: ...


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_s: float = 0.5


@dataclass(frozen=True)
class BackendHandle:
    """Connection settings for one OpenAI-compatible backend."""

    endpoint: str
    model: str
    top_logprobs_k: int = 20
    sampling: SamplingParams = SamplingParams()
    timeout_ms: int = 120_000
    retry: RetryPolicy = RetryPolicy()
    api_style: str = "completions"  # or "chat"
    api_key_env: str = ""
    delimiter: str = DEFAULT_DELIMITER

    def __post_init__(self) -> None:
        if self.top_logprobs_k < 1:
            raise ValueError("top_logprobs_k must be >= 1")
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be > 0")
        if self.api_style not in ("completions", "chat"):
            raise ValueError(f"unknown api_style {self.api_style!r}")


def _chunk_lines(response: httpx.Response) -> Iterator[dict]:
    """Yield parsed JSON payloads from a server-sent-event stream."""
    for line in response.iter_lines():
        line = line.strip()
        if not line or not line.startswith("data:"):
            continue
        payload = line[len("data:"):].strip()
        if payload == "[DONE]":
            return
        yield json.loads(payload)


@dataclass
class _TokenDelta:
    text: str
    logprob: float | None = None
    top_logprobs: list[tuple[str, float]] | None = None


def resolve_step_events(
    events: list,
    segmenter: StepSegmenter,
    delimiter: str,
) -> tuple[str, Boundary] | None:
    """Map one feed()'s events to a finished (step_text, boundary), if any.

    Events past the first boundary are generation overshoot and are dropped;
    the router restarts from a fresh probe anyway.
    """
    pending: str | None = None
    for event in events:
        if event.kind is EventKind.STEP_COMPLETE:
            if pending is None:
                pending = event.step_text
                if pending.endswith(delimiter):
                    return pending, Boundary.DELIMITER
        elif event.kind is EventKind.THINK_CLOSED:
            return pending or "", Boundary.THINK_CLOSED
        elif event.kind is EventKind.BUDGET_EXHAUSTED:
            # Residual text is still buffered; close the stream to collect it.
            residual = ""
            for flush_event in segmenter.flush():
                if flush_event.kind is EventKind.STEP_COMPLETE:
                    residual = flush_event.step_text
                    break
            return pending if pending is not None else residual, Boundary.BUDGET
    if pending is not None:
        # A completed step that does not end with the delimiter can only come
        # from a flush; mid-stream it would have matched one of the cases above.
        return pending, Boundary.EOS
    return None


def resolve_stream_end(
    events: list,
    finish_reason: str | None,
    delimiter: str,
    stop_hit: bool | None = None,
) -> tuple[str, Boundary]:
    """Classify the residual step once the server closed the stream.

    stop_hit carries the server's stop_reason when it exposes one: True for
    a stop-string hit, False for a natural end, None when unknown (plain
    finish_reason="stop" is then read as a stop-string hit, the common case
    inside the think phase).
    """
    text = ""
    for event in events:
        if event.kind is EventKind.STEP_COMPLETE:
            text = event.step_text
            break
        if event.kind is EventKind.THINK_CLOSED:
            return "", Boundary.THINK_CLOSED
    if text.endswith(delimiter):
        return text, Boundary.DELIMITER
    if finish_reason == "length":
        return text, Boundary.BUDGET
    if finish_reason == "stop" and text and stop_hit is not False:
        # The server swallowed the stop string; restore the retained-delimiter
        # convention client-side.
        return text + delimiter, Boundary.DELIMITER
    return text, Boundary.EOS


class OpenAIBackend:
    """HTTP backend speaking the OpenAI completion wire format."""

    def __init__(self, handle: BackendHandle, transport: httpx.BaseTransport | None = None):
        self.handle = handle
        self.model = handle.model
        headers = {}
        key = os.environ.get(handle.api_key_env, "") if handle.api_key_env else ""
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(
            base_url=handle.endpoint.rstrip("/"),
            timeout=handle.timeout_ms / 1000.0,
            headers=headers,
            transport=transport,
        )

    def close(self) -> None:
        self._client.close()

    # -- request plumbing -------------------------------------------------

    def _path(self) -> str:
        return "/completions" if self.handle.api_style == "completions" else "/chat/completions"

    def _body(
        self,
        prompt: str,
        max_tokens: int,
        stream: bool,
        want_logprobs: bool,
        stop: list[str] | None,
    ) -> dict:
        body: dict = {
            "model": self.handle.model,
            "max_tokens": max_tokens,
            "temperature": self.handle.sampling.temperature,
            "top_p": self.handle.sampling.top_p,
            "stream": stream,
        }
        if stop:
            body["stop"] = stop
        if self.handle.api_style == "completions":
            body["prompt"] = prompt
            if want_logprobs:
                body["logprobs"] = self.handle.top_logprobs_k
        else:
            body["messages"] = [{"role": "user", "content": prompt}]
            if want_logprobs:
                body["logprobs"] = True
                body["top_logprobs"] = self.handle.top_logprobs_k
        return body

    def _post(self, body: dict) -> httpx.Response:
        last_error: Exception | None = None
        for attempt in range(self.handle.retry.max_attempts):
            if attempt:
                time.sleep(self.handle.retry.backoff_s * (2 ** (attempt - 1)))
            try:
                response = self._client.post(self._path(), json=body)
                if response.status_code >= 500:
                    last_error = TransportError(f"server error {response.status_code}: {response.text[:200]}")
                    continue
                response.raise_for_status()
                return response
            except httpx.HTTPError as exc:
                last_error = exc
        raise TransportError(f"request to {self.handle.endpoint} failed: {last_error}")

    # -- response parsing --------------------------------------------------

    def _parse_token_info(self, choice: dict, index: int = 0) -> _TokenDelta:
        """Extract one token's text/logprob/top-k from a non-streamed choice."""
        if self.handle.api_style == "completions":
            lp = choice.get("logprobs")
            if not lp or not lp.get("tokens"):
                raise MissingLogprobsError(f"backend {self.handle.model!r} returned no logprobs")
            token = lp["tokens"][index]
            logprob = lp["token_logprobs"][index]
            top = lp.get("top_logprobs") or []
            pairs = list(top[index].items()) if index < len(top) and top[index] else None
            return _TokenDelta(text=token, logprob=logprob, top_logprobs=pairs)
        lp = choice.get("logprobs")
        content = (lp or {}).get("content") or []
        if not content:
            raise MissingLogprobsError(f"backend {self.handle.model!r} returned no logprobs")
        entry = content[index]
        pairs = [(t["token"], t["logprob"]) for t in entry.get("top_logprobs", [])] or None
        return _TokenDelta(text=entry["token"], logprob=entry["logprob"], top_logprobs=pairs)

    def _stream_deltas(self, chunk: dict) -> tuple[list[_TokenDelta], str | None, bool | None]:
        """Decode one streamed chunk into (token deltas, finish_reason, stop_hit)."""
        deltas: list[_TokenDelta] = []
        finish = None
        stop_hit: bool | None = None
        for choice in chunk.get("choices", []):
            if choice.get("finish_reason"):
                finish = choice["finish_reason"]
                if "stop_reason" in choice:
                    stop_hit = choice["stop_reason"] is not None
            if self.handle.api_style == "completions":
                lp = choice.get("logprobs") or {}
                tokens = lp.get("tokens")
                if tokens:
                    logprobs = lp.get("token_logprobs") or [None] * len(tokens)
                    tops = lp.get("top_logprobs") or [None] * len(tokens)
                    for i, tok in enumerate(tokens):
                        pairs = list(tops[i].items()) if tops[i] else None
                        deltas.append(_TokenDelta(text=tok, logprob=logprobs[i], top_logprobs=pairs))
                elif choice.get("text"):
                    deltas.append(_TokenDelta(text=choice["text"]))
            else:
                entries = ((choice.get("logprobs") or {}).get("content")) or []
                if entries:
                    for entry in entries:
                        pairs = [(t["token"], t["logprob"]) for t in entry.get("top_logprobs", [])] or None
                        deltas.append(_TokenDelta(text=entry["token"], logprob=entry["logprob"], top_logprobs=pairs))
                else:
                    text = (choice.get("delta") or {}).get("content")
                    if text:
                        deltas.append(_TokenDelta(text=text))
        return deltas, finish, stop_hit

    # -- capability surface -------------------------------------------------

    def probe_first(self, context: GenerationContext) -> ProbeResult:
        started = time.perf_counter()
        body = self._body(context.render(), max_tokens=1, stream=False, want_logprobs=True, stop=None)
        response = self._post(body)
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        payload = response.json()
        choices = payload.get("choices") or []
        if not choices:
            raise TransportError(f"backend {self.handle.model!r} returned no choices")
        delta = self._parse_token_info(choices[0])
        if delta.logprob is None:
            raise MissingLogprobsError(f"backend {self.handle.model!r} omitted the sampled token logprob")
        pairs = delta.top_logprobs or [(delta.text, delta.logprob)]
        if delta.text not in {t for t, _ in pairs}:
            pairs = pairs + [(delta.text, delta.logprob)]
        dist = normalize_probe(pairs)
        dist.validate()
        return ProbeResult(
            token=delta.text,
            distribution=dist,
            logprob=delta.logprob,
            latency_ms=elapsed_ms,
            first_token_ms=elapsed_ms,
        )

    def generate_step(
        self,
        context: GenerationContext,
        prefix: str | None = None,
        budget_left: int = 8192,
        want_logprobs: bool = False,
    ) -> StepResult:
        if budget_left < 1:
            raise ValueError("budget_left must be >= 1")
        prompt = context.render() + (prefix or "")
        max_new = budget_left - (1 if prefix else 0)
        if max_new < 1:
            # The kept probe token exhausted the budget on its own.
            return StepResult(
                text=prefix or "",
                tokens=(prefix,) if prefix else (),
                boundary=Boundary.BUDGET,
            )
        # The delimiter is the only server-side stop; the think-close marker
        # must stream through so the client can tell the two endings apart
        # even on servers that strip the stop string.
        body = self._body(
            prompt,
            max_tokens=max_new,
            stream=True,
            want_logprobs=want_logprobs,
            stop=[self.handle.delimiter],
        )
        segmenter = StepSegmenter(
            delimiter=self.handle.delimiter,
            think_open=context.think_open,
            think_close=context.think_close,
            budget_tokens=budget_left,
            initial_phase=Phase.THINKING,
        )
        tokens: list[str] = []
        per_token: list[tuple[float, float]] = []

        def note(delta: _TokenDelta) -> None:
            tokens.append(delta.text)
            if want_logprobs and delta.logprob is not None:
                if delta.top_logprobs:
                    entropy = shannon_entropy(normalize_probe(delta.top_logprobs))
                else:
                    entropy = 0.0
                per_token.append((min(delta.logprob, 0.0), entropy))

        terminal: tuple[str, Boundary] | None = None
        if prefix:
            tokens.append(prefix)
            if want_logprobs:
                per_token.append((0.0, 0.0))  # caller substitutes the probe's record
            terminal = resolve_step_events(segmenter.feed(prefix), segmenter, self.handle.delimiter)

        started = time.perf_counter()
        first_token_ms: float | None = None
        finish_reason: str | None = None
        stop_hit: bool | None = None
        consumed_before = len(tokens)
        attempt = 0
        while terminal is None:
            try:
                with self._client.stream("POST", self._path(), json=body) as response:
                    if response.status_code >= 500:
                        response.read()
                        raise httpx.HTTPStatusError(
                            f"server error {response.status_code}",
                            request=response.request,
                            response=response,
                        )
                    if response.status_code >= 400:
                        response.read()
                        raise TransportError(f"server error {response.status_code}: {response.text[:200]}")
                    for chunk in _chunk_lines(response):
                        deltas, finish, hit = self._stream_deltas(chunk)
                        finish_reason = finish or finish_reason
                        stop_hit = hit if hit is not None else stop_hit
                        for delta in deltas:
                            if first_token_ms is None:
                                first_token_ms = (time.perf_counter() - started) * 1000.0
                            note(delta)
                            terminal = resolve_step_events(
                                segmenter.feed(delta.text), segmenter, self.handle.delimiter
                            )
                            if terminal:
                                break
                        if terminal:
                            break
                break
            except httpx.HTTPError as exc:
                attempt += 1
                # Retrying a partially consumed stream would resample the step;
                # only untouched requests are retried.
                if len(tokens) > consumed_before or attempt >= self.handle.retry.max_attempts:
                    raise StreamInterruptedError(str(exc), partial_tokens=tuple(tokens)) from exc
                time.sleep(self.handle.retry.backoff_s * (2 ** (attempt - 1)))
        elapsed_ms = (time.perf_counter() - started) * 1000.0

        if terminal is None:
            terminal = resolve_stream_end(segmenter.flush(), finish_reason, self.handle.delimiter, stop_hit)
        text, boundary = terminal
        logprobs = StepLogprobs(tuple(per_token)) if want_logprobs else None
        return StepResult(
            text=text,
            tokens=tuple(tokens),
            boundary=boundary,
            logprobs=logprobs,
            think_closed=boundary is Boundary.THINK_CLOSED,
            latency_ms=elapsed_ms,
            first_token_ms=first_token_ms,
        )

    def generate_answer(self, context: GenerationContext) -> AnswerResult:
        started = time.perf_counter()
        body = self._body(
            context.render(closed=True),
            max_tokens=2048,
            stream=False,
            want_logprobs=False,
            stop=None,
        )
        response = self._post(body)
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        payload = response.json()
        choices = payload.get("choices") or []
        if not choices:
            raise TransportError(f"backend {self.handle.model!r} returned no choices")
        if self.handle.api_style == "completions":
            text = choices[0].get("text") or ""
        else:
            text = ((choices[0].get("message") or {}).get("content")) or ""
        usage = payload.get("usage") or {}
        return AnswerResult(
            text=text,
            token_count=int(usage.get("completion_tokens") or 0),
            latency_ms=elapsed_ms,
        )

    def healthy(self) -> bool:
        try:
            response = self._client.get("/models")
            return response.status_code < 500
        except httpx.HTTPError:
            return False
