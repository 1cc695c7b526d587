"""Streaming segmentation of generated token text into reasoning steps.

Steps end at structural delimiters (double newline by default). A maximal
run of >=2 consecutive newlines yields exactly one boundary at the end of
the run, so the segmenter holds a satisfied delimiter open until a
non-delimiter character (or end of stream) closes the run. Think markers
("<think>" / "</think>") drive the phase transitions PreThink -> Thinking
-> Answering.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class Phase(enum.Enum):
    PRE_THINK = "pre_think"
    THINKING = "thinking"
    ANSWERING = "answering"


class EventKind(enum.Enum):
    STEP_COMPLETE = "step_complete"
    THINK_OPENED = "think_opened"
    THINK_CLOSED = "think_closed"
    BUDGET_EXHAUSTED = "budget_exhausted"
    STREAM_END = "stream_end"


@dataclass(frozen=True)
class SegmentEvent:
    kind: EventKind
    step_text: str = ""
    # Inclusive token indices (0-based) covered by this event. When a
    # boundary falls inside a token, that completing token ends this span
    # and also opens the next step's span; spans never overlap further.
    token_span: tuple[int, int] = (0, 0)


DEFAULT_DELIMITER = "\n\n"
DEFAULT_THINK_OPEN = "<think>"
DEFAULT_THINK_CLOSE = "</think>"
DEFAULT_BUDGET = 8192


def _is_char_run(delimiter: str) -> bool:
    return len(delimiter) >= 2 and len(set(delimiter)) == 1


@dataclass
class StepSegmenter:
    """Incremental segmenter; one instance per generation stream.

    Not shareable across concurrent streams. feed() returns the events the
    new token completed; flush() must be called once at end of stream.
    """

    delimiter: str = DEFAULT_DELIMITER
    think_open: str = DEFAULT_THINK_OPEN
    think_close: str = DEFAULT_THINK_CLOSE
    budget_tokens: int = DEFAULT_BUDGET
    initial_phase: Phase = Phase.PRE_THINK

    phase: Phase = field(init=False)
    tokens_emitted: int = field(init=False, default=0)
    answer_text: str = field(init=False, default="")

    _buf: str = field(init=False, default="")
    # (token_index, char_count) pieces composing _buf, oldest first.
    _pieces: list[tuple[int, int]] = field(init=False, default_factory=list)
    _token_index: int = field(init=False, default=-1)
    _step_start: int = field(init=False, default=0)
    _budget_fired: bool = field(init=False, default=False)

    def __post_init__(self) -> None:
        if self.budget_tokens < 1:
            raise ValueError("budget_tokens must be >= 1")
        self.phase = self.initial_phase
        # The delimiter "run" rule only makes sense for a repeated single
        # character (e.g. "\n\n"); other delimiters match as plain substrings.
        self._run_char = self.delimiter[0] if _is_char_run(self.delimiter) else None
        self._run_min = len(self.delimiter)

    # -- buffer helpers -------------------------------------------------

    def _append(self, text: str) -> None:
        if text:
            self._buf += text
            self._pieces.append((self._token_index, len(text)))

    def _consume(self, n_chars: int) -> tuple[int, int]:
        """Drop the first n_chars of the buffer; return their token span."""
        start_tok = self._pieces[0][0] if self._pieces else self._token_index
        end_tok = start_tok
        remaining = n_chars
        while remaining > 0 and self._pieces:
            tok, length = self._pieces[0]
            end_tok = tok
            if length <= remaining:
                remaining -= length
                self._pieces.pop(0)
            else:
                self._pieces[0] = (tok, length - remaining)
                remaining = 0
        self._buf = self._buf[n_chars:]
        return (start_tok, end_tok)

    def _discard(self, n_chars: int) -> None:
        self._consume(n_chars)

    # -- boundary scanning ----------------------------------------------

    def _delimiter_boundary(self) -> int | None:
        """End offset of the first closed delimiter occurrence, else None.

        For run-style delimiters the boundary sits at the end of the maximal
        run, and a run touching the buffer tail stays open (it may extend
        with the next token).
        """
        if self._run_char is not None:
            idx = self._buf.find(self.delimiter)
            if idx == -1:
                return None
            end = idx + len(self.delimiter)
            while end < len(self._buf) and self._buf[end] == self._run_char:
                end += 1
            if end == len(self._buf):
                return None  # run still open
            return end
        idx = self._buf.find(self.delimiter)
        if idx == -1:
            return None
        return idx + len(self.delimiter)

    def _drain_thinking(self) -> list[SegmentEvent]:
        """Emit every decidable boundary currently in the buffer."""
        events: list[SegmentEvent] = []
        while True:
            close_idx = self._buf.find(self.think_close) if self.think_close else -1
            delim_end = self._delimiter_boundary()
            if close_idx != -1 and (delim_end is None or close_idx < delim_end):
                step_text = self._buf[:close_idx]
                if step_text:
                    span = self._consume(close_idx)
                    events.append(SegmentEvent(EventKind.STEP_COMPLETE, step_text, span))
                self._discard(len(self.think_close))
                here = (self._token_index, self._token_index)
                events.append(SegmentEvent(EventKind.THINK_CLOSED, token_span=here))
                self.phase = Phase.ANSWERING
                self.answer_text += self._buf
                self._buf = ""
                self._pieces.clear()
                return events
            if delim_end is None:
                return events
            step_text = self._buf[:delim_end]
            span = self._consume(delim_end)
            events.append(SegmentEvent(EventKind.STEP_COMPLETE, step_text, span))

    # -- public API -------------------------------------------------------

    def feed(self, token_text: str) -> list[SegmentEvent]:
        """Process one decoded token; return any events it completed."""
        self._token_index += 1
        events: list[SegmentEvent] = []

        if self.phase is Phase.ANSWERING:
            self.answer_text += token_text
            return events

        if self.phase is Phase.PRE_THINK:
            self._append(token_text)
            probe = self._buf.lstrip()
            open_idx = self._buf.find(self.think_open) if self.think_open else -1
            if open_idx != -1:
                # Marker complete: preamble before it is structural, not step text.
                self._discard(open_idx + len(self.think_open))
                here = (self._token_index, self._token_index)
                events.append(SegmentEvent(EventKind.THINK_OPENED, token_span=here))
                self.phase = Phase.THINKING
            elif self.think_open and self.think_open.startswith(probe):
                return events  # still a plausible marker prefix; keep waiting
            else:
                # Marker-free stream: everything so far is reasoning text.
                self.phase = Phase.THINKING
            # Only the buffered tokens that carry reasoning text count.
            self.tokens_emitted += len(self._pieces)
        else:
            self._append(token_text)
            self.tokens_emitted += 1

        events.extend(self._drain_thinking())
        if (
            self.phase is Phase.THINKING
            and not self._budget_fired
            and self.tokens_emitted >= self.budget_tokens
        ):
            self._budget_fired = True
            here = (self._token_index, self._token_index)
            events.append(SegmentEvent(EventKind.BUDGET_EXHAUSTED, token_span=here))
        return events

    def flush(self) -> list[SegmentEvent]:
        """Close the stream: emit the residual step (if any) and StreamEnd."""
        events: list[SegmentEvent] = []
        if self.phase is Phase.PRE_THINK and self._buf:
            self.phase = Phase.THINKING  # marker never arrived
        if self.phase is Phase.THINKING and self._buf:
            step_text = self._buf
            span = self._consume(len(self._buf))
            events.append(SegmentEvent(EventKind.STEP_COMPLETE, step_text, span))
        here = (max(self._token_index, 0), max(self._token_index, 0))
        events.append(SegmentEvent(EventKind.STREAM_END, token_span=here))
        return events
