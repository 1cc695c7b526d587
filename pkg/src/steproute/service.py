"""HTTP proxy: routed inference behind an OpenAI-compatible chat endpoint.

Every request runs one routing loop; the resulting trace is appended to the
JSONL sink and retrievable by request id.
"""

from __future__ import annotations

import logging
import threading
import time
import uuid
from dataclasses import replace

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .backends import Backend
from .config import ServiceConfig, build_backend
from .routing import TraceFailure, run_trace
from .tracelog import TraceRecord, TraceSink

logger = logging.getLogger("steproute")


def _question_from_messages(messages: list) -> str | None:
    for message in reversed(messages):
        if isinstance(message, dict) and message.get("role") == "user":
            content = message.get("content")
            if isinstance(content, str) and content.strip():
                return content
    return None


def build_app(
    config: ServiceConfig,
    small: Backend | None = None,
    large: Backend | None = None,
) -> FastAPI:
    """Assemble the service; backends are injectable for tests."""
    small = small if small is not None else build_backend(config.small, config, "small")
    large = large if large is not None else build_backend(config.large, config, "large")
    sink = TraceSink(config.trace_sink)
    registry: dict[str, TraceRecord] = {}
    registry_lock = threading.Lock()
    app = FastAPI(title="steproute", docs_url=None, redoc_url=None)

    def remember(record: TraceRecord) -> None:
        with registry_lock:
            registry[record.request_id] = record
        sink.append(record)

    @app.post("/v1/chat/completions")
    def chat_completions(payload: dict, request: Request):
        messages = payload.get("messages")
        if not isinstance(messages, list):
            return JSONResponse(
                status_code=400,
                content={"error": {"message": "messages must be a list", "type": "invalid_request_error"}},
            )
        question = _question_from_messages(messages)
        if question is None:
            return JSONResponse(
                status_code=400,
                content={"error": {"message": "no user message found", "type": "invalid_request_error"}},
            )
        request_id = uuid.uuid4().hex
        policy_config = config.policy_config()
        max_tokens = payload.get("max_tokens")
        if isinstance(max_tokens, int) and 0 < max_tokens < policy_config.budget_tokens:
            policy_config = replace(policy_config, budget_tokens=max_tokens)
        try:
            trace = run_trace(
                question,
                small,
                large,
                policy_config,
                think_open=config.segmenter.think_open,
                think_close=config.segmenter.think_close,
            )
        except TraceFailure as failure:
            record = TraceRecord.from_trace(failure.partial_trace, request_id, failure=str(failure))
            remember(record)
            return JSONResponse(
                status_code=502,
                content={
                    "error": {"message": str(failure), "type": "backend_failure"},
                    "trace_id": request_id,
                },
            )
        record = TraceRecord.from_trace(trace, request_id)
        remember(record)
        if config.include_think and trace.think_text:
            content = (
                f"{config.segmenter.think_open}\n{trace.think_text}{config.segmenter.think_close}\n\n"
                f"{trace.final_answer}"
            )
        else:
            content = trace.final_answer
        completion_tokens = trace.accounting.think_tokens + trace.accounting.answer_tokens
        return {
            "id": f"chatcmpl-{request_id}",
            "object": "chat.completion",
            "created": int(time.time()),
            "model": payload.get("model") or "steproute",
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": content},
                    "finish_reason": "stop",
                }
            ],
            "usage": {
                "prompt_tokens": len(question.split()),
                "completion_tokens": completion_tokens,
                "total_tokens": len(question.split()) + completion_tokens,
            },
            "steproute": {
                "trace_id": request_id,
                "intervention_rate": trace.accounting.intervention_rate,
                "probe_count": trace.accounting.probe_count,
            },
        }

    @app.get("/v1/traces/{trace_id}")
    def get_trace(trace_id: str):
        with registry_lock:
            record = registry.get(trace_id)
        if record is None:
            for persisted in sink.read_all():
                if persisted.request_id == trace_id:
                    record = persisted
                    break
        if record is None:
            return JSONResponse(
                status_code=404,
                content={"error": {"message": f"no trace {trace_id}", "type": "not_found"}},
            )
        return record.to_dict()

    @app.get("/healthz")
    def healthz():
        small_ok = small.healthy()
        large_ok = large.healthy()
        return {
            "status": "ok" if (small_ok and large_ok) else "degraded",
            "backends": {"small": small_ok, "large": large_ok},
        }

    return app


def serve(config: ServiceConfig) -> None:
    """Run the proxy until interrupted; startup health checks warn and continue."""
    import uvicorn

    logging.basicConfig(level=getattr(logging, config.log_level.upper(), logging.INFO))
    small = build_backend(config.small, config, "small")
    large = build_backend(config.large, config, "large")
    for name, backend in (("small", small), ("large", large)):
        if backend.healthy():
            logger.info("%s backend %s reachable", name, backend.model)
        else:
            logger.warning("%s backend %s unreachable at startup; continuing", name, backend.model)
    app = build_app(config, small, large)
    uvicorn.run(app, host=config.host, port=config.port, log_level=config.log_level.lower())
