"""In-process OpenAI-compatible completion server for gateway tests.

Plays a fixed transcript: given a prompt, it locates how much of the
transcript was already generated and streams the remainder, with per-token
logprobs and configurable stop-string semantics.
"""

from __future__ import annotations

import asyncio
import json
import math
from dataclasses import dataclass, field

import httpx
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse

from steproute.simulation import sim_tokenize


class SyncASGITransport(httpx.BaseTransport):
    """Bridge a sync httpx.Client onto an ASGI app, buffering each body.

    The client still consumes responses through its streaming API; only the
    wire-level interleaving is lost, which the tests do not depend on.
    """

    def __init__(self, app):
        self._app = app

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        async def roundtrip():
            transport = httpx.ASGITransport(app=self._app)
            response = await transport.handle_async_request(request)
            body = b"".join([part async for part in response.stream])
            await transport.aclose()
            return response, body

        response, body = asyncio.run(roundtrip())
        return httpx.Response(
            status_code=response.status_code,
            headers=response.headers,
            content=body,
            request=request,
        )

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"


@dataclass
class FakeUpstream:
    think_text: str
    answer_text: str
    # probe position (chars into think_text) -> {token: prob}; the top token
    # must be the transcript's next token at that position.
    probe_dists: dict[int, dict[str, float]] = field(default_factory=dict)
    stop_mode: str = "include"  # include | strip | ignore
    fail_requests: int = 0  # 500 on the first N requests
    omit_logprobs: bool = False
    model: str = "fake-upstream"
    requests: list = field(default_factory=list)

    def remaining(self, prompt: str) -> list[str]:
        """Tokens the transcript still owes for this prompt."""
        marker = THINK_OPEN + "\n"
        idx = prompt.find(marker)
        generated = prompt[idx + len(marker):] if idx != -1 else ""
        if THINK_CLOSE in generated:
            return sim_tokenize(self.answer_text)
        pos = len(generated)
        rest = self.think_text[pos:]
        tokens = sim_tokenize(rest)
        tokens.append(THINK_CLOSE)
        tokens.extend(sim_tokenize("\n\n" + self.answer_text))
        return tokens

    def probe_dist(self, prompt: str, token: str) -> dict[str, float]:
        marker = THINK_OPEN + "\n"
        idx = prompt.find(marker)
        pos = len(prompt[idx + len(marker):]) if idx != -1 else 0
        dist = self.probe_dists.get(pos)
        if dist is None:
            dist = {token: 0.9, "~alt": 0.1}
        return dist

    def app(self) -> FastAPI:
        api = FastAPI()

        @api.get("/v1/models")
        def models():
            return {"object": "list", "data": [{"id": self.model, "object": "model"}]}

        @api.post("/v1/completions")
        async def completions(request: Request):
            payload = await request.json()
            self.requests.append(payload)
            if self.fail_requests > 0:
                self.fail_requests -= 1
                return JSONResponse(status_code=500, content={"error": "scripted failure"})
            prompt = payload["prompt"]
            max_tokens = int(payload.get("max_tokens", 16))
            want_logprobs = payload.get("logprobs") is not None and not self.omit_logprobs
            stops = payload.get("stop") or []
            if isinstance(stops, str):
                stops = [stops]

            tokens = self.remaining(prompt)[:max_tokens]
            finish = "length" if len(tokens) == int(payload.get("max_tokens", 16)) else "stop_eos"

            # server-side stop handling over the whole emission
            emitted: list[str] = []
            finish_reason = None
            stop_reason = None
            text_so_far = ""
            for tok in tokens:
                text_so_far += tok
                emitted.append(tok)
                if self.stop_mode != "ignore" and stops:
                    hit = next((s for s in stops if s in text_so_far), None)
                    if hit:
                        if self.stop_mode == "strip":
                            cut = text_so_far.index(hit)
                            # re-tokenize the kept prefix
                            emitted = sim_tokenize(text_so_far[:cut])
                        finish_reason = "stop"
                        stop_reason = hit
                        break
            if finish_reason is None:
                finish_reason = "length" if finish == "length" else "stop"

            def token_payload(tok: str, first: bool) -> dict:
                data: dict = {"text": tok}
                if want_logprobs:
                    if first and payload.get("max_tokens") == 1:
                        dist = self.probe_dist(prompt, tok)
                        top = {t: math.log(p) for t, p in dist.items()}
                        lp = top[tok]
                    else:
                        top = {tok: math.log(0.9), "~alt": math.log(0.1)}
                        lp = math.log(0.9)
                    data["logprobs"] = {
                        "tokens": [tok],
                        "token_logprobs": [lp],
                        "top_logprobs": [top],
                    }
                return data

            if payload.get("stream"):
                def gen():
                    for i, tok in enumerate(emitted):
                        chunk = {
                            "id": "cmpl-fake",
                            "object": "text_completion",
                            "choices": [dict(token_payload(tok, i == 0), index=0, finish_reason=None)],
                        }
                        yield f"data: {json.dumps(chunk)}\n\n"
                    final = {
                        "id": "cmpl-fake",
                        "object": "text_completion",
                        "choices": [
                            {
                                "index": 0,
                                "text": "",
                                "finish_reason": finish_reason,
                                "stop_reason": stop_reason,
                            }
                        ],
                    }
                    yield f"data: {json.dumps(final)}\n\n"
                    yield "data: [DONE]\n\n"

                return StreamingResponse(gen(), media_type="text/event-stream")

            text = "".join(emitted)
            choice: dict = {
                "index": 0,
                "text": text,
                "finish_reason": finish_reason,
                "stop_reason": stop_reason,
            }
            if want_logprobs:
                merged = {"tokens": [], "token_logprobs": [], "top_logprobs": []}
                for i, tok in enumerate(emitted):
                    data = token_payload(tok, i == 0)["logprobs"]
                    merged["tokens"].extend(data["tokens"])
                    merged["token_logprobs"].extend(data["token_logprobs"])
                    merged["top_logprobs"].extend(data["top_logprobs"])
                choice["logprobs"] = merged
            return {
                "id": "cmpl-fake",
                "object": "text_completion",
                "model": self.model,
                "choices": [choice],
                "usage": {"completion_tokens": len(emitted)},
            }

        @api.post("/v1/chat/completions")
        async def chat_completions(request: Request):
            payload = await request.json()
            self.requests.append(payload)
            if self.fail_requests > 0:
                self.fail_requests -= 1
                return JSONResponse(status_code=500, content={"error": "scripted failure"})
            prompt = payload["messages"][-1]["content"]
            max_tokens = int(payload.get("max_tokens", 16))
            want_logprobs = bool(payload.get("logprobs")) and not self.omit_logprobs
            tokens = self.remaining(prompt)[:max_tokens]

            def chat_logprob_entry(tok: str, first: bool) -> dict:
                if first and payload.get("max_tokens") == 1:
                    dist = self.probe_dist(prompt, tok)
                else:
                    dist = {tok: 0.9, "~alt": 0.1}
                return {
                    "token": tok,
                    "logprob": math.log(dist[tok]),
                    "top_logprobs": [
                        {"token": t, "logprob": math.log(p)} for t, p in dist.items()
                    ],
                }

            if payload.get("stream"):
                stops = payload.get("stop") or []
                if isinstance(stops, str):
                    stops = [stops]

                def gen():
                    text_so_far = ""
                    finish_reason = "stop"
                    for i, tok in enumerate(tokens):
                        text_so_far += tok
                        choice: dict = {"index": 0, "delta": {"content": tok}, "finish_reason": None}
                        if want_logprobs:
                            choice["logprobs"] = {"content": [chat_logprob_entry(tok, i == 0)]}
                        chunk = {"id": "chatcmpl-fake", "object": "chat.completion.chunk", "choices": [choice]}
                        yield f"data: {json.dumps(chunk)}\n\n"
                        if self.stop_mode != "ignore" and any(s in text_so_far for s in stops):
                            break
                    final = {
                        "id": "chatcmpl-fake",
                        "object": "chat.completion.chunk",
                        "choices": [{"index": 0, "delta": {}, "finish_reason": finish_reason}],
                    }
                    yield f"data: {json.dumps(final)}\n\n"
                    yield "data: [DONE]\n\n"

                return StreamingResponse(gen(), media_type="text/event-stream")

            text = "".join(tokens)
            choice: dict = {
                "index": 0,
                "message": {"role": "assistant", "content": text},
                "finish_reason": "stop",
            }
            if want_logprobs:
                choice["logprobs"] = {
                    "content": [chat_logprob_entry(tok, i == 0) for i, tok in enumerate(tokens)]
                }
            return {
                "id": "chatcmpl-fake",
                "object": "chat.completion",
                "model": self.model,
                "choices": [choice],
                "usage": {"completion_tokens": len(tokens)},
            }

        return api
