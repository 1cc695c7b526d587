"""Service configuration: JSON file plus flat flag overrides.

Every invariant is checked at load time with a field-specific diagnostic,
before any backend is contacted.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .backends import BackendHandle, OpenAIBackend, RetryPolicy, SamplingParams
from .routing import Policy, PolicyConfig
from .segmenter import (
    DEFAULT_BUDGET,
    DEFAULT_DELIMITER,
    DEFAULT_THINK_CLOSE,
    DEFAULT_THINK_OPEN,
)


class ConfigError(ValueError):
    """Configuration violates an invariant; message names the field."""


@dataclass(frozen=True)
class BackendSettings:
    kind: str = "openai"  # "openai" | "scripted"
    endpoint: str = ""
    model: str = ""
    top_logprobs_k: int = 20
    timeout_ms: int = 120_000
    retries: int = 3
    api_key_env: str = ""
    api_style: str = "completions"
    scenario_path: str = ""


@dataclass(frozen=True)
class PolicySettings:
    policy: str = "init_entropy"
    threshold: float = 0.9
    rng_seed: int = 0
    budget_tokens: int = DEFAULT_BUDGET
    temperature: float = 0.6
    top_p: float = 0.95


@dataclass(frozen=True)
class SegmenterSettings:
    delimiter: str = DEFAULT_DELIMITER
    think_open: str = DEFAULT_THINK_OPEN
    think_close: str = DEFAULT_THINK_CLOSE


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    small: BackendSettings = BackendSettings()
    large: BackendSettings = BackendSettings()
    policy: PolicySettings = PolicySettings()
    segmenter: SegmenterSettings = SegmenterSettings()
    trace_sink: str = "traces.jsonl"
    log_level: str = "INFO"
    include_think: bool = True

    def policy_config(self) -> PolicyConfig:
        try:
            policy = Policy(self.policy.policy)
        except ValueError as exc:
            raise ConfigError(f"policy.policy: unknown policy {self.policy.policy!r}") from exc
        return PolicyConfig(
            policy=policy,
            threshold=self.policy.threshold,
            rng_seed=self.policy.rng_seed,
            budget_tokens=self.policy.budget_tokens,
            sampling=SamplingParams(temperature=self.policy.temperature, top_p=self.policy.top_p),
        )


def _build_section(cls, data: dict, prefix: str):
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{prefix}{key}: unknown field")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{prefix}: {exc}") from exc


def _validate_backend(settings: BackendSettings, side: str) -> None:
    if settings.kind not in ("openai", "scripted"):
        raise ConfigError(f"{side}.kind: must be 'openai' or 'scripted', got {settings.kind!r}")
    if settings.kind == "openai":
        if not settings.endpoint:
            raise ConfigError(f"{side}.endpoint: required for an openai backend")
        if not settings.model:
            raise ConfigError(f"{side}.model: required for an openai backend")
    else:
        if not settings.scenario_path:
            raise ConfigError(f"{side}.scenario_path: required for a scripted backend")
    if settings.top_logprobs_k < 1:
        raise ConfigError(f"{side}.top_logprobs_k: must be >= 1, got {settings.top_logprobs_k}")
    if settings.timeout_ms <= 0:
        raise ConfigError(f"{side}.timeout_ms: must be > 0, got {settings.timeout_ms}")
    if settings.retries < 1:
        raise ConfigError(f"{side}.retries: must be >= 1, got {settings.retries}")
    if settings.api_style not in ("completions", "chat"):
        raise ConfigError(f"{side}.api_style: must be 'completions' or 'chat', got {settings.api_style!r}")


def validate(config: ServiceConfig) -> ServiceConfig:
    if not 0 < config.port < 65536:
        raise ConfigError(f"port: must be in 1..65535, got {config.port}")
    _validate_backend(config.small, "small")
    _validate_backend(config.large, "large")
    if config.policy.policy not in {p.value for p in Policy}:
        raise ConfigError(f"policy.policy: unknown policy {config.policy.policy!r}")
    if not math.isfinite(config.policy.threshold):
        raise ConfigError(f"policy.threshold: must be finite, got {config.policy.threshold}")
    if config.policy.budget_tokens < 1:
        raise ConfigError(f"policy.budget_tokens: must be >= 1, got {config.policy.budget_tokens}")
    if not config.segmenter.delimiter:
        raise ConfigError("segmenter.delimiter: must be non-empty")
    if not config.trace_sink:
        raise ConfigError("trace_sink: must be non-empty")
    return config


def config_from_dict(data: dict) -> ServiceConfig:
    known = {"host", "port", "small", "large", "policy", "segmenter", "trace_sink", "log_level", "include_think"}
    for key in data:
        if key not in known:
            raise ConfigError(f"{key}: unknown field")
    config = ServiceConfig(
        host=data.get("host", "127.0.0.1"),
        port=int(data.get("port", 8080)),
        small=_build_section(BackendSettings, data.get("small", {}), "small."),
        large=_build_section(BackendSettings, data.get("large", {}), "large."),
        policy=_build_section(PolicySettings, data.get("policy", {}), "policy."),
        segmenter=_build_section(SegmenterSettings, data.get("segmenter", {}), "segmenter."),
        trace_sink=data.get("trace_sink", "traces.jsonl"),
        log_level=data.get("log_level", "INFO"),
        include_think=bool(data.get("include_think", True)),
    )
    return validate(config)


def load_config(path: str | Path, overrides: dict | None = None) -> ServiceConfig:
    """Load a JSON config file and apply flat overrides like policy.threshold."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return config_from_dict(data)


def build_backend(settings: BackendSettings, config: ServiceConfig, role: str):
    """Instantiate the configured backend for one side of the router."""
    if settings.kind == "scripted":
        from .simulation import ScriptedBackend, load_scenario

        scenario = load_scenario(settings.scenario_path)
        return ScriptedBackend(scenario, role, delimiter=config.segmenter.delimiter)
    handle = BackendHandle(
        endpoint=settings.endpoint,
        model=settings.model,
        top_logprobs_k=settings.top_logprobs_k,
        sampling=SamplingParams(temperature=config.policy.temperature, top_p=config.policy.top_p),
        timeout_ms=settings.timeout_ms,
        retry=RetryPolicy(max_attempts=settings.retries),
        api_style=settings.api_style,
        api_key_env=settings.api_key_env,
        delimiter=config.segmenter.delimiter,
    )
    return OpenAIBackend(handle)
