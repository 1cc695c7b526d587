"""Step-wise collaborative inference: probe a step's first token with a small
model and route the step by the probe's entropy."""

from .backends import (
    Backend,
    BackendError,
    BackendHandle,
    Boundary,
    GenerationContext,
    MissingLogprobsError,
    OpenAIBackend,
    ProbeResult,
    SamplingParams,
    StepResult,
    TransportError,
)
from .routing import (
    Action,
    Policy,
    PolicyConfig,
    ReasoningStep,
    RoutingDecision,
    Trace,
    TraceFailure,
    decide_init_entropy,
    run_trace,
    sweep,
)
from .segmenter import EventKind, Phase, SegmentEvent, StepSegmenter
from .uncertainty import (
    StepLogprobs,
    TokenDistribution,
    initial_token_entropy,
    normalize_probe,
    shannon_entropy,
    step_entropy,
    step_perplexity,
)

__version__ = "0.1.0"
