"""Episode orchestration and model clients."""

from foldsearch.runtime.client import (
    ChatCompletionsClient,
    ContextLimitedClient,
    Message,
    ModelClient,
    ModelRequest,
    MockPolicyClient,
    ScriptedModelClient,
    cycle_script,
)
from foldsearch.runtime.episode import (
    EpisodeConfig,
    EpisodeResult,
    ModelEndpoint,
    RequestAccounting,
    run_episode,
)
from foldsearch.runtime.request import build_model_request

__all__ = [
    "ChatCompletionsClient",
    "ContextLimitedClient",
    "EpisodeConfig",
    "EpisodeResult",
    "Message",
    "ModelClient",
    "ModelEndpoint",
    "ModelRequest",
    "RequestAccounting",
    "MockPolicyClient",
    "ScriptedModelClient",
    "build_model_request",
    "cycle_script",
    "run_episode",
]
