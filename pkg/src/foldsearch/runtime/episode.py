"""The agent loop: request, parse, validate, dispatch, repeat."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Literal, Mapping, Protocol

from foldsearch.errors import EndpointError, ProtocolError, ToolError, ToolValidationError
from foldsearch.history import (
    Action,
    InteractionHistory,
    Observation,
    Query,
    TokenEstimator,
    Trajectory,
    append_turn,
    finalize,
    history_token_length,
)
from foldsearch.protocol.grammar import ToolCall, parse_model_turn
from foldsearch.protocol.prompts import render_system_prompt
from foldsearch.protocol.schemas import EpisodeToolState, ToolSchema, make_registry, validate_tool_call
from foldsearch.runtime.client import ModelClient
from foldsearch.runtime.request import build_model_request
from foldsearch.vfold.fold import FoldPolicy, HistoryFolder, should_compress
from foldsearch.vfold.render import RenderConfig

log = logging.getLogger(__name__)

Termination = Literal["answered", "max_turns_exhausted", "protocol_failure"]


class Gateway(Protocol):
    def execute(self, call: ToolCall, query: Query) -> Observation: ...


@dataclass(frozen=True)
class ModelEndpoint:
    url: str
    model: str
    api_key_env: str | None = None
    decode_params: Mapping[str, Any] = field(default_factory=dict)
    timeout: float = 120.0


@dataclass(frozen=True)
class EpisodeConfig:
    max_turns: int = 10
    fold_policy: FoldPolicy = field(default_factory=FoldPolicy)
    fold_enabled: bool = True
    render_config: RenderConfig = field(default_factory=RenderConfig)
    system_prompt: str | None = None
    model_endpoint: ModelEndpoint | None = None
    strict_protocol: bool = False
    max_consecutive_parse_failures: int = 2
    registry: Mapping[str, ToolSchema] | None = None

    def __post_init__(self):
        if self.max_turns < 1:
            raise ValueError("max_turns must be >= 1")
        if self.max_consecutive_parse_failures < 1:
            raise ValueError("max_consecutive_parse_failures must be >= 1")

    def resolved_registry(self) -> Mapping[str, ToolSchema]:
        return self.registry if self.registry is not None else make_registry()

    def resolved_system_prompt(self) -> str:
        if self.system_prompt is not None:
            return self.system_prompt
        return render_system_prompt(self.resolved_registry().values())


@dataclass(frozen=True)
class RequestAccounting:
    turn: int
    text_tokens: int
    visual_tokens: int
    folded: bool

    @property
    def total(self) -> int:
        return self.text_tokens + self.visual_tokens


@dataclass(frozen=True)
class EpisodeResult:
    trajectory: Trajectory
    termination: Termination
    requests: tuple[RequestAccounting, ...] = ()

    def __post_init__(self):
        if (self.termination == "answered") != self.trajectory.answered:
            raise ValueError("termination 'answered' iff the trajectory ends with a final answer")


def failure_observation(tool: str, reason: str) -> Observation:
    return Observation(text=f"Tool call failed: {reason}", tool_name=tool)


def run_episode(
    query: Query,
    config: EpisodeConfig,
    gateway: Gateway,
    model_client: ModelClient,
) -> EpisodeResult:
    """Run one episode until a final answer or ``max_turns`` model calls.

    Unparseable model output is kept in ``metadata["raw_turns"]`` but not
    appended to the history; the same history is re-requested. After
    ``max_consecutive_parse_failures`` in a row the episode ends with
    ``protocol_failure``. Invalid tool calls and tool failures become failure
    observations and the episode continues. An :class:`EndpointError` from
    the model aborts the episode; the partial result rides on the exception.
    """
    registry = config.resolved_registry()
    estimator = config.fold_policy.estimator
    folder = None
    if config.fold_enabled:
        folder = HistoryFolder(
            threshold_tokens=config.fold_policy.threshold_tokens,
            fresh_window_k=config.fold_policy.fresh_window_k,
            estimator=estimator,
            visual_patch_px=config.fold_policy.visual_patch_px,
            render_config=config.render_config,
        ).fit()

    history = InteractionHistory(query)
    tool_state = EpisodeToolState(image_count=len(query.images))
    raw_turns: list[str] = []
    accounting: list[RequestAccounting] = []
    failures_in_a_row = 0
    last_output = ""

    def result(termination: Termination, final: Action | None = None) -> EpisodeResult:
        final_req = accounting[-1].total if accounting else 0
        metadata = {
            "raw_turns": list(raw_turns),
            "termination": termination,
            "model_calls": len(raw_turns),
            "history_tokens": history_token_length(history, estimator),
            "context_tokens": final_req + estimator(last_output),
            "requests": [
                {"turn": a.turn, "text_tokens": a.text_tokens, "visual_tokens": a.visual_tokens, "folded": a.folded}
                for a in accounting
            ],
        }
        if final is not None:
            traj = finalize(history, final, metadata)
            traj.metadata["history_tokens"] = history_token_length(traj.history, estimator)
        else:
            traj = Trajectory(history, None, metadata)
        return EpisodeResult(traj, termination, tuple(accounting))

    while len(raw_turns) < config.max_turns:
        request = build_model_request(history, config, folder)
        accounting.append(
            RequestAccounting(
                turn=len(raw_turns),
                text_tokens=request.text_tokens(estimator),
                visual_tokens=request.visual_tokens(config.fold_policy.visual_patch_px),
                folded=config.fold_enabled and should_compress(history, config.fold_policy),
            )
        )
        try:
            raw = model_client.complete(request)
        except EndpointError as exc:
            exc.partial_result = result("protocol_failure")
            raise
        raw_turns.append(raw)
        last_output = raw

        try:
            turn = parse_model_turn(raw, lenient=not config.strict_protocol)
        except ProtocolError as exc:
            failures_in_a_row += 1
            log.info("unparseable model turn (%d in a row): %s", failures_in_a_row, exc)
            if failures_in_a_row >= config.max_consecutive_parse_failures:
                return result("protocol_failure")
            continue
        failures_in_a_row = 0

        action = Action.from_turn(turn, raw=raw)
        if turn.is_answer:
            return result("answered", action)

        call = action.as_tool_call()
        try:
            validate_tool_call(call, registry, tool_state)
        except ToolValidationError as exc:
            history = append_turn(history, action, failure_observation(call.name, f"{type(exc).__name__}: {exc}"))
            continue
        if call.name == "image_search":
            tool_state = replace(tool_state, image_search_used=True)
        try:
            obs = gateway.execute(call, query)
        except ToolError as exc:
            obs = failure_observation(call.name, f"{type(exc).__name__}: {exc}")
        history = append_turn(history, action, obs)

    return result("max_turns_exhausted")


def episode_tokens(traj: Trajectory, estimator: TokenEstimator | None = None) -> int:
    """Unfolded text length of a finished trajectory's history."""
    return history_token_length(traj.history, estimator)
