"""Trajectory reward: weighted accuracy, format and tool-use bits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from foldsearch.errors import ProtocolError, ToolValidationError
from foldsearch.history import Trajectory
from foldsearch.protocol.grammar import parse_model_turn
from foldsearch.protocol.schemas import EpisodeToolState, ToolSchema, make_registry, validate_tool_call


@dataclass(frozen=True)
class RewardWeights:
    acc: float = 0.7
    format: float = 0.2
    tool: float = 0.1

    def __post_init__(self):
        for name in ("acc", "format", "tool"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"weight {name}={v} outside [0, 1]")
        if self.acc + self.format + self.tool > 1.0 + 1e-9:
            raise ValueError("weights must sum to at most 1")


@dataclass(frozen=True)
class RewardBreakdown:
    s_acc: int
    s_format: int
    s_tool: int
    r_total: float
    weights: RewardWeights = RewardWeights()


def total_reward(s_acc: int, s_format: int, s_tool: int, weights: RewardWeights | None = None) -> float:
    """Weighted sum of the three bits.

    Summed with ``math.fsum`` and rounded to 12 decimals so that e.g.
    0.7 + 0.2 comes out as 0.9 rather than 0.8999999999999999.
    """
    w = weights or RewardWeights()
    for bit in (s_acc, s_format, s_tool):
        if bit not in (0, 1):
            raise ValueError(f"score components are bits, got {bit!r}")
    return round(math.fsum((w.acc * s_acc, w.format * s_format, w.tool * s_tool)), 12)


def raw_turns(traj: Trajectory) -> list[str]:
    """Every model output of the episode, including unparseable ones.

    Falls back to the recorded or re-serialized actions for trajectories
    that were not produced by the runtime.
    """
    recorded = traj.metadata.get("raw_turns")
    if recorded is not None:
        return list(recorded)
    return [a.raw if a.raw is not None else a.serialized() for a in traj.history.actions]


def score_format(traj: Trajectory) -> int:
    """1 iff every model turn parses strictly and the last is a boxed answer."""
    turns = raw_turns(traj)
    if not turns or not traj.answered:
        return 0
    parsed = []
    for raw in turns:
        try:
            parsed.append(parse_model_turn(raw, lenient=False))
        except ProtocolError:
            return 0
    last = parsed[-1]
    return int(last.is_answer and last.payload.boxed is not None)


def score_tool(traj: Trajectory, registry: Mapping[str, ToolSchema] | None = None) -> int:
    """1 iff every tool call in the history passes validation in order,
    including the once-per-episode image search rule."""
    registry = registry if registry is not None else make_registry()
    state = EpisodeToolState(image_count=len(traj.query.images))
    for action in traj.history.actions:
        if action.kind != "tool_call":
            continue
        try:
            validate_tool_call(action.as_tool_call(), registry, state)
        except ToolValidationError:
            return 0
        if action.tool_name == "image_search":
            state = EpisodeToolState(state.image_count, image_search_used=True)
    return 1


def reward_breakdown(
    traj: Trajectory,
    s_acc: int,
    weights: RewardWeights | None = None,
    registry: Mapping[str, ToolSchema] | None = None,
) -> RewardBreakdown:
    w = weights or RewardWeights()
    f, t = score_format(traj), score_tool(traj, registry)
    return RewardBreakdown(s_acc, f, t, total_reward(s_acc, f, t, w), w)
