"""Split a trajectory into supervision segments with a binary learning mask."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

from foldsearch.errors import IncompleteTrajectory
from foldsearch.history import Trajectory
from foldsearch.protocol.grammar import (
    IMAGE_PLACEHOLDER,
    serialize_payload,
    serialize_think,
    wrap_tool_response,
)

Origin = Literal["query", "think", "tool_call", "tool_response", "answer"]

MODEL_GENERATED = frozenset({"think", "tool_call", "answer"})


@dataclass(frozen=True)
class SupervisionSegment:
    text: str
    mask: int
    origin: Origin

    def __post_init__(self):
        expected = int(self.origin in MODEL_GENERATED)
        if self.mask != expected:
            raise ValueError(f"{self.origin} segments carry mask={expected}")


def _seg(text: str, origin: Origin) -> SupervisionSegment:
    return SupervisionSegment(text, int(origin in MODEL_GENERATED), origin)


def supervision_segments(traj: Trajectory) -> list[SupervisionSegment]:
    """Partition the serialized conversation into ordered segments.

    Model-generated segments (think, tool_call, answer) get mask 1; the query
    and tool responses get mask 0. Joining the segment texts yields
    :func:`serialize_conversation`.
    """
    if not traj.history.completed:
        raise IncompleteTrajectory("trajectory has no final answer")
    q = traj.query
    segments = [_seg(IMAGE_PLACEHOLDER * len(q.images) + q.question + "\n", "query")]
    for action, obs in traj.history.turns:
        turn = action.as_turn()
        segments.append(_seg(serialize_think(turn.think) + "\n", "think"))
        if action.kind == "tool_call":
            segments.append(_seg(serialize_payload(turn.payload) + "\n", "tool_call"))
            segments.append(_seg(wrap_tool_response(obs.text, len(obs.images)) + "\n", "tool_response"))
        else:
            segments.append(_seg(serialize_payload(turn.payload), "answer"))
    return segments


def serialize_conversation(traj: Trajectory) -> str:
    return "".join(s.text for s in supervision_segments(traj))
