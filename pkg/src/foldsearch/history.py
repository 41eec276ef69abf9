"""Episode data model: query, actions, observations, histories, trajectories.

Histories are immutable values; :func:`append_turn` returns a new history that
shares every earlier turn with its parent.
"""

from __future__ import annotations

import base64
import hashlib
import importlib
import io
import json
import math
import mimetypes
import os
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Iterator, Literal, NamedTuple

from foldsearch.errors import (
    AppendAfterFinal,
    MissingObservation,
    NotAnAnswer,
    UnexpectedObservation,
)
from foldsearch.protocol.grammar import (
    Answer,
    ParsedTurn,
    ToolCall,
    serialize_turn,
)


@dataclass(frozen=True)
class ImagePayload:
    data: bytes = field(repr=False)
    media_type: str = "image/png"
    source: str | None = None

    @cached_property
    def size(self) -> tuple[int, int]:
        from PIL import Image

        with Image.open(io.BytesIO(self.data)) as im:
            return im.size

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.data).hexdigest()

    def data_uri(self) -> str:
        return f"data:{self.media_type};base64,{base64.b64encode(self.data).decode('ascii')}"

    @classmethod
    def from_path(cls, path: str | Path) -> "ImagePayload":
        path = Path(path)
        media_type = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
        return cls(data=path.read_bytes(), media_type=media_type, source=str(path))


@dataclass(frozen=True)
class Query:
    question: str
    images: tuple[ImagePayload, ...] = ()

    def __post_init__(self):
        if not self.question.strip():
            raise ValueError("query question must be non-empty")
        object.__setattr__(self, "images", tuple(self.images))


ActionKind = Literal["tool_call", "final_answer"]


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    think: str
    tool_name: str | None = None
    tool_arguments: dict[str, Any] | None = None
    answer_text: str | None = None
    boxed_answer: str | None = None
    raw: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind == "tool_call":
            if self.tool_name is None or self.tool_arguments is None:
                raise ValueError("tool_call action needs tool_name and tool_arguments")
            if self.answer_text is not None or self.boxed_answer is not None:
                raise ValueError("tool_call action cannot carry answer fields")
        elif self.kind == "final_answer":
            if self.answer_text is None:
                raise ValueError("final_answer action needs answer_text")
            if self.tool_name is not None or self.tool_arguments is not None:
                raise ValueError("final_answer action cannot carry tool fields")
        else:
            raise ValueError(f"unknown action kind {self.kind!r}")

    @classmethod
    def tool_call(cls, think: str, name: str, arguments: dict[str, Any], raw: str | None = None) -> "Action":
        return cls("tool_call", think, tool_name=name, tool_arguments=arguments, raw=raw)

    @classmethod
    def final_answer(cls, think: str, text: str, boxed: str | None = None, raw: str | None = None) -> "Action":
        return cls("final_answer", think, answer_text=text, boxed_answer=boxed, raw=raw)

    @classmethod
    def from_turn(cls, turn: ParsedTurn, raw: str | None = None) -> "Action":
        p = turn.payload
        if isinstance(p, ToolCall):
            return cls.tool_call(turn.think, p.name, p.arguments, raw=raw)
        return cls.final_answer(turn.think, p.text, p.boxed, raw=raw)

    def as_turn(self) -> ParsedTurn:
        if self.kind == "tool_call":
            return ParsedTurn(self.think, ToolCall(self.tool_name, self.tool_arguments))
        return ParsedTurn(self.think, Answer(self.answer_text, self.boxed_answer))

    def as_tool_call(self) -> ToolCall:
        return ToolCall(self.tool_name, self.tool_arguments)

    def serialized(self) -> str:
        return serialize_turn(self.as_turn())


@dataclass(frozen=True)
class Observation:
    text: str
    tool_name: str
    images: tuple[ImagePayload, ...] = ()
    turn_index: int = 0
    fetched_at: datetime = field(
        default_factory=lambda: datetime.now(timezone.utc), compare=False
    )

    def __post_init__(self):
        if self.text is None:
            raise ValueError("observation text is never absent")
        object.__setattr__(self, "images", tuple(self.images))


class Turn(NamedTuple):
    action: Action
    observation: Observation | None


@dataclass(frozen=True)
class InteractionHistory:
    query: Query
    turns: tuple[Turn, ...] = ()

    @property
    def completed(self) -> bool:
        return bool(self.turns) and self.turns[-1].action.kind == "final_answer"

    @property
    def actions(self) -> list[Action]:
        return [t.action for t in self.turns]

    @property
    def observations(self) -> list[Observation]:
        return [t.observation for t in self.turns if t.observation is not None]

    @property
    def image_search_used(self) -> bool:
        return any(a.kind == "tool_call" and a.tool_name == "image_search" for a in self.actions)

    def __len__(self) -> int:
        return len(self.turns)

    def __iter__(self) -> Iterator[Turn]:
        return iter(self.turns)


def append_turn(
    history: InteractionHistory, action: Action, observation: Observation | None = None
) -> InteractionHistory:
    """Return ``history`` extended by one (action, observation) pair.

    The observation is re-indexed to follow the last observation already in
    the history.
    """
    if history.completed:
        raise AppendAfterFinal("history already ends with a final answer")
    if action.kind == "tool_call" and observation is None:
        raise MissingObservation("tool_call action needs an observation")
    if action.kind == "final_answer" and observation is not None:
        raise UnexpectedObservation("final_answer action takes no observation")
    if observation is not None:
        observation = replace(observation, turn_index=len(history.observations))
    return replace(history, turns=history.turns + (Turn(action, observation),))


@dataclass(frozen=True)
class Trajectory:
    """A finished episode. ``answer`` is None when no final answer was given."""

    history: InteractionHistory
    answer: str | None
    metadata: dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def query(self) -> Query:
        return self.history.query

    @property
    def answered(self) -> bool:
        return self.history.completed


def finalize(
    history: InteractionHistory, answer_action: Action, metadata: dict[str, Any] | None = None
) -> Trajectory:
    if answer_action.kind != "final_answer":
        raise NotAnAnswer(f"expected a final_answer action, got {answer_action.kind}")
    history = append_turn(history, answer_action)
    answer = answer_action.boxed_answer
    if answer is None:
        answer = answer_action.answer_text
    return Trajectory(history=history, answer=answer, metadata=dict(metadata or {}))


# token accounting


def _chars_div4(text: str) -> int:
    return math.ceil(len(text.encode("utf-8")) / 4)


def _whitespace(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class TokenEstimator:
    """Deterministic text-length estimate.

    ``chars_div4`` is ceil(utf8_bytes / 4). ``whitespace`` counts
    whitespace-separated words. ``pluggable_exact`` calls ``counter``, either a
    callable or a ``"module:function"`` import path.
    """

    mode: Literal["chars_div4", "whitespace", "pluggable_exact"] = "chars_div4"
    counter: Callable[[str], int] | str | None = None

    def __post_init__(self):
        if self.mode not in ("chars_div4", "whitespace", "pluggable_exact"):
            raise ValueError(f"unknown estimator mode {self.mode!r}")
        if self.mode == "pluggable_exact" and self.counter is None:
            raise ValueError("pluggable_exact needs a counter")

    @cached_property
    def _fn(self) -> Callable[[str], int]:
        if self.mode == "chars_div4":
            return _chars_div4
        if self.mode == "whitespace":
            return _whitespace
        if callable(self.counter):
            return self.counter
        module, _, attr = self.counter.partition(":")
        return getattr(importlib.import_module(module), attr)

    def __call__(self, text: str) -> int:
        return int(self._fn(text))


def history_text_segments(history: InteractionHistory) -> list[str]:
    segments = [history.query.question]
    for action, obs in history.turns:
        segments.append(action.serialized())
        if obs is not None:
            segments.append(obs.text)
    return segments


def history_token_length(history: InteractionHistory, estimator: TokenEstimator | None = None) -> int:
    """Text-only length of a history; image payloads contribute nothing."""
    estimator = estimator or TokenEstimator()
    return sum(estimator(s) for s in history_text_segments(history))


# line-delimited serialization


def store_image(image: ImagePayload, image_dir: Path, base_dir: Path) -> str:
    """Write ``image`` content-addressed under ``image_dir``; return its path
    relative to ``base_dir``. Existing files are left alone."""
    ext = mimetypes.guess_extension(image.media_type) or ".bin"
    path = image_dir / f"{image.sha256}{ext}"
    if not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f"{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
        tmp.write_bytes(image.data)
        os.replace(tmp, path)
    return path.relative_to(base_dir).as_posix()


def _load_image(rel: str, media_type: str, base_dir: Path) -> ImagePayload:
    return ImagePayload((base_dir / rel).read_bytes(), media_type=media_type, source=rel)


def trajectory_to_record(traj: Trajectory, base_dir: str | Path, image_subdir: str = "images") -> dict[str, Any]:
    """Serialize to a JSON-ready dict. Images are written content-addressed
    under ``base_dir/image_subdir`` and referenced by relative path."""
    base_dir = Path(base_dir)
    image_dir = base_dir / image_subdir

    def images(imgs):
        return [
            {"path": store_image(im, image_dir, base_dir), "media_type": im.media_type}
            for im in imgs
        ]

    turns = []
    for action, obs in traj.history.turns:
        entry: dict[str, Any] = {
            "action": {
                "kind": action.kind,
                "think": action.think,
                "tool_name": action.tool_name,
                "tool_arguments": action.tool_arguments,
                "answer_text": action.answer_text,
                "boxed_answer": action.boxed_answer,
                "raw": action.raw,
            }
        }
        if obs is not None:
            entry["observation"] = {
                "text": obs.text,
                "tool_name": obs.tool_name,
                "turn_index": obs.turn_index,
                "fetched_at": obs.fetched_at.isoformat(),
                "images": images(obs.images),
            }
        turns.append(entry)
    return {
        "query": {"question": traj.query.question, "images": images(traj.query.images)},
        "turns": turns,
        "answer": traj.answer,
        "metadata": traj.metadata,
    }


def trajectory_from_record(record: dict[str, Any], base_dir: str | Path) -> Trajectory:
    base_dir = Path(base_dir)

    def images(items):
        return tuple(_load_image(i["path"], i["media_type"], base_dir) for i in items)

    q = record["query"]
    history = InteractionHistory(Query(q["question"], images(q["images"])))
    turns = []
    for entry in record["turns"]:
        action = Action(**entry["action"])
        obs = None
        if "observation" in entry:
            o = entry["observation"]
            obs = Observation(
                text=o["text"],
                tool_name=o["tool_name"],
                images=images(o["images"]),
                turn_index=o["turn_index"],
                fetched_at=datetime.fromisoformat(o["fetched_at"]),
            )
        turns.append(Turn(action, obs))
    history = replace(history, turns=tuple(turns))
    return Trajectory(history, record.get("answer"), dict(record.get("metadata") or {}))


def write_trajectories(path: str | Path, trajectories, image_subdir: str = "images") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for traj in trajectories:
            record = trajectory_to_record(traj, path.parent, image_subdir)
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def read_trajectories(path: str | Path) -> list[Trajectory]:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return [trajectory_from_record(json.loads(line), path.parent) for line in fh if line.strip()]
