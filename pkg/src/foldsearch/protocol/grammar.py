"""Encode and decode the ``<think>`` / ``<tool_call>`` / ``<answer>`` turn grammar.

A model turn looks like::

    <think>
    reasoning
    </think>
    <tool_call>
    {"name": "web_search", "arguments": {"queries": ["..."]}}
    </tool_call>

or ends with an ``<answer>`` block holding a ``\\boxed{...}`` value instead of
the tool call. Tags never nest, so matching is first-match on literal tags.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Union

from foldsearch.errors import (
    AmbiguousPayload,
    MalformedToolCallBody,
    MissingThink,
    MultipleToolCalls,
    NoPayload,
    UnbalancedBoxed,
)

THINK_OPEN, THINK_CLOSE = "<think>", "</think>"
CALL_OPEN, CALL_CLOSE = "<tool_call>", "</tool_call>"
ANSWER_OPEN, ANSWER_CLOSE = "<answer>", "</answer>"
RESPONSE_OPEN, RESPONSE_CLOSE = "<tool_response>", "</tool_response>"
IMAGE_PLACEHOLDER = "<image>"

RESERVED_TAGS = (
    THINK_OPEN,
    THINK_CLOSE,
    CALL_OPEN,
    CALL_CLOSE,
    ANSWER_OPEN,
    ANSWER_CLOSE,
    RESPONSE_OPEN,
    RESPONSE_CLOSE,
)

BOXED = "\\boxed{"


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict[str, Any]

    def to_json(self) -> str:
        return json.dumps({"name": self.name, "arguments": self.arguments}, ensure_ascii=False)


@dataclass(frozen=True)
class Answer:
    text: str
    boxed: str | None = None

    @classmethod
    def from_text(cls, text: str) -> "Answer":
        return cls(text=text, boxed=extract_boxed(text))


Payload = Union[ToolCall, Answer]


@dataclass(frozen=True)
class ParsedTurn:
    think: str
    payload: Payload
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def is_answer(self) -> bool:
        return isinstance(self.payload, Answer)


def extract_boxed(text: str) -> str | None:
    """Return the content of the last ``\\boxed{...}`` in ``text``.

    Braces inside the box are matched, so ``\\boxed{\\frac{1}{2}}`` yields
    ``\\frac{1}{2}``. Raises UnbalancedBoxed if the last box never closes.
    """
    start = text.rfind(BOXED)
    if start < 0:
        return None
    i = start + len(BOXED)
    depth = 1
    while i < len(text):
        ch = text[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start + len(BOXED) : i]
        i += 1
    raise UnbalancedBoxed(f"unclosed \\boxed{{ at offset {start}")


def _block(text: str, open_tag: str, close_tag: str, start: int = 0) -> tuple[str, int, int] | None:
    """Find the first ``open_tag ... close_tag`` at or after ``start``.

    Returns (content, block_start, block_end) or None when the open tag is
    absent. ``block_end`` is -1 if the block is never closed.
    """
    i = text.find(open_tag, start)
    if i < 0:
        return None
    j = text.find(close_tag, i + len(open_tag))
    if j < 0:
        return text[i + len(open_tag) :], i, -1
    return text[i + len(open_tag) : j], i, j + len(close_tag)


def parse_model_turn(raw: str, lenient: bool = False) -> ParsedTurn:
    """Decode one model message into a think block plus a single payload."""
    warnings: list[str] = []

    think_block = _block(raw, THINK_OPEN, THINK_CLOSE)
    if think_block is None or think_block[2] < 0:
        if not lenient:
            raise MissingThink("turn does not start with a closed <think> block")
        close = raw.find(THINK_CLOSE)
        if close >= 0:
            # chat templates often pre-fill the opening tag
            think = raw[:close].replace(THINK_OPEN, "").strip()
            rest_from = close + len(THINK_CLOSE)
        else:
            think = ""
            rest_from = 0
        warnings.append("missing <think> block")
    else:
        content, begin, end = think_block
        if raw[:begin].strip():
            warnings.append("text before <think> ignored")
        think = content.strip()
        rest_from = end
        if not think:
            if not lenient:
                raise MissingThink("<think> block is empty")
            warnings.append("empty <think> block")

    rest = raw[rest_from:]
    n_calls = rest.count(CALL_OPEN)
    has_answer = ANSWER_OPEN in rest
    if n_calls > 1:
        raise MultipleToolCalls(f"{n_calls} <tool_call> blocks in one turn")
    if n_calls and has_answer:
        raise AmbiguousPayload("turn holds both <tool_call> and <answer>")
    if not n_calls and not has_answer:
        raise NoPayload("turn has neither <tool_call> nor <answer>")

    if n_calls:
        body, begin, end = _block(rest, CALL_OPEN, CALL_CLOSE)
        if end < 0:
            raise MalformedToolCallBody("unclosed <tool_call>")
        payload: Payload = _parse_call_body(body)
    else:
        body, begin, end = _block(rest, ANSWER_OPEN, ANSWER_CLOSE)
        if end < 0:
            if not lenient:
                raise NoPayload("unclosed <answer>")
            warnings.append("unclosed <answer>")
            end = len(rest)
        text = body.strip()
        payload = Answer(text=text, boxed=extract_boxed(text))

    if rest[:begin].strip():
        warnings.append("text between </think> and payload ignored")
    if rest[end:].strip():
        warnings.append("trailing text after payload ignored")
    return ParsedTurn(think=think, payload=payload, warnings=tuple(warnings))


def _parse_call_body(body: str) -> ToolCall:
    try:
        obj = json.loads(body)
    except json.JSONDecodeError as exc:
        raise MalformedToolCallBody(f"tool call body is not JSON: {exc}") from None
    if not isinstance(obj, dict) or "name" not in obj or "arguments" not in obj:
        raise MalformedToolCallBody('tool call body needs "name" and "arguments" keys')
    if not isinstance(obj["name"], str) or not isinstance(obj["arguments"], dict):
        raise MalformedToolCallBody('"name" must be a string and "arguments" an object')
    return ToolCall(name=obj["name"], arguments=obj["arguments"])


def serialize_payload(payload: Payload) -> str:
    if isinstance(payload, ToolCall):
        return f"{CALL_OPEN}\n{payload.to_json()}\n{CALL_CLOSE}"
    return f"{ANSWER_OPEN}\n{payload.text}\n{ANSWER_CLOSE}"


def serialize_think(think: str) -> str:
    return f"{THINK_OPEN}\n{think}\n{THINK_CLOSE}"


def serialize_turn(turn: ParsedTurn) -> str:
    return serialize_think(turn.think) + "\n" + serialize_payload(turn.payload)


def wrap_tool_response(text: str, n_images: int = 0) -> str:
    """Wrap an observation body in ``<tool_response>`` tags.

    Image attachments are referenced by ``<image>`` placeholders. Placeholders
    already present in ``text`` keep their position; attachments beyond them
    are appended at the end of the body.
    """
    missing = n_images - text.count(IMAGE_PLACEHOLDER)
    if missing > 0:
        text = text + "".join("\n" + IMAGE_PLACEHOLDER for _ in range(missing))
    return f"{RESPONSE_OPEN}\n{text}\n{RESPONSE_CLOSE}"
