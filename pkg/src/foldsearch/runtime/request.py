"""Turning an interaction history into the message list sent to the model."""

from __future__ import annotations

from typing import Sequence

from foldsearch.history import ImagePayload, InteractionHistory, Observation
from foldsearch.protocol.grammar import IMAGE_PLACEHOLDER, wrap_tool_response
from foldsearch.runtime.client import Message, ModelRequest, Part
from foldsearch.vfold.fold import CompressedHistory, FoldedTurn, fold_history
from foldsearch.vfold.render import RenderedObservation


def interleave(text: str, images: Sequence[ImagePayload]) -> tuple[Part, ...]:
    """Replace the first ``len(images)`` ``<image>`` placeholders in ``text``
    with the images themselves. Surplus placeholders stay as literal text."""
    parts: list[Part] = []
    rest = text
    for im in images:
        head, sep, tail = rest.partition(IMAGE_PLACEHOLDER)
        if not sep:
            raise ValueError("fewer <image> placeholders than images")
        if head:
            parts.append(head)
        parts.append(im)
        rest = tail
    if rest:
        parts.append(rest)
    return tuple(parts)


def slot_images(slot: Observation | RenderedObservation) -> tuple[ImagePayload, ...]:
    if isinstance(slot, RenderedObservation):
        return slot.images + slot.attachments
    return slot.images


def slot_text(slot: Observation | RenderedObservation) -> str:
    """Tool-response text with one ``<image>`` placeholder per image."""
    if isinstance(slot, RenderedObservation):
        return wrap_tool_response("\n".join([IMAGE_PLACEHOLDER] * len(slot_images(slot))))
    return wrap_tool_response(slot.text, len(slot.images))


def tool_response_message(slot: Observation | RenderedObservation) -> Message:
    return Message("user", interleave(slot_text(slot), slot_images(slot)))


def messages_from_compressed(view: CompressedHistory, system_prompt: str) -> tuple[Message, ...]:
    q = view.query
    msgs = [
        Message("system", (system_prompt,)),
        Message("user", tuple(q.images) + (q.question,)),
    ]
    turn: FoldedTurn
    for turn in view.turns:
        msgs.append(Message("assistant", (turn.action.serialized(),)))
        if turn.observation is not None:
            msgs.append(tool_response_message(turn.observation))
    return tuple(msgs)


def build_model_request(history: InteractionHistory, config, folder=None) -> ModelRequest:
    """Assemble the next request for ``history`` under an EpisodeConfig.

    With folding enabled the history passes through the fold first (via
    ``folder.fold`` when a fitted :class:`HistoryFolder` is given, which
    memoizes renders across turns).
    """
    if history.completed:
        raise ValueError("history already ends with a final answer")
    if config.fold_enabled:
        if folder is not None:
            view = folder.fold(history)
        else:
            view = fold_history(history, config.fold_policy, config.render_config)
    else:
        view = CompressedHistory(history.query, tuple(FoldedTurn(a, o) for a, o in history.turns))
    return ModelRequest(messages_from_compressed(view, config.resolved_system_prompt()))
