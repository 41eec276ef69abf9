"""Turning text QA pairs into image-grounded questions with a teacher model."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from typing import Any, Literal

from foldsearch.errors import BackendUnavailable, FetchError, FixtureMissing, TeacherUnparseable
from foldsearch.history import ImagePayload
from foldsearch.protocol.prompts import render_qa2vqa_prompt
from foldsearch.runtime.client import ModelClient, ModelRequest
from foldsearch.scoring.judge import normalize_answer
from foldsearch.tools.base import PageFetcher, SearchBackend

log = logging.getLogger(__name__)

VqaStatus = Literal["success", "discard"]

REQUIRED_KEYS = ("status", "selected_target_entity", "transformed_vqa_query", "search_query")

# "this location", "these buildings", "the habitat shown here", "the person pictured"
_IMPLICIT_REFERENCE = re.compile(
    r"\b(this|these)\s+\w+|\b(shown|pictured|depicted|seen)\b|\bin the (image|picture|photo(graph)?)\b",
    re.I,
)

#: image-search hits below this count flag an item for manual review
MIN_IMAGE_RESULTS = 3


def has_implicit_reference(question: str) -> bool:
    return _IMPLICIT_REFERENCE.search(question) is not None


@dataclass(frozen=True)
class VqaInstance:
    original_question: str
    original_answer: str
    target_entity: str
    transformed_question: str
    search_query: str
    status: VqaStatus
    image: ImagePayload | None = None
    image_url: str | None = None
    needs_review: bool = False
    reason: str | None = None

    def __post_init__(self):
        if self.status == "success":
            if normalize_answer(self.target_entity) == normalize_answer(self.original_answer):
                raise ValueError("target entity must differ from the answer")
            if not has_implicit_reference(self.transformed_question):
                raise ValueError("transformed question must reference the entity implicitly")

    def to_record(self) -> dict[str, Any]:
        return {
            "original_question": self.original_question,
            "original_answer": self.original_answer,
            "target_entity": self.target_entity,
            "transformed_question": self.transformed_question,
            "search_query": self.search_query,
            "status": self.status,
            "image_url": self.image_url,
            "needs_review": self.needs_review,
            "reason": self.reason,
        }


def parse_teacher_json(reply: str) -> dict[str, Any]:
    """Pull the JSON object out of a teacher reply (code fences tolerated)."""
    start, end = reply.find("{"), reply.rfind("}")
    if start < 0 or end <= start:
        raise TeacherUnparseable("no JSON object in teacher reply")
    try:
        data = json.loads(reply[start : end + 1])
    except json.JSONDecodeError as exc:
        raise TeacherUnparseable(f"invalid JSON from teacher: {exc}") from None
    if not isinstance(data, dict):
        raise TeacherUnparseable("teacher JSON is not an object")
    missing = [k for k in REQUIRED_KEYS if not isinstance(data.get(k), str)]
    if missing:
        raise TeacherUnparseable(f"teacher JSON lacks {missing}")
    if data["status"] not in ("success", "discard"):
        raise TeacherUnparseable(f"unknown status {data['status']!r}")
    return data


def _ask(teacher: ModelClient, prompt: str) -> dict[str, Any]:
    reply = teacher.complete(ModelRequest.from_text(prompt))
    try:
        return parse_teacher_json(reply)
    except TeacherUnparseable as exc:
        log.info("teacher reply unparseable, retrying once: %s", exc)
    return parse_teacher_json(teacher.complete(ModelRequest.from_text(prompt)))


def _pair_image(
    search_query: str, search: SearchBackend, fetcher: PageFetcher, n: int
) -> tuple[ImagePayload | None, str | None, int]:
    try:
        hits = [h for h in search.image_lookup(search_query, n) if h.image_url]
    except (BackendUnavailable, FixtureMissing) as exc:
        log.info("image lookup for %r failed: %s", search_query, exc)
        return None, None, 0
    for hit in hits:
        try:
            return ImagePayload(fetcher.fetch(hit.image_url), source=hit.image_url), hit.image_url, len(hits)
        except (FetchError, BackendUnavailable):
            continue
    return None, None, len(hits)


def qa_to_vqa(
    question: str,
    answer: str,
    teacher_client: ModelClient,
    search: SearchBackend | None = None,
    fetcher: PageFetcher | None = None,
    max_image_results: int = 5,
) -> VqaInstance:
    """Ask the teacher to mask a visual anchor entity in ``question``.

    The teacher's choice is re-checked locally: a target entity equal to the
    answer, or a rewrite with no implicit visual reference, turns the item
    into a discard even if the teacher reported success. Successful items
    are paired with the first image found for ``search_query``; few or no
    image hits set ``needs_review``.

    Raises TeacherUnparseable if the reply cannot be read twice in a row.
    """
    if not question.strip() or not answer.strip():
        raise ValueError("question and answer must be non-empty")
    data = _ask(teacher_client, render_qa2vqa_prompt(question, answer))

    fields = dict(
        original_question=question,
        original_answer=answer,
        target_entity=data["selected_target_entity"],
        transformed_question=data["transformed_vqa_query"],
        search_query=data["search_query"],
    )
    reason = None
    if data["status"] == "discard":
        reason = "teacher discarded the item"
    elif normalize_answer(data["selected_target_entity"]) == normalize_answer(answer):
        reason = "target entity equals the answer"
    elif not has_implicit_reference(data["transformed_vqa_query"]):
        reason = "transformed question lacks an implicit visual reference"
    if reason is not None:
        return VqaInstance(**fields, status="discard", reason=reason)

    image, url, n_hits = (None, None, 0)
    if search is not None and fetcher is not None:
        image, url, n_hits = _pair_image(data["search_query"], search, fetcher, max_image_results)
    return VqaInstance(
        **fields,
        status="success",
        image=image,
        image_url=url,
        needs_review=n_hits < MIN_IMAGE_RESULTS or image is None,
    )
