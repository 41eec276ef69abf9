"""Answer-equivalence judging with an LLM or a normalized exact-match rule."""

from __future__ import annotations

import re
import string
import unicodedata

from foldsearch.errors import JudgeUnparseable
from foldsearch.protocol.prompts import render_judge_prompt
from foldsearch.runtime.client import ModelClient, ModelRequest

REPROMPT_SUFFIX = "\n\nYour previous reply could not be read. Respond only with yes or no."

_PUNCT = str.maketrans({c: " " for c in string.punctuation})


def normalize_answer(text: str) -> str:
    """NFKC, casefold, punctuation to spaces, drop English articles, squeeze."""
    text = unicodedata.normalize("NFKC", text).casefold().translate(_PUNCT)
    return " ".join(w for w in text.split() if w not in ("a", "an", "the"))


def parse_verdict(reply: str) -> int:
    """Map a judge reply to 1/0; only a bare yes or no is accepted.

    Surrounding whitespace, quotes and a trailing period are tolerated.
    """
    v = reply.strip().strip("\"'`").strip().rstrip(".").strip().casefold()
    if v == "yes":
        return 1
    if v == "no":
        return 0
    raise JudgeUnparseable(f"judge reply is not yes/no: {reply[:80]!r}")


class RuleJudge:
    """Fallback judge: normalized exact match, no model call."""

    def verdict(self, question: str, prediction: str, ground_truth: str) -> int:
        return int(normalize_answer(prediction) == normalize_answer(ground_truth))


class LLMJudge:
    """Fills the answer-equivalence prompt and asks a chat model for yes/no.

    An unreadable reply triggers one reprompt; a second failure raises
    :class:`JudgeUnparseable`.
    """

    def __init__(self, client: ModelClient):
        self.client = client

    def verdict(self, question: str, prediction: str, ground_truth: str) -> int:
        prompt = render_judge_prompt(question, ground_truth, prediction)
        reply = self.client.complete(ModelRequest.from_text(prompt))
        try:
            return parse_verdict(reply)
        except JudgeUnparseable:
            pass
        reply = self.client.complete(ModelRequest.from_text(prompt + REPROMPT_SUFFIX))
        return parse_verdict(reply)


def as_judge(judge) -> RuleJudge | LLMJudge:
    if judge is None:
        return RuleJudge()
    if hasattr(judge, "verdict"):
        return judge
    return LLMJudge(judge)


def judge_accuracy(question: str, prediction: str | None, ground_truth: str, judge_client=None) -> int:
    """1 if ``prediction`` matches ``ground_truth`` according to the judge.

    ``judge_client`` may be a chat model client (LLM judge), an object with a
    ``verdict`` method, or None for the exact-match rule. A missing
    prediction scores 0 without consulting the judge.
    """
    if prediction is None or not prediction.strip():
        return 0
    return as_judge(judge_client).verdict(question, prediction, ground_truth)


def contains_normalized(haystack: str, needle: str) -> bool:
    n = normalize_answer(needle)
    if not n:
        return False
    return re.search(rf"(?<!\w){re.escape(n)}(?!\w)", normalize_answer(haystack)) is not None
