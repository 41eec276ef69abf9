"""Prompt templates shipped as data files.

The system prompt and the QA-to-VQA prompt are stored in their format-string
form, with literal braces doubled. ``render_*`` helpers substitute the slots
and collapse ``{{``/``}}`` to single braces.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from typing import Iterable

from foldsearch.protocol.schemas import ToolSchema, load_builtin_schemas

TOOLS_SLOT = (
    "[Detailed Tool Schemas (web_search, visit, image_search) will be dynamically "
    "injected here. Refer to the specific functional definitions for parameter constraints.]"
)


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    """Return a template file's text without its final newline."""
    text = (resources.files("foldsearch.data") / name).read_text(encoding="utf-8")
    return text[:-1] if text.endswith("\n") else text


def _unescape_braces(text: str) -> str:
    return text.replace("{{", "{").replace("}}", "}")


def render_system_prompt(schemas: Iterable[ToolSchema] | None = None, template: str | None = None) -> str:
    if schemas is None:
        schemas = load_builtin_schemas().values()
    template = template if template is not None else load_template("system_prompt.txt")
    if TOOLS_SLOT not in template:
        raise ValueError("system prompt template lacks the tool-schema slot")
    tools = "\n".join(json.dumps(s.to_json(), ensure_ascii=False) for s in schemas)
    head, tail = template.split(TOOLS_SLOT, 1)
    return _unescape_braces(head) + tools + _unescape_braces(tail)


def render_qa2vqa_prompt(question: str, answer: str) -> str:
    template = load_template("qa2vqa_prompt.txt")
    head, _, inputs = template.rpartition("### INPUT:")
    inputs = inputs.replace("[Question]", question, 1).replace("[Answer]", answer, 1)
    return _unescape_braces(head) + "### INPUT:" + inputs


def render_judge_prompt(question: str, ground_truth: str, prediction: str) -> str:
    """Fill the answer-equivalence prompt. Byte-stable for equal inputs."""
    return load_template("judge_prompt.txt").format(
        question=question, gt_answer=ground_truth, output_answer=prediction
    )
