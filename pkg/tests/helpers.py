"""Builders and hypothesis strategies shared by the test modules."""

from __future__ import annotations

import io
import json

from hypothesis import strategies as st
from PIL import Image

from foldsearch.history import (
    Action,
    ImagePayload,
    InteractionHistory,
    Observation,
    Query,
    Trajectory,
    append_turn,
    finalize,
)
from foldsearch.protocol.grammar import BOXED, RESERVED_TAGS, Answer, ParsedTurn, ToolCall


def png(color=(200, 30, 30), size=(32, 24)) -> ImagePayload:
    buf = io.BytesIO()
    Image.new("RGB", size, color).save(buf, format="PNG")
    return ImagePayload(buf.getvalue())


def tool_turn(name: str, arguments: dict, think: str = "I need more information.") -> str:
    body = json.dumps({"name": name, "arguments": arguments}, ensure_ascii=False)
    return f"<think>\n{think}\n</think>\n<tool_call>\n{body}\n</tool_call>"


def search_turn(*queries: str) -> str:
    return tool_turn("web_search", {"queries": list(queries) or ["query"]})


def image_turn(index: int = 0, goal: str = "identify the object") -> str:
    return tool_turn("image_search", {"image_index": index, "goal": goal})


def answer_turn(value: str = "42", think: str = "I know the answer now.") -> str:
    return f"<think>\n{think}\n</think>\n<answer>\nThe answer is \\boxed{{{value}}}\n</answer>"


def history_with(observation_texts, question: str = "What is shown?", images=()) -> InteractionHistory:
    h = InteractionHistory(Query(question, tuple(images)))
    for i, text in enumerate(observation_texts):
        action = Action.tool_call(f"step {i}", "web_search", {"queries": [f"q{i}"]})
        h = append_turn(h, action, Observation(text, "web_search"))
    return h


def trajectory_with(observation_texts, answer: str = "42", **kw) -> Trajectory:
    h = history_with(observation_texts, **kw)
    return finalize(h, Action.final_answer("done", f"\\boxed{{{answer}}}", answer))


# strategies

_ALPHABET = st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00")


def _clean(s: str) -> bool:
    return bool(s) and not any(t in s for t in RESERVED_TAGS) and BOXED not in s


clean_text = st.text(_ALPHABET, min_size=1, max_size=60).map(str.strip).filter(_clean)

_braced = st.recursive(
    st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="{}\x00<\\"), max_size=8),
    lambda inner: st.tuples(inner, inner, inner).map(lambda t: f"{t[0]}{{{t[1]}}}{t[2]}"),
    max_leaves=4,
)


@st.composite
def answers(draw) -> Answer:
    boxed = draw(_braced)
    prefix = draw(st.one_of(st.just(""), clean_text))
    suffix = draw(st.one_of(st.just(""), clean_text.filter(lambda s: "{" not in s and "}" not in s)))
    text = f"{prefix} {BOXED}{boxed}}} {suffix}".strip()
    if any(t in text for t in RESERVED_TAGS):
        text = f"{BOXED}{boxed}}}"
    return Answer(text, boxed)


json_scalars = st.one_of(st.integers(-10**6, 10**6), clean_text)

tool_calls = st.one_of(
    st.builds(lambda qs: ToolCall("web_search", {"queries": qs}), st.lists(clean_text, min_size=1, max_size=4)),
    st.builds(
        lambda us, g: ToolCall("visit", {"url": us, "goal": g}), st.lists(clean_text, min_size=1, max_size=3), clean_text
    ),
    st.builds(lambda i, g: ToolCall("image_search", {"image_index": i, "goal": g}), st.integers(0, 9), clean_text),
)

parsed_turns = st.builds(ParsedTurn, clean_text, st.one_of(tool_calls, answers()))


@st.composite
def trajectories(draw, max_turns: int = 6) -> Trajectory:
    n_images = draw(st.integers(0, 2))
    q = Query(draw(clean_text), tuple(png((i * 40, 0, 0)) for i in range(n_images)))
    h = InteractionHistory(q)
    for _ in range(draw(st.integers(0, max_turns))):
        call = draw(tool_calls)
        obs = Observation(draw(clean_text), call.name, tuple(png((0, 0, 9)) for _ in range(draw(st.integers(0, 1)))))
        h = append_turn(h, Action.tool_call(draw(clean_text), call.name, call.arguments), obs)
    ans = draw(answers())
    return finalize(h, Action.final_answer(draw(clean_text), ans.text, ans.boxed))


# benchmark fixtures


def write_mock_dataset(directory, n: int = 50, with_images: bool = True):
    """A dataset file plus the answers a mock policy should give.

    Every third item gets a wrong answer so accuracy is not trivially 1.
    """
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    answers = {}
    lines = []
    for i in range(n):
        question = f"Question number {i}: which landmark is shown?"
        truth = f"Landmark {i}"
        images = []
        if with_images and i % 2 == 0:
            name = f"img_{i}.png"
            (directory / name).write_bytes(png((i * 5 % 256, 80, 120)).data)
            images.append(name)
        answers[question] = truth if i % 3 else f"Wrong {i}"
        lines.append(json.dumps({"id": f"item-{i:03d}", "question": question, "ground_truth": truth, "images": images}))
    path = directory / "dataset.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path, answers
