import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foldsearch.errors import (
    AmbiguousPayload,
    ImageIndexOutOfRange,
    ImageSearchRepeated,
    MalformedToolCallBody,
    MissingArgument,
    MissingThink,
    MultipleToolCalls,
    NoPayload,
    UnbalancedBoxed,
    UnknownArgument,
    UnknownTool,
    WrongArgumentType,
)
from foldsearch.protocol.grammar import (
    Answer,
    ParsedTurn,
    ToolCall,
    extract_boxed,
    parse_model_turn,
    serialize_turn,
    wrap_tool_response,
)
from foldsearch.protocol.prompts import (
    TOOLS_SLOT,
    render_judge_prompt,
    render_qa2vqa_prompt,
    render_system_prompt,
)
from foldsearch.protocol.schemas import (
    BUILTIN_TOOLS,
    EpisodeToolState,
    ToolSchema,
    load_builtin_schemas,
    make_registry,
    validate_tool_call,
)

from helpers import parsed_turns, tool_calls

REGISTRY = load_builtin_schemas()

# parsing


def test_parse_tool_call():
    raw = '<think>t</think><tool_call>{"name":"web_search","arguments":{"queries":["x"]}}</tool_call>'
    turn = parse_model_turn(raw)
    assert turn.think == "t"
    assert turn.payload == ToolCall("web_search", {"queries": ["x"]})
    assert not turn.is_answer


def test_parse_answer_with_boxed():
    turn = parse_model_turn("<think>t</think><answer>A. \\boxed{LeBron James}</answer>")
    assert turn.payload == Answer("A. \\boxed{LeBron James}", "LeBron James")
    assert turn.is_answer


def test_two_tool_calls_rejected():
    call = '<tool_call>{"name":"web_search","arguments":{"queries":["x"]}}</tool_call>'
    with pytest.raises(MultipleToolCalls):
        parse_model_turn(f"<think>t</think>{call}{call}")


@pytest.mark.parametrize(
    "raw, error",
    [
        ("<tool_call>{}</tool_call>", MissingThink),
        ("<think>  </think><answer>\\boxed{1}</answer>", MissingThink),
        ("<think>t</think>just prose", NoPayload),
        ("<think>t</think><answer>x", NoPayload),
        ("<think>t</think><tool_call>not json</tool_call>", MalformedToolCallBody),
        ('<think>t</think><tool_call>{"name":"visit"}</tool_call>', MalformedToolCallBody),
        ('<think>t</think><tool_call>{"name":"visit","arguments":{}}', MalformedToolCallBody),
        ("<think>t</think><answer>\\boxed{a{b}</answer>", UnbalancedBoxed),
    ],
)
def test_parse_errors(raw, error):
    with pytest.raises(error):
        parse_model_turn(raw)


def test_both_payloads_is_an_ambiguity_error():
    raw = '<think>t</think><tool_call>{"name":"v","arguments":{}}</tool_call><answer>\\boxed{1}</answer>'
    with pytest.raises(AmbiguousPayload):
        parse_model_turn(raw)
    assert issubclass(AmbiguousPayload, NoPayload)
    with pytest.raises(AmbiguousPayload):
        parse_model_turn(raw, lenient=True)


def test_lenient_mode_tolerates_missing_think():
    turn = parse_model_turn("<answer>\\boxed{7}</answer>", lenient=True)
    assert turn.think == ""
    assert turn.payload.boxed == "7"
    assert turn.warnings


def test_lenient_mode_handles_prefilled_think_tag():
    turn = parse_model_turn("reasoning here</think>\n<answer>\\boxed{7}</answer>", lenient=True)
    assert turn.think == "reasoning here"


def test_trailing_text_is_a_warning_not_an_error():
    turn = parse_model_turn("<think>t</think><answer>\\boxed{1}</answer>\n  trailing")
    assert any("trailing" in w for w in turn.warnings)
    assert parse_model_turn("<think>t</think><answer>\\boxed{1}</answer>\n\n").warnings == ()


def test_boxed_uses_last_box_and_balances_braces():
    assert extract_boxed("\\boxed{1} then \\boxed{\\frac{1}{2}}") == "\\frac{1}{2}"
    assert extract_boxed("no box") is None
    assert extract_boxed("\\boxed{}") == ""


def test_answer_without_box():
    turn = parse_model_turn("<think>t</think><answer>Paris</answer>")
    assert turn.payload.boxed is None


# round trip


def test_round_trip_examples():
    for payload in (ToolCall("visit", {"url": ["http://a"], "goal": "g"}), Answer("A. \\boxed{x}", "x")):
        turn = ParsedTurn("some reasoning", payload)
        assert parse_model_turn(serialize_turn(turn)) == turn


@settings(max_examples=1000, deadline=None)
@given(parsed_turns)
def test_round_trip_property(turn):
    assert parse_model_turn(serialize_turn(turn)) == turn


_fragments = st.sampled_from(
    ["<think>", "</think>", "<tool_call>", "</tool_call>", "<answer>", "</answer>", "\\boxed{", "}", "{",
     '{"name":"web_search","arguments":{"queries":["x"]}}', "text", " ", "\n"]
)


@settings(max_examples=500, deadline=None)
@given(st.lists(_fragments, max_size=12).map("".join))
def test_strict_acceptance_implies_lenient_acceptance(raw):
    try:
        strict = parse_model_turn(raw)
    except Exception:
        return
    lenient = parse_model_turn(raw, lenient=True)
    assert lenient == strict


# tool responses


def test_wrap_tool_response_keeps_placeholder_positions():
    assert wrap_tool_response("a") == "<tool_response>\na\n</tool_response>"
    assert wrap_tool_response("x <image> y", 1) == "<tool_response>\nx <image> y\n</tool_response>"
    assert wrap_tool_response("x", 2) == "<tool_response>\nx\n<image>\n<image>\n</tool_response>"


# schemas


def test_builtin_schemas_match_published_definitions():
    assert tuple(REGISTRY) == BUILTIN_TOOLS
    assert REGISTRY["web_search"].required_arguments == (("queries", "string-array"),)
    assert REGISTRY["visit"].required_arguments == (("url", "string-array"), ("goal", "string"))
    assert REGISTRY["image_search"].required_arguments == (("image_index", "integer"), ("goal", "string"))
    assert REGISTRY["image_search"].to_json() == {
        "type": "function",
        "function": {
            "name": "image_search",
            "description": (
                "Utilize the search engine to retrieve relevant information based on the input image "
                "and return results related to the goal."
            ),
            "parameters": {
                "type": "object",
                "properties": {
                    "image_index": {
                        "type": "integer",
                        "description": "The index of the image you want to search for more information.",
                    },
                    "goal": {"type": "string", "description": "The specific information goal."},
                },
                "required": ["image_index", "goal"],
            },
        },
    }


def test_registry_rejects_duplicates():
    s = REGISTRY["visit"]
    with pytest.raises(ValueError):
        make_registry([s, s])


def test_schema_built_without_source_serializes():
    s = ToolSchema("lookup", "Look something up.", (("key", "string"), ("ids", "string-array")))
    again = ToolSchema.from_json(s.to_json())
    assert again.required_arguments == s.required_arguments
    assert again.name == "lookup"


# validation


def _state(images=1, used=False):
    return EpisodeToolState(image_count=images, image_search_used=used)


def test_valid_calls():
    validate_tool_call(ToolCall("image_search", {"image_index": 0, "goal": "identify"}), REGISTRY, _state())
    validate_tool_call(ToolCall("visit", {"url": ["http://a"], "goal": "g"}), REGISTRY, _state())


def test_missing_goal():
    with pytest.raises(MissingArgument) as info:
        validate_tool_call(ToolCall("visit", {"url": ["http://a"]}), REGISTRY, _state())
    assert info.value.argument == "goal"


def test_second_image_search_rejected():
    call = ToolCall("image_search", {"image_index": 0, "goal": "identify"})
    with pytest.raises(ImageSearchRepeated):
        validate_tool_call(call, REGISTRY, _state(used=True))
    validate_tool_call(call, REGISTRY, _state(used=True), image_search_once=False)


@pytest.mark.parametrize(
    "call, error",
    [
        (ToolCall("calculator", {}), UnknownTool),
        (ToolCall("web_search", {"queries": "x"}), WrongArgumentType),
        (ToolCall("web_search", {"queries": ["x", 1]}), WrongArgumentType),
        (ToolCall("image_search", {"image_index": True, "goal": "g"}), WrongArgumentType),
        (ToolCall("image_search", {"image_index": "0", "goal": "g"}), WrongArgumentType),
        (ToolCall("web_search", {"queries": ["x"], "k": 3}), UnknownArgument),
        (ToolCall("image_search", {"image_index": 1, "goal": "g"}), ImageIndexOutOfRange),
        (ToolCall("image_search", {"image_index": -1, "goal": "g"}), ImageIndexOutOfRange),
    ],
)
def test_invalid_calls(call, error):
    with pytest.raises(error):
        validate_tool_call(call, REGISTRY, _state())


def test_unknown_arguments_can_be_allowed():
    validate_tool_call(ToolCall("web_search", {"queries": ["x"], "k": 3}), REGISTRY, _state(),
                       reject_unknown_arguments=False)


def test_image_search_with_no_images():
    with pytest.raises(ImageIndexOutOfRange):
        validate_tool_call(ToolCall("image_search", {"image_index": 0, "goal": "g"}), REGISTRY, _state(images=0))


@settings(max_examples=200, deadline=None)
@given(tool_calls, st.integers(0, 3), st.booleans())
def test_validation_is_pure(call, images, used):
    state = _state(images, used)

    def verdict():
        try:
            validate_tool_call(call, REGISTRY, state)
            return None
        except Exception as exc:
            return type(exc)

    assert verdict() == verdict()
    assert state == _state(images, used)


# prompts


def test_system_prompt_injects_one_schema_per_line():
    prompt = render_system_prompt()
    assert TOOLS_SLOT not in prompt
    start = prompt.index("<tools>\n") + len("<tools>\n")
    end = prompt.index("\n</tools>")
    lines = prompt[start:end].split("\n")
    assert [json.loads(line)["function"]["name"] for line in lines] == list(BUILTIN_TOOLS)
    assert "{{" not in prompt
    assert "\\boxed{" in prompt


def test_system_prompt_requires_slot():
    with pytest.raises(ValueError):
        render_system_prompt(template="no slot here")


def test_qa2vqa_prompt_fills_inputs():
    prompt = render_qa2vqa_prompt("Who designed the Opera House?", "Jorn Utzon")
    assert prompt.rstrip().endswith("Answer: Jorn Utzon")
    assert "Question: Who designed the Opera House?" in prompt
    assert "[Question]" not in prompt
    # the JSON output template keeps single braces
    assert '"status"' in prompt and "{{" not in prompt


def test_judge_prompt_is_byte_stable():
    a = render_judge_prompt("q", "gt", "pred")
    assert a == render_judge_prompt("q", "gt", "pred")
    assert "{gt_answer}" not in a and "{output_answer}" not in a
