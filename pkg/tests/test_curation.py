import copy
import json
import logging

import pytest
from hypothesis import given, settings

from foldsearch.errors import RenderError, TeacherUnparseable
from foldsearch.history import (
    Action,
    InteractionHistory,
    Observation,
    Query,
    append_turn,
    finalize,
    read_trajectories,
    trajectory_from_record,
    trajectory_to_record,
)
from foldsearch.jsonl import iter_jsonl
from foldsearch.protocol.grammar import parse_model_turn
from foldsearch.protocol.masks import supervision_segments
from foldsearch.protocol.prompts import render_qa2vqa_prompt
from foldsearch.runtime.client import MockPolicyClient, ScriptedModelClient, cycle_script
from foldsearch.runtime.episode import EpisodeConfig
from foldsearch.scoring.reward import score_format, score_tool
from foldsearch.tools.base import SearchResult, ToolBackendConfig
from foldsearch.tools.gateway import ToolGateway
from foldsearch.tools.mocks import StaticPageFetcher, StaticSearchBackend, SyntheticPageFetcher, SyntheticSearchBackend
from foldsearch.curation import (
    MockVqaTeacher,
    VqaInstance,
    export_sft,
    filter_trajectories,
    has_implicit_reference,
    parse_teacher_json,
    qa_to_vqa,
    stage_export,
    stage_filter,
    stage_trajectories,
    stage_vqa,
    synthesize_trajectory,
    text_variant,
)

from helpers import answer_turn, png, search_turn, trajectories, trajectory_with


def teacher_reply(status="success", entity="Mike Baird", question="What party does this politician lead?",
                  search_query="Mike Baird New South Wales politician", answer="Liberal"):
    return json.dumps({
        "status": status, "selected_target_entity": entity, "transformed_vqa_query": question,
        "original_answer": answer, "search_query": search_query,
    })


def image_hits(query, n):
    return {query: [SearchResult(f"img {i}", "", f"http://p/{i}", image_url=f"http://i/{i}.png") for i in range(n)]}


# qa -> vqa


def test_search_query_is_passed_through_for_image_pairing():
    query = "Mike Baird New South Wales politician"
    search = StaticSearchBackend(images=image_hits(query, 4))
    fetcher = StaticPageFetcher({f"http://i/{i}.png": png((i, 0, 0)).data for i in range(4)})
    teacher = ScriptedModelClient([teacher_reply()])
    vqa = qa_to_vqa("Which party did Mike Baird lead?", "Liberal", teacher, search, fetcher)
    assert vqa.status == "success"
    assert "New South Wales politician" in vqa.search_query
    assert search.calls == [("images", query)]
    assert vqa.image.data == png((0, 0, 0)).data and vqa.image_url == "http://i/0.png"
    assert not vqa.needs_review
    # the teacher saw the filled template
    assert teacher.requests[0].messages[-1].text == render_qa2vqa_prompt("Which party did Mike Baird lead?", "Liberal")


def test_first_fetchable_image_wins_and_few_hits_flag_review():
    query = "Mike Baird New South Wales politician"
    search = StaticSearchBackend(images=image_hits(query, 2))
    fetcher = StaticPageFetcher({"http://i/1.png": png((9, 9, 9)).data})
    vqa = qa_to_vqa("Which party did Mike Baird lead?", "Liberal", ScriptedModelClient([teacher_reply()]), search, fetcher)
    assert vqa.image_url == "http://i/1.png"
    assert vqa.needs_review


def test_target_equal_to_answer_is_rejected_locally():
    reply = teacher_reply(entity="liberal.", answer="Liberal")
    vqa = qa_to_vqa("Which party did Mike Baird lead?", "Liberal", ScriptedModelClient([reply]))
    assert vqa.status == "discard"
    assert "equals the answer" in vqa.reason
    with pytest.raises(ValueError):
        VqaInstance("q", "Liberal", "Liberal", "this man", "s", "success")


def test_missing_implicit_reference_is_rejected():
    reply = teacher_reply(question="Which party did Mike Baird lead?")
    assert qa_to_vqa("q?", "Liberal", ScriptedModelClient([reply])).status == "discard"


def test_teacher_discard_propagates():
    vqa = qa_to_vqa("q?", "a", ScriptedModelClient([teacher_reply(status="discard", entity="")]))
    assert vqa.status == "discard" and vqa.image is None


def test_teacher_unparseable_after_one_retry():
    teacher = ScriptedModelClient(["no json", "```json\n" + teacher_reply() + "\n```"])
    assert qa_to_vqa("Which party did Mike Baird lead?", "Liberal", teacher).status == "success"
    with pytest.raises(TeacherUnparseable):
        qa_to_vqa("q?", "a", ScriptedModelClient(["nope", "{broken"]))
    with pytest.raises(ValueError):
        qa_to_vqa("", "a", ScriptedModelClient([]))


@pytest.mark.parametrize("reply", ['{"status": "maybe"}', "[1, 2]", '{"status": "success"}'])
def test_parse_teacher_json_rejects(reply):
    with pytest.raises(TeacherUnparseable):
        parse_teacher_json(reply)


@pytest.mark.parametrize("question, expected", [
    ("What is the height of this building?", True),
    ("Which river is shown in the image?", True),
    ("Who founded the company pictured?", True),
    ("Who founded Microsoft?", False),
])
def test_implicit_reference(question, expected):
    assert has_implicit_reference(question) is expected


def test_mock_teacher_masks_an_entity():
    vqa = qa_to_vqa("In which year was the Sydney Harbour Bridge opened?", "1932", MockVqaTeacher())
    assert vqa.status == "success"
    assert vqa.target_entity == "Sydney Harbour Bridge"
    assert vqa.transformed_question == "In which year was this entity opened?"


# synthesis and filtering


def _vqa(question="Which river flows past this entity?", answer="Thames"):
    return VqaInstance("orig", answer, "Big Ben", question, "Big Ben London", "success", image=png())


def mock_gateway():
    return ToolGateway.from_config(ToolBackendConfig(search_provider="mock"), sleep=lambda s: None)


def test_scripted_teacher_gives_deterministic_trajectory():
    def run():
        teacher = ScriptedModelClient([search_turn("river"), answer_turn("Thames")])
        return synthesize_trajectory(_vqa(), teacher, mock_gateway(), EpisodeConfig())

    a, b = run(), run()
    assert a.history == b.history and a.answer == "Thames"
    assert a.metadata["ground_truth"] == "Thames" and not a.metadata["needs_filtering"]


def test_teacher_that_never_answers_is_flagged():
    teacher = ScriptedModelClient(cycle_script([search_turn("x")]))
    traj = synthesize_trajectory(_vqa(), teacher, mock_gateway(), EpisodeConfig(max_turns=3))
    assert traj.metadata["termination"] == "max_turns_exhausted"
    assert traj.metadata["needs_filtering"]
    assert filter_trajectories([traj]) == []


def test_discarded_vqa_is_not_rolled_out():
    vqa = VqaInstance("q", "a", "", "", "", "discard")
    with pytest.raises(ValueError):
        synthesize_trajectory(vqa, ScriptedModelClient([]), mock_gateway(), EpisodeConfig())


def _raw_traj(turns, gt):
    h = InteractionHistory(Query("Which river is this?"))
    for raw in turns[:-1]:
        action = Action.from_turn(parse_model_turn(raw, lenient=True), raw=raw)
        h = append_turn(h, action, Observation("obs", action.tool_name))
    last = parse_model_turn(turns[-1], lenient=True)
    return finalize(h, Action.from_turn(last, raw=turns[-1]), {"raw_turns": list(turns), "ground_truth": gt})


def test_filter_cases():
    bare = '<tool_call>\n{"name": "web_search", "arguments": {"queries": ["x"]}}\n</tool_call>'
    clean = _raw_traj([search_turn("x"), answer_turn("Thames")], "Thames")
    malformed = _raw_traj([bare, answer_turn("Thames")], "Thames")
    wrong = _raw_traj([search_turn("x"), answer_turn("Seine")], "Thames")
    before = copy.deepcopy([clean, malformed, wrong])
    kept = filter_trajectories([clean, malformed, wrong])
    assert kept == [clean] and kept[0] is clean
    assert [clean, malformed, wrong] == before


def test_filter_needs_ground_truth():
    with pytest.raises(ValueError):
        filter_trajectories([trajectory_with(["x"])])


def test_judge_failures_drop_with_warning(caplog):
    class Confused:
        def complete(self, request):
            return "unsure"

    traj = _raw_traj([search_turn("x"), answer_turn("Thames")], "Thames")
    with caplog.at_level(logging.WARNING):
        assert filter_trajectories([traj], Confused()) == []
    assert "judge" in caplog.text


def test_kept_trajectories_revalidate_from_serialized_form(tmp_path):
    traj = _raw_traj([search_turn("x"), answer_turn("Thames")], "Thames")
    (kept,) = filter_trajectories([traj])
    back = trajectory_from_record(json.loads(json.dumps(trajectory_to_record(kept, tmp_path))), tmp_path)
    assert (score_format(back), score_tool(back)) == (score_format(kept), score_tool(kept)) == (1, 1)
    assert filter_trajectories([back]) == [back]


# export


def test_dual_export_shares_images(tmp_path):
    traj = trajectory_with(["page one " * 200, "page two"], images=[png()])
    res = export_sft([traj], tmp_path)
    records = list(iter_jsonl(res.path))
    assert [r["variant"] for r in records] == ["rendered", "text"]
    text, rendered = records[1], records[0]
    assert text["images"][0] == rendered["images"][0]  # the query image is one file
    assert len(rendered["images"]) > len(text["images"])
    assert all((tmp_path / p).exists() for r in records for p in r["images"])
    assert len({p for r in records for p in r["images"]}) == len(list((tmp_path / "images").iterdir()))
    # every observation is rendered in the rendered variant
    responses = [s["text"] for s in rendered["segments"] if s["origin"] == "tool_response"]
    assert len(responses) == 2 and all("page" not in t for t in responses)


def test_single_format_export(tmp_path):
    res = export_sft([trajectory_with(["x"])], tmp_path, dual_format=False, split="train")
    (record,) = iter_jsonl(res.path)
    assert record["variant"] == "text" and record["split"] == "train"


def test_export_masks_match_oracle(tmp_path):
    traj = trajectory_with(["a", "b"])
    (record, _) = sorted(iter_jsonl(export_sft([traj], tmp_path).path), key=lambda r: r["variant"] != "text")
    expected = [{"origin": s.origin, "mask": s.mask, "text": s.text} for s in supervision_segments(traj)]
    assert record["segments"] == expected


def test_export_is_idempotent_and_deduplicates(tmp_path):
    trajs = [trajectory_with(["a" * 500]), trajectory_with(["b"])]
    first = export_sft(trajs, tmp_path).path.read_bytes()
    again = export_sft(trajs + trajs[:1], tmp_path)
    assert again.path.read_bytes() == first
    assert again.n_records == 4


def test_render_failure_keeps_text_variant(tmp_path, monkeypatch, caplog):
    import foldsearch.curation.export as export

    def broken(obs, cfg):
        raise RenderError("no font")

    monkeypatch.setattr(export, "render_observation", broken)
    with caplog.at_level(logging.WARNING):
        res = export_sft([trajectory_with(["x"])], tmp_path)
    assert (res.n_records, res.n_rendered_skipped) == (1, 1)
    assert "no font" in caplog.text


@settings(max_examples=30, deadline=None)
@given(trajectories(max_turns=4))
def test_text_variant_images_follow_placeholders(traj):
    segments, images = text_variant(traj)
    text = "".join(s.text for s in segments)
    assert text.count("<image>") == len(images)


# batch pipeline


def _qa_file(tmp_path, n=10):
    lines = [json.dumps({"id": f"qa-{i:02d}", "question": f"In which year was the Harbour Bridge number {i} of Sydney opened?",
                         "answer": str(1900 + i)}) for i in range(n)]
    path = tmp_path / "qa.jsonl"
    path.write_text("\n".join(lines) + "\n")
    return path


class StopAfter:
    """Wraps a client and raises KeyboardInterrupt after ``n`` completions."""

    def __init__(self, inner, n):
        self.inner, self.n, self.calls = inner, n, 0

    def complete(self, request):
        self.calls += 1
        if self.calls > self.n:
            raise KeyboardInterrupt
        return self.inner.complete(request)


def _answers(out):
    return {e["transformed_question"]: e["original_answer"] if int(e["id"][-2:]) % 3 else "wrong"
            for e in iter_jsonl(out / "vqa.jsonl")}


def test_batch_of_ten_is_resumable(tmp_path):
    qa = _qa_file(tmp_path)
    out = tmp_path / "out"
    search, fetcher = SyntheticSearchBackend(), SyntheticPageFetcher()
    with pytest.raises(KeyboardInterrupt):
        stage_vqa(qa, out, StopAfter(MockVqaTeacher(), 4), search, fetcher)
    assert len(list(iter_jsonl(out / "vqa.jsonl"))) == 4
    teacher = StopAfter(MockVqaTeacher(), 100)
    assert stage_vqa(qa, out, teacher, search, fetcher) == 6
    assert teacher.calls == 6  # finished items are not redone
    vqa = list(iter_jsonl(out / "vqa.jsonl"))
    assert sorted(e["id"] for e in vqa) == [f"qa-{i:02d}" for i in range(10)]
    assert all(e["status"] == "success" and e["image"] for e in vqa)

    policy = MockPolicyClient(_answers(out))
    with pytest.raises(KeyboardInterrupt):
        stage_trajectories(out, StopAfter(policy, 7), mock_gateway(), EpisodeConfig())
    assert stage_trajectories(out, policy, mock_gateway(), EpisodeConfig()) == 8
    records = list(iter_jsonl(out / "trajectories.jsonl"))
    assert len(records) == 10 and len({r["id"] for r in records}) == 10

    kept, total = stage_filter(out)
    assert (kept, total) == (6, 10)  # ids 0, 3, 6, 9 answer wrong
    assert all(t.answer == t.metadata["ground_truth"] for t in read_trajectories(out / "kept.jsonl"))

    res = stage_export(out)
    assert res.n_records == 12
    first = res.path.read_bytes()
    assert stage_export(out).path.read_bytes() == first


def test_stage_failures_are_logged_per_item(tmp_path):
    qa = _qa_file(tmp_path, n=2)
    out = tmp_path / "out"
    stage_vqa(qa, out, ScriptedModelClient(["?"] * 4), None, None)
    entries = list(iter_jsonl(out / "vqa.jsonl"))
    assert [e["status"] for e in entries] == ["failed", "failed"]
    assert all(e["error"].startswith("TeacherUnparseable") for e in entries)
