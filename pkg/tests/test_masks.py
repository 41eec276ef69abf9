import pytest
from hypothesis import given, settings

from foldsearch.errors import IncompleteTrajectory
from foldsearch.history import Action, InteractionHistory, Query, Trajectory, finalize
from foldsearch.protocol.masks import SupervisionSegment, serialize_conversation, supervision_segments

from helpers import history_with, trajectories, trajectory_with


def test_single_answer_turn():
    traj = finalize(InteractionHistory(Query("q?")), Action.final_answer("t", "\\boxed{1}", "1"))
    segs = supervision_segments(traj)
    assert [(s.origin, s.mask) for s in segs] == [("query", 0), ("think", 1), ("answer", 1)]


def test_tool_response_is_masked_out():
    segs = supervision_segments(trajectory_with(["page text"]))
    assert [(s.origin, s.mask) for s in segs] == [
        ("query", 0), ("think", 1), ("tool_call", 1), ("tool_response", 0), ("think", 1), ("answer", 1),
    ]
    assert segs[3].text == "<tool_response>\npage text\n</tool_response>\n"


def test_incomplete_trajectory_rejected():
    traj = Trajectory(history_with(["x"]), None)
    with pytest.raises(IncompleteTrajectory):
        supervision_segments(traj)


def test_segment_mask_must_match_origin():
    with pytest.raises(ValueError):
        SupervisionSegment("x", 1, "tool_response")


@settings(max_examples=100, deadline=None)
@given(trajectories())
def test_segments_partition_conversation(traj):
    segs = supervision_segments(traj)
    assert "".join(s.text for s in segs) == serialize_conversation(traj)
    assert all(s.mask == (s.origin in {"think", "tool_call", "answer"}) for s in segs)

    # independent recount of the supervised characters
    h = traj.history
    supervised = 0
    for action, obs in h.turns:
        supervised += len(f"<think>\n{action.think}\n</think>\n")
        if obs is None:
            supervised += len(f"<answer>\n{action.answer_text}\n</answer>")
        else:
            supervised += len(action.serialized().split("</think>\n", 1)[1]) + 1
    assert sum(len(s.text) for s in segs if s.mask) == supervised
