"""Teacher-driven trajectory generation and correctness filtering."""

from __future__ import annotations

import logging
from typing import Mapping, Sequence

from foldsearch.errors import JudgeUnparseable
from foldsearch.history import Query, Trajectory
from foldsearch.protocol.schemas import ToolSchema
from foldsearch.runtime.client import ModelClient
from foldsearch.runtime.episode import EpisodeConfig, Gateway, run_episode
from foldsearch.scoring.judge import judge_accuracy
from foldsearch.scoring.reward import score_format, score_tool

from foldsearch.curation.vqa import VqaInstance

log = logging.getLogger(__name__)


def synthesize_trajectory(
    vqa: VqaInstance,
    teacher_client: ModelClient,
    gateway: Gateway,
    config: EpisodeConfig,
) -> Trajectory:
    """Roll out one episode with the teacher as the policy.

    Uses the same loop, grammar and validation as evaluation. The ground
    truth and termination go into the trajectory metadata; a teacher that
    never answers yields an unanswered trajectory (``needs_filtering``).
    """
    if vqa.status != "success":
        raise ValueError("only successful VQA instances are rolled out")
    images = (vqa.image,) if vqa.image is not None else ()
    result = run_episode(Query(vqa.transformed_question, images), config, gateway, teacher_client)
    traj = result.trajectory
    traj.metadata.update(
        ground_truth=vqa.original_answer,
        needs_filtering=result.termination != "answered",
    )
    return traj


def filter_trajectories(
    trajectories: Sequence[Trajectory],
    judge_client=None,
    registry: Mapping[str, ToolSchema] | None = None,
) -> list[Trajectory]:
    """Keep trajectories that are correct, well-formed and used tools validly.

    The ground truth is read from ``metadata["ground_truth"]``. Items the
    judge cannot score are dropped with a warning. Input objects are
    returned as-is, never modified.
    """
    kept = []
    for traj in trajectories:
        gt = traj.metadata.get("ground_truth")
        if gt is None:
            raise ValueError("trajectory metadata has no ground_truth")
        if not (score_format(traj) and score_tool(traj, registry)):
            continue
        try:
            correct = judge_accuracy(traj.query.question, traj.answer, gt, judge_client)
        except JudgeUnparseable as exc:
            log.warning("dropping trajectory the judge could not score: %s", exc)
            continue
        if correct:
            kept.append(traj)
    return kept
