"""QA-to-VQA conversion, trajectory synthesis, filtering and SFT export."""

from foldsearch.curation.export import ExportResult, export_sft, rendered_variant, text_variant, trajectory_id
from foldsearch.curation.pipeline import (
    STAGES,
    MockVqaTeacher,
    stage_export,
    stage_filter,
    stage_trajectories,
    stage_vqa,
)
from foldsearch.curation.synthesize import filter_trajectories, synthesize_trajectory
from foldsearch.curation.vqa import VqaInstance, has_implicit_reference, parse_teacher_json, qa_to_vqa

__all__ = [
    "STAGES",
    "ExportResult",
    "MockVqaTeacher",
    "VqaInstance",
    "export_sft",
    "filter_trajectories",
    "has_implicit_reference",
    "parse_teacher_json",
    "qa_to_vqa",
    "rendered_variant",
    "stage_export",
    "stage_filter",
    "stage_trajectories",
    "stage_vqa",
    "synthesize_trajectory",
    "text_variant",
    "trajectory_id",
]
