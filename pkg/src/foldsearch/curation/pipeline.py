"""Resumable batch stages: vqa -> trajectories -> filter -> export.

Every stage reads the previous stage's file in ``out_dir`` and appends to its
own log, skipping ids already present, so a killed run picks up where it
stopped and no item is processed twice per stage.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Any

from foldsearch.history import ImagePayload, read_trajectories, store_image, trajectory_from_record, trajectory_to_record, write_trajectories
from foldsearch.jsonl import ResumableLog, iter_jsonl, run_stage
from foldsearch.runtime.client import ModelClient, ModelRequest
from foldsearch.runtime.episode import EpisodeConfig, Gateway
from foldsearch.tools.base import PageFetcher, SearchBackend
from foldsearch.vfold.render import RenderConfig

from foldsearch.curation.export import ExportResult, export_sft
from foldsearch.curation.synthesize import filter_trajectories, synthesize_trajectory
from foldsearch.curation.vqa import VqaInstance, qa_to_vqa

STAGES = ("vqa", "trajectories", "filter", "export")

VQA_FILE = "vqa.jsonl"
TRAJ_FILE = "trajectories.jsonl"
KEPT_FILE = "kept.jsonl"


def _failed(item_id: str, exc: Exception) -> dict[str, Any]:
    return {"id": item_id, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}


def stage_vqa(
    input_file: str | Path,
    out_dir: str | Path,
    teacher: ModelClient,
    search: SearchBackend | None,
    fetcher: PageFetcher | None,
    concurrency: int = 1,
) -> int:
    """QA records ``{id, question, answer}`` -> ``vqa.jsonl``."""
    out_dir = Path(out_dir)
    items = [(str(r["id"]), r) for r in iter_jsonl(input_file)]
    log = ResumableLog(out_dir / VQA_FILE)

    def work(item_id: str, rec: dict[str, Any]) -> dict[str, Any]:
        vqa = qa_to_vqa(rec["question"], rec["answer"], teacher, search, fetcher)
        entry = {"id": item_id, **vqa.to_record()}
        entry["image"] = store_image(vqa.image, out_dir / "images", out_dir) if vqa.image else None
        return entry

    return run_stage(items, work, log, concurrency, on_error=_failed)


def load_vqa(entry: dict[str, Any], out_dir: Path) -> VqaInstance:
    image = None
    if entry.get("image"):
        image = ImagePayload((out_dir / entry["image"]).read_bytes(), source=entry.get("image_url"))
    fields = {k: entry[k] for k in (
        "original_question", "original_answer", "target_entity", "transformed_question",
        "search_query", "status", "image_url", "needs_review", "reason",
    )}
    return VqaInstance(**fields, image=image)


def stage_trajectories(
    out_dir: str | Path,
    teacher: ModelClient,
    gateway: Gateway,
    config: EpisodeConfig,
    concurrency: int = 1,
) -> int:
    """Successful VQA items -> ``trajectories.jsonl``."""
    out_dir = Path(out_dir)
    items = [(e["id"], e) for e in iter_jsonl(out_dir / VQA_FILE) if e.get("status") == "success"]
    log = ResumableLog(out_dir / TRAJ_FILE)

    def work(item_id: str, entry: dict[str, Any]) -> dict[str, Any]:
        traj = synthesize_trajectory(load_vqa(entry, out_dir), teacher, gateway, config)
        traj.metadata["id"] = item_id
        return {
            "id": item_id,
            "status": "done",
            "termination": traj.metadata["termination"],
            "trajectory": trajectory_to_record(traj, out_dir),
        }

    return run_stage(items, work, log, concurrency, on_error=_failed)


def stage_filter(out_dir: str | Path, judge=None, registry=None) -> tuple[int, int]:
    """``trajectories.jsonl`` -> ``kept.jsonl``. Returns (kept, total)."""
    out_dir = Path(out_dir)
    trajs = [
        trajectory_from_record(e["trajectory"], out_dir)
        for e in sorted(iter_jsonl(out_dir / TRAJ_FILE), key=lambda e: e["id"])
        if e.get("status") == "done"
    ]
    kept = filter_trajectories(trajs, judge, registry)
    write_trajectories(out_dir / KEPT_FILE, kept)
    return len(kept), len(trajs)


def stage_export(
    out_dir: str | Path,
    dual_format: bool = True,
    render_cfg: RenderConfig | None = None,
    split: str | None = None,
) -> ExportResult:
    out_dir = Path(out_dir)
    return export_sft(read_trajectories(out_dir / KEPT_FILE), out_dir / "sft", dual_format, render_cfg, split)


class MockVqaTeacher:
    """Offline QA-to-VQA teacher: masks the longest capitalized phrase of the
    question that is not the answer, as "this entity". Deterministic."""

    _INPUT = re.compile(r"### INPUT:\s*Question:\s*(?P<q>.*?)\s*Answer:\s*(?P<a>.*)\Z", re.S)
    _PHRASE = re.compile(r"\b[A-Z][\w'-]*(?:\s+(?:of\s+|the\s+)?[A-Z][\w'-]*)*")
    _SKIP = {"What", "Which", "Who", "Whom", "Whose", "When", "Where", "Why", "How", "In", "The", "A", "An"}

    def complete(self, request: ModelRequest) -> str:
        m = self._INPUT.search(request.messages[-1].text)
        if m is None:
            return "I cannot help with that."
        q, a = m.group("q").strip(), m.group("a").strip()
        candidates = [
            p for p in self._PHRASE.findall(q) if p not in self._SKIP and p.casefold() != a.casefold()
        ]
        if not candidates:
            return json.dumps({
                "status": "discard", "selected_target_entity": "", "transformed_vqa_query": "",
                "original_answer": a, "search_query": "",
            })
        entity = max(candidates, key=len)
        return json.dumps({
            "status": "success",
            "selected_target_entity": entity,
            "transformed_vqa_query": re.sub(rf"\b(?:[Tt]he\s+)?{re.escape(entity)}", "this entity", q, count=1),
            "original_answer": a,
            "search_query": entity,
        }, ensure_ascii=False)
