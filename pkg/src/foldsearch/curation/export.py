"""SFT export: text-only and fully rendered variants of each trajectory."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from foldsearch.errors import RenderError
from foldsearch.history import ImagePayload, Trajectory, store_image
from foldsearch.protocol.grammar import IMAGE_PLACEHOLDER, wrap_tool_response
from foldsearch.protocol.masks import SupervisionSegment, serialize_conversation, supervision_segments
from foldsearch.vfold.render import RenderConfig, RenderedObservation, render_observation

log = logging.getLogger(__name__)

SFT_FILE = "sft.jsonl"


def trajectory_id(traj: Trajectory) -> str:
    """``metadata["id"]`` if set, else a hash of the conversation and images."""
    if traj.metadata.get("id") is not None:
        return str(traj.metadata["id"])
    h = hashlib.sha256(serialize_conversation(traj).encode("utf-8"))
    for im in traj.query.images:
        h.update(im.sha256.encode("ascii"))
    for obs in traj.history.observations:
        for im in obs.images:
            h.update(im.sha256.encode("ascii"))
    return h.hexdigest()[:16]


def text_variant(traj: Trajectory) -> tuple[list[SupervisionSegment], list[ImagePayload]]:
    """Segments with observations as text; images in placeholder order."""
    images = list(traj.query.images)
    for obs in traj.history.observations:
        images.extend(obs.images)
    return supervision_segments(traj), images


def rendered_variant(
    traj: Trajectory, cfg: RenderConfig | None = None
) -> tuple[list[SupervisionSegment], list[ImagePayload]]:
    """Segments with every observation replaced by its page images.

    No fresh window: all observations are rendered. Raises RenderError if
    any observation fails to render.
    """
    cfg = cfg or RenderConfig()
    rendered: list[RenderedObservation] = [render_observation(o, cfg) for o in traj.history.observations]
    images = list(traj.query.images)
    segments = []
    it = iter(rendered)
    for seg in supervision_segments(traj):
        if seg.origin == "tool_response":
            r = next(it)
            imgs = list(r.images) + list(r.attachments)
            images.extend(imgs)
            text = wrap_tool_response("\n".join([IMAGE_PLACEHOLDER] * len(imgs))) + "\n"
            seg = SupervisionSegment(text, seg.mask, seg.origin)
        segments.append(seg)
    return segments, images


def _record(
    traj_id: str,
    variant: str,
    segments: list[SupervisionSegment],
    images: list[ImagePayload],
    traj: Trajectory,
    out_dir: Path,
    image_subdir: str,
    split: str | None,
) -> dict[str, Any]:
    return {
        "id": traj_id,
        "variant": variant,
        "split": split,
        "answer": traj.answer,
        "images": [store_image(im, out_dir / image_subdir, out_dir) for im in images],
        "segments": [{"origin": s.origin, "mask": s.mask, "text": s.text} for s in segments],
    }


@dataclass(frozen=True)
class ExportResult:
    path: Path
    n_records: int
    n_rendered_skipped: int


def export_sft(
    trajectories: Sequence[Trajectory],
    out_dir: str | Path,
    dual_format: bool = True,
    render_cfg: RenderConfig | None = None,
    split: str | None = None,
    image_subdir: str = "images",
) -> ExportResult:
    """Write ``sft.jsonl`` plus content-addressed images under ``out_dir``.

    One ``text`` record per trajectory, and with ``dual_format`` a
    ``rendered`` record too. Records are sorted by (id, variant) and the
    file is rewritten whole, so reruns are byte-identical and duplicate
    trajectories collapse to one. A render failure skips only that
    trajectory's rendered record.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records: dict[tuple[str, str], dict[str, Any]] = {}
    skipped = 0
    for traj in trajectories:
        tid = trajectory_id(traj)
        segs, imgs = text_variant(traj)
        records[(tid, "text")] = _record(tid, "text", segs, imgs, traj, out_dir, image_subdir, split)
        if not dual_format:
            continue
        try:
            segs, imgs = rendered_variant(traj, render_cfg)
        except RenderError as exc:
            log.warning("skipping rendered variant of %s: %s", tid, exc)
            skipped += 1
            continue
        records[(tid, "rendered")] = _record(tid, "rendered", segs, imgs, traj, out_dir, image_subdir, split)
    path = out_dir / SFT_FILE
    body = "".join(json.dumps(records[k], ensure_ascii=False, sort_keys=True) + "\n" for k in sorted(records))
    tmp = path.with_suffix(".jsonl.tmp")
    tmp.write_text(body, encoding="utf-8")
    tmp.replace(path)
    return ExportResult(path, len(records), skipped)
