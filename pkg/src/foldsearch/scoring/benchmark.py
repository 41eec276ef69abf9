"""Resumable benchmark harness: run, score and aggregate a dataset of episodes."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from foldsearch.errors import EndpointError, FoldSearchError, JudgeUnparseable
from foldsearch.history import ImagePayload, Query, Trajectory, trajectory_from_record, trajectory_to_record
from foldsearch.jsonl import ResumableLog
from foldsearch.runtime.client import ModelClient
from foldsearch.runtime.episode import EpisodeConfig, Gateway, run_episode
from foldsearch.scoring.analytics import length_bucket_accuracy, observation_text, tool_counts, usage_statistics_from_counts
from foldsearch.scoring.judge import as_judge, contains_normalized, judge_accuracy
from foldsearch.scoring.reward import RewardWeights, score_format, score_tool, total_reward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DatasetItem:
    id: str
    question: str
    ground_truth: str
    images: tuple[str, ...] = ()

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "DatasetItem":
        try:
            return cls(str(rec["id"]), rec["question"], str(rec["ground_truth"]), tuple(rec.get("images") or ()))
        except KeyError as exc:
            raise ValueError(f"dataset record lacks field {exc}") from None


def load_dataset(path: str | Path) -> list[DatasetItem]:
    items, seen = [], set()
    with Path(path).open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                item = DatasetItem.from_record(json.loads(line))
            except (json.JSONDecodeError, ValueError) as exc:
                raise ValueError(f"{path}:{n}: {exc}") from None
            if item.id in seen:
                raise ValueError(f"{path}:{n}: duplicate id {item.id!r}")
            seen.add(item.id)
            items.append(item)
    return items


def load_query(item: DatasetItem, base_dir: Path) -> Query:
    images = tuple(ImagePayload.from_path(p if Path(p).is_absolute() else base_dir / p) for p in item.images)
    return Query(item.question, images)


ClientSource = ModelClient | Callable[[DatasetItem], ModelClient]


def _client_for(source: ClientSource, item: DatasetItem) -> ModelClient:
    return source if hasattr(source, "complete") else source(item)


def score_item(
    item: DatasetItem,
    traj: Trajectory | None,
    termination: str | None,
    judge,
    weights: RewardWeights,
    registry=None,
    error: str | None = None,
) -> dict[str, Any]:
    """Per-item record. Everything in it is deterministic for fixed inputs."""
    rec: dict[str, Any] = {
        "id": item.id,
        "question": item.question,
        "ground_truth": item.ground_truth,
        "prediction": None,
        "termination": termination,
        "error": error,
        "scored": False,
        "s_acc": None,
        "s_format": 0,
        "s_tool": 0,
        "reward": None,
        "model_calls": 0,
        "tool_counts": {},
        "history_tokens": 0,
        "context_tokens": 0,
        "gt_in_history": None,
    }
    if traj is None:
        return rec
    rec.update(
        prediction=traj.answer,
        s_format=score_format(traj),
        s_tool=score_tool(traj, registry),
        model_calls=int(traj.metadata.get("model_calls", len(traj.history))),
        tool_counts=dict(sorted(tool_counts(traj).items())),
        history_tokens=int(traj.metadata.get("history_tokens", 0)),
        context_tokens=int(traj.metadata.get("context_tokens", 0)),
        gt_in_history=contains_normalized(observation_text(traj), item.ground_truth),
    )
    if error is not None:
        return rec
    try:
        s_acc = judge_accuracy(item.question, traj.answer, item.ground_truth, judge)
    except JudgeUnparseable as exc:
        log.warning("item %s left unscored: %s", item.id, exc)
        rec["error"] = f"JudgeUnparseable: {exc}"
        return rec
    rec.update(scored=True, s_acc=s_acc, reward=total_reward(s_acc, rec["s_format"], rec["s_tool"], weights))
    return rec


def evaluate_item(
    item: DatasetItem,
    base_dir: Path,
    config: EpisodeConfig,
    gateway: Gateway,
    client: ClientSource,
    judge,
    weights: RewardWeights,
) -> tuple[dict[str, Any], Trajectory | None]:
    try:
        query = load_query(item, base_dir)
        result = run_episode(query, config, gateway, _client_for(client, item))
    except EndpointError as exc:
        partial = exc.partial_result
        traj = partial.trajectory if partial is not None else None
        return score_item(item, traj, None, judge, weights, config.registry, f"EndpointError: {exc}"), traj
    except (FoldSearchError, OSError, ValueError) as exc:
        return score_item(item, None, None, judge, weights, config.registry, f"{type(exc).__name__}: {exc}"), None
    traj = result.trajectory
    return score_item(item, traj, result.termination, judge, weights, config.registry), traj


# progress file


class ProgressLog(ResumableLog):
    """Finished benchmark items: ``{"record": ..., "trajectory": ...}`` lines."""

    def __init__(self, path: str | Path):
        super().__init__(path, key=lambda e: e["record"]["id"])

    @property
    def done(self) -> dict[str, dict[str, Any]]:
        return {k: e["record"] for k, e in self.entries.items()}

    def add(self, record: dict[str, Any], trajectory: Trajectory | None) -> None:
        entry: dict[str, Any] = {"record": record}
        if trajectory is not None:
            entry["trajectory"] = trajectory_to_record(trajectory, self.path.parent)
        self.append(entry)

    def trajectories(self) -> list[tuple[dict[str, Any], Trajectory]]:
        return [
            (e["record"], trajectory_from_record(e["trajectory"], self.path.parent))
            for _, e in sorted(self.entries.items())
            if "trajectory" in e
        ]


# report


def _mean(xs: Sequence[float]) -> float | None:
    return sum(xs) / len(xs) if xs else None


def build_report(records: Iterable[Mapping[str, Any]], length_threshold: int = 10_000) -> dict[str, Any]:
    """Aggregate per-item records. A pure function of the records."""
    items = sorted((dict(r) for r in records), key=lambda r: r["id"])
    ran = [r for r in items if r["termination"] is not None]
    scored = [r for r in items if r["scored"]]
    failures = [r for r in scored if r["s_acc"] == 0]
    usage = usage_statistics_from_counts([r["tool_counts"] for r in ran])
    buckets = length_bucket_accuracy(((r["history_tokens"], r["s_acc"]) for r in scored), length_threshold)
    terminations: dict[str, int] = {}
    for r in ran:
        terminations[r["termination"]] = terminations.get(r["termination"], 0) + 1
    return {
        "n_items": len(items),
        "n_scored": len(scored),
        "n_unscored": len(items) - len(scored),
        "n_errors": sum(r["error"] is not None for r in items),
        "accuracy": _mean([r["s_acc"] for r in scored]),
        "avg_reward": _mean([r["reward"] for r in scored]),
        "avg_model_calls": _mean([r["model_calls"] for r in ran]),
        "avg_tool_turns": usage.avg_tool_turns if ran else None,
        "tool_counts": usage.tool_counts,
        "tool_distribution": usage.tool_fractions,
        "avg_context_tokens": _mean([r["context_tokens"] for r in ran]),
        "avg_history_tokens": _mean([r["history_tokens"] for r in ran]),
        "length_buckets": {
            "threshold": buckets.threshold,
            "n_long": buckets.n_long,
            "n_short": buckets.n_short,
            "acc_long": buckets.acc_long,
            "acc_short": buckets.acc_short,
        },
        "history_hit_rate": _mean([int(bool(r["gt_in_history"])) for r in failures]),
        "n_failures": len(failures),
        "terminations": dict(sorted(terminations.items())),
        "items": items,
    }


def check_report(report: Mapping[str, Any]) -> None:
    """Raise ValueError unless every aggregate recomputes from the items."""
    threshold = report["length_buckets"]["threshold"]
    again = build_report(report["items"], threshold)
    bad = [k for k in again if again[k] != report.get(k)]
    if bad:
        raise ValueError(f"report aggregates inconsistent with items: {bad}")


def _fmt(v: Any, pct: bool = False) -> str:
    if v is None:
        return "n/a"
    if pct:
        return f"{100 * v:.1f}%"
    return f"{v:.2f}" if isinstance(v, float) else str(v)


def format_summary(report: Mapping[str, Any]) -> str:
    lb = report["length_buckets"]
    lines = [
        f"items: {report['n_items']}  scored: {report['n_scored']}  unscored: {report['n_unscored']}  errors: {report['n_errors']}",
        f"accuracy: {_fmt(report['accuracy'], pct=True)}  avg reward: {_fmt(report['avg_reward'])}",
        f"avg tool turns: {_fmt(report['avg_tool_turns'])}  avg model calls: {_fmt(report['avg_model_calls'])}",
        "tool distribution: "
        + ", ".join(f"{k} {_fmt(v, pct=True)}" for k, v in report["tool_distribution"].items()),
        f"avg response length (tokens): {_fmt(report['avg_context_tokens'])}",
        f"accuracy >{lb['threshold']} tokens: {_fmt(lb['acc_long'], pct=True)} (n={lb['n_long']}); "
        f"<={lb['threshold']}: {_fmt(lb['acc_short'], pct=True)} (n={lb['n_short']})",
        f"failures with ground truth in history: {_fmt(report['history_hit_rate'], pct=True)} (n={report['n_failures']})",
        "terminations: " + ", ".join(f"{k} {v}" for k, v in report["terminations"].items()),
    ]
    return "\n".join(lines) + "\n"


def write_report(report: Mapping[str, Any], json_path: str | Path, text_path: str | Path | None = None) -> None:
    check_report(report)
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(report, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if text_path is not None:
        Path(text_path).write_text(format_summary(report), encoding="utf-8")


def run_benchmark(
    dataset_file: str | Path,
    episode_config: EpisodeConfig,
    *,
    gateway: Gateway,
    model_client: ClientSource,
    judge=None,
    concurrency: int = 1,
    progress_file: str | Path | None = None,
    weights: RewardWeights | None = None,
    length_threshold: int = 10_000,
    limit: int | None = None,
) -> dict[str, Any]:
    """Run every dataset item as an episode, score it, and aggregate.

    Finished items are appended to ``progress_file`` as they complete; a
    rerun skips them, so a killed run resumes where it stopped and yields the
    same report. ``model_client`` is either shared by all episodes (it must
    then be thread-safe) or a factory called once per item. ``limit`` stops
    after that many newly processed items (the rest stay pending).
    """
    if concurrency < 1:
        raise ValueError("concurrency must be >= 1")
    dataset_file = Path(dataset_file)
    items = load_dataset(dataset_file)
    weights = weights or RewardWeights()
    judge = as_judge(judge)
    progress = ProgressLog(progress_file or dataset_file.with_suffix(".progress.jsonl"))
    pending = [it for it in items if it.id not in progress.done]
    if limit is not None:
        pending = pending[:limit]
    base = dataset_file.parent

    pool = ThreadPoolExecutor(max_workers=concurrency)
    try:
        futures = {
            pool.submit(evaluate_item, it, base, episode_config, gateway, model_client, judge, weights): it
            for it in pending
        }
        for fut in as_completed(futures):
            record, traj = fut.result()
            progress.add(record, traj)
    except BaseException:
        pool.shutdown(wait=True, cancel_futures=True)
        raise
    pool.shutdown(wait=True)

    wanted = {it.id for it in items}
    return build_report((r for i, r in progress.done.items() if i in wanted), length_threshold)
