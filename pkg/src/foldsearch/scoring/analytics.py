"""Aggregate analyses over finished trajectories and benchmark results."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping, Sequence

from foldsearch.history import Trajectory
from foldsearch.protocol.schemas import BUILTIN_TOOLS
from foldsearch.scoring.judge import contains_normalized

Matcher = Callable[[str, str], bool]


def observation_text(traj: Trajectory) -> str:
    return "\n".join(o.text for o in traj.history.observations)


def history_hit_rate(
    failed_trajectories: Sequence[Trajectory],
    ground_truths: Sequence[str],
    matcher: Matcher | None = None,
) -> float | None:
    """Share of failed episodes whose tool responses contain the ground truth.

    Returns None when there are no failures: the ratio is undefined, not 0.
    """
    if len(failed_trajectories) != len(ground_truths):
        raise ValueError("one ground truth per failed trajectory")
    if not failed_trajectories:
        return None
    matcher = matcher or contains_normalized
    hits = sum(bool(matcher(observation_text(t), gt)) for t, gt in zip(failed_trajectories, ground_truths))
    return hits / len(failed_trajectories)


@dataclass(frozen=True)
class BucketAccuracy:
    threshold: int
    n_long: int
    n_short: int
    acc_long: float | None
    acc_short: float | None


def length_bucket_accuracy(results: Iterable[tuple[int, int]], threshold: int = 10_000) -> BucketAccuracy:
    """Accuracy above vs at-or-below a length threshold.

    ``results`` yields (length, correct) pairs. An empty bucket has accuracy
    None.
    """
    long_, short = [], []
    for length, correct in results:
        (long_ if length > threshold else short).append(int(correct))

    def acc(xs):
        return sum(xs) / len(xs) if xs else None

    return BucketAccuracy(threshold, len(long_), len(short), acc(long_), acc(short))


@dataclass(frozen=True)
class UsageStats:
    n_trajectories: int
    avg_tool_turns: float
    tool_counts: dict[str, int]
    tool_fractions: dict[str, float]

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_trajectories": self.n_trajectories,
            "avg_tool_turns": self.avg_tool_turns,
            "tool_counts": dict(self.tool_counts),
            "tool_fractions": dict(self.tool_fractions),
        }


def tool_counts(traj: Trajectory) -> Counter:
    return Counter(a.tool_name for a in traj.history.actions if a.kind == "tool_call")


def usage_statistics_from_counts(
    per_item: Sequence[Mapping[str, int]], tools: Sequence[str] = BUILTIN_TOOLS
) -> UsageStats:
    total = Counter()
    for c in per_item:
        total.update(c)
    names = list(tools) + sorted(set(total) - set(tools))
    n_calls = sum(total.values())
    counts = {t: total.get(t, 0) for t in names}
    fractions = {t: (counts[t] / n_calls if n_calls else 0.0) for t in names}
    avg = n_calls / len(per_item) if per_item else 0.0
    return UsageStats(len(per_item), avg, counts, fractions)


def usage_statistics(trajectories: Sequence[Trajectory], tools: Sequence[str] = BUILTIN_TOOLS) -> UsageStats:
    """Average tool calls per trajectory and each tool's share of all calls."""
    return usage_statistics_from_counts([tool_counts(t) for t in trajectories], tools)


def _avg_length(report_or_value: Any) -> float:
    if isinstance(report_or_value, Mapping):
        return float(report_or_value["avg_context_tokens"])
    return float(report_or_value)


def response_length_delta(baseline: Any, folded: Any) -> float:
    """Percent reduction of average response length from ``baseline`` to
    ``folded``. Either may be a report dict or a plain number."""
    a, b = _avg_length(baseline), _avg_length(folded)
    if a <= 0:
        raise ValueError("baseline length must be positive")
    return (a - b) / a * 100.0
