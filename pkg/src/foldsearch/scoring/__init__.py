"""Rewards, judging, benchmark runs and analyses."""

from foldsearch.scoring.analytics import (
    BucketAccuracy,
    UsageStats,
    history_hit_rate,
    length_bucket_accuracy,
    response_length_delta,
    usage_statistics,
)
from foldsearch.scoring.benchmark import (
    DatasetItem,
    build_report,
    check_report,
    format_summary,
    load_dataset,
    run_benchmark,
    write_report,
)
from foldsearch.scoring.judge import LLMJudge, RuleJudge, judge_accuracy, normalize_answer, parse_verdict
from foldsearch.scoring.reward import (
    RewardBreakdown,
    RewardWeights,
    reward_breakdown,
    score_format,
    score_tool,
    total_reward,
)

__all__ = [
    "BucketAccuracy",
    "DatasetItem",
    "LLMJudge",
    "RewardBreakdown",
    "RewardWeights",
    "RuleJudge",
    "UsageStats",
    "build_report",
    "check_report",
    "format_summary",
    "history_hit_rate",
    "judge_accuracy",
    "length_bucket_accuracy",
    "load_dataset",
    "normalize_answer",
    "parse_verdict",
    "response_length_delta",
    "reward_breakdown",
    "run_benchmark",
    "score_format",
    "score_tool",
    "total_reward",
    "usage_statistics",
    "write_report",
]
