"""Command-line entry point: ``foldsearch <command> [options]``.

Exit codes: 0 success, 1 item-level failures, 2 usage or configuration
errors, 130 interrupted (resume state is kept).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from foldsearch import __version__
from foldsearch.config import GlobalConfig, parse_assignment
from foldsearch.errors import ConfigError, EndpointError, FoldSearchError

log = logging.getLogger("foldsearch")

EXIT_OK, EXIT_ITEMS, EXIT_CONFIG, EXIT_INTERRUPTED = 0, 1, 2, 130


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(suppress: bool) -> argparse.ArgumentParser:
    """Options accepted both before and after the command name.

    The copy attached to subcommands uses SUPPRESS defaults so it does not
    overwrite values given before the command.
    """

    def d(value):
        return argparse.SUPPRESS if suppress else value

    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("configuration")
    g.add_argument("--config", type=Path, default=d(None), help="YAML configuration file")
    g.add_argument("--mock", action="store_true", default=d(False), help="offline profile: mock tools, model, judge and teacher")
    g.add_argument("--set", action="append", default=d([]), metavar="SECTION.KEY=VALUE", help="override one setting")
    g.add_argument("--print-config", action="store_true", default=d(False), help="print the effective configuration and exit")
    g.add_argument("-v", "--verbose", action="count", default=d(0))
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="foldsearch", description="Multimodal agentic search harness.", parents=[_common(False)])
    common = _common(True)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("run", parents=[common], help="run one episode and print its transcript")
    p.add_argument("--question", required=True)
    p.add_argument("--image", action="append", default=[], type=Path, help="query image (repeatable)")
    p.add_argument("--out", type=Path, help="append the trajectory record to this jsonl file")
    p.add_argument("--no-fold", action="store_true", help="disable history folding")

    p = sub.add_parser("eval", parents=[common], help="run and score a dataset")
    p.add_argument("--dataset", required=True, type=Path, help="jsonl with id, question, ground_truth, images")
    p.add_argument("--out-dir", type=Path, help="default: <dataset>.eval next to the dataset")
    p.add_argument("--concurrency", type=int)
    p.add_argument("--limit", type=int, help="process at most this many pending items")
    p.add_argument("--no-fold", action="store_true")

    p = sub.add_parser("curate", parents=[common], help="QA-to-VQA curation and SFT export")
    p.add_argument("--stage", choices=("vqa", "trajectories", "filter", "export", "all"), default="all")
    p.add_argument("--input", type=Path, help="QA jsonl with id, question, answer (vqa stage)")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--concurrency", type=int)
    p.add_argument("--text-only", action="store_true", help="export only the text variant")
    p.add_argument("--split", help="value of the split field in exported records")

    p = sub.add_parser("render", parents=[common], help="render a text file to page images")
    p.add_argument("--text-file", required=True, type=Path)
    p.add_argument("--out-dir", type=Path, default=Path("pages"))

    p = sub.add_parser("stats", parents=[common], help="usage statistics over trajectories")
    p.add_argument("path", type=Path, help="eval progress.jsonl or a trajectories jsonl")

    p = sub.add_parser("compare", parents=[common], help="response-length change between two eval reports")
    p.add_argument("baseline", type=Path, help="report.json without folding")
    p.add_argument("folded", type=Path, help="report.json with folding")
    return parser


def resolve_config(args) -> GlobalConfig:
    flags = [parse_assignment(s) for s in args.set]
    if getattr(args, "no_fold", False):
        flags.append({"fold": {"enabled": False}})
    if getattr(args, "concurrency", None) is not None:
        flags.append({"eval": {"concurrency": args.concurrency}})
    return GlobalConfig.resolve(args.config, flags=flags, mock=args.mock)


# commands


def transcript(traj) -> str:
    from foldsearch.protocol.grammar import wrap_tool_response

    lines = [f"[question] {traj.query.question}"]
    if traj.query.images:
        lines.append(f"[images] {len(traj.query.images)}")
    for action, obs in traj.history.turns:
        lines.append(action.serialized())
        if obs is not None:
            lines.append(wrap_tool_response(obs.text, len(obs.images)))
    lines.append(f"[answer] {traj.answer}")
    return "\n".join(lines)


def cmd_run(args, cfg: GlobalConfig) -> int:
    from foldsearch.history import ImagePayload, Query, write_trajectories
    from foldsearch.runtime.episode import run_episode

    query = Query(args.question, tuple(ImagePayload.from_path(p) for p in args.image))
    try:
        result = run_episode(query, cfg.episode_config(), cfg.gateway(), cfg.model_client())
    except EndpointError as exc:
        print(f"model endpoint error: {exc}", file=sys.stderr)
        if exc.partial_result is not None:
            print(transcript(exc.partial_result.trajectory))
        return EXIT_ITEMS
    print(transcript(result.trajectory))
    print(f"[termination] {result.termination}")
    if args.out:
        from foldsearch.history import read_trajectories

        existing = read_trajectories(args.out) if args.out.exists() else []
        write_trajectories(args.out, existing + [result.trajectory])
    return EXIT_OK if result.termination == "answered" else EXIT_ITEMS


def cmd_eval(args, cfg: GlobalConfig) -> int:
    from foldsearch.scoring.benchmark import format_summary, run_benchmark, write_report
    from foldsearch.scoring.judge import LLMJudge

    out_dir = args.out_dir or args.dataset.with_suffix(".eval")
    judge = cfg.judge_client()
    report = run_benchmark(
        args.dataset,
        cfg.episode_config(),
        gateway=cfg.gateway(),
        model_client=cfg.model_client(),
        judge=LLMJudge(judge) if judge is not None else None,
        concurrency=cfg["eval"]["concurrency"],
        progress_file=out_dir / "progress.jsonl",
        weights=cfg.reward_weights(),
        length_threshold=cfg["eval"]["length_threshold_tokens"],
        limit=args.limit,
    )
    write_report(report, out_dir / "report.json", out_dir / "report.txt")
    sys.stdout.write(format_summary(report))
    print(f"report: {out_dir / 'report.json'}")
    return EXIT_ITEMS if report["n_errors"] or report["n_unscored"] else EXIT_OK


def cmd_curate(args, cfg: GlobalConfig) -> int:
    from foldsearch.curation import pipeline
    from foldsearch.jsonl import iter_jsonl
    from foldsearch.runtime.client import MockPolicyClient
    from foldsearch.scoring.judge import LLMJudge

    stages = pipeline.STAGES if args.stage == "all" else (args.stage,)
    out = args.out_dir
    conc = cfg["eval"]["concurrency"]
    failed = 0
    for stage in stages:
        if stage == "vqa":
            if args.input is None:
                raise ConfigError("the vqa stage needs --input")
            gateway = cfg.gateway()
            teacher = pipeline.MockVqaTeacher() if cfg.mock else cfg.teacher_client()
            n = pipeline.stage_vqa(args.input, out, teacher, gateway.search, gateway.fetcher, conc)
            entries = list(iter_jsonl(out / pipeline.VQA_FILE))
            print(f"vqa: {n} processed, {sum(e['status'] == 'success' for e in entries)} usable of {len(entries)}")
            failed += sum(e["status"] == "failed" for e in entries)
        elif stage == "trajectories":
            if cfg.mock:
                answers = {
                    e["transformed_question"]: e["original_answer"]
                    for e in iter_jsonl(out / pipeline.VQA_FILE)
                    if e.get("status") == "success"
                }
                teacher = MockPolicyClient(answers)
            else:
                teacher = cfg.teacher_client()
            n = pipeline.stage_trajectories(out, teacher, cfg.gateway(), cfg.episode_config(), conc)
            entries = list(iter_jsonl(out / pipeline.TRAJ_FILE))
            print(f"trajectories: {n} processed, {len(entries)} total")
            failed += sum(e["status"] == "failed" for e in entries)
        elif stage == "filter":
            judge = cfg.judge_client()
            kept, total = pipeline.stage_filter(out, LLMJudge(judge) if judge is not None else None)
            print(f"filter: kept {kept} of {total}")
        else:
            res = pipeline.stage_export(out, not args.text_only, cfg.render_config(), args.split)
            print(f"export: {res.n_records} records -> {res.path}")
            if res.n_rendered_skipped:
                print(f"export: {res.n_rendered_skipped} rendered variant(s) skipped")
                failed += res.n_rendered_skipped
    return EXIT_ITEMS if failed else EXIT_OK


def cmd_render(args, cfg: GlobalConfig) -> int:
    from foldsearch.vfold.render import render_text

    text = args.text_file.read_text(encoding="utf-8")
    r = render_text(text, cfg.render_config(), patch_px=cfg["fold"]["visual_patch_px"], estimator=cfg.estimator())
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for i, page in enumerate(r.pages, 1):
        (args.out_dir / f"page_{i:03d}.png").write_bytes(page.data)
    print(
        f"{len(r.pages)} page(s) -> {args.out_dir}; visual tokens {r.visual_token_estimate}, "
        f"text tokens {r.source_text_token_estimate}" + (" (truncated)" if r.truncated else "")
    )
    return EXIT_OK


def _load_for_stats(path: Path):
    from foldsearch.history import trajectory_from_record
    from foldsearch.jsonl import iter_jsonl

    out = []
    for entry in iter_jsonl(path):
        if "record" in entry:  # eval progress log
            if "trajectory" in entry:
                traj = trajectory_from_record(entry["trajectory"], path.parent)
                out.append((traj, entry["record"]["ground_truth"], entry["record"]["s_acc"]))
        elif "trajectory" in entry:  # curation log
            traj = trajectory_from_record(entry["trajectory"], path.parent)
            out.append((traj, traj.metadata.get("ground_truth"), None))
        else:
            traj = trajectory_from_record(entry, path.parent)
            out.append((traj, traj.metadata.get("ground_truth"), None))
    return out


def cmd_stats(args, cfg: GlobalConfig) -> int:
    from foldsearch.scoring.analytics import history_hit_rate, length_bucket_accuracy, usage_statistics

    items = _load_for_stats(args.path)
    usage = usage_statistics([t for t, _, _ in items])
    stats = {"usage": usage.to_dict()}
    scored = [(t, gt, acc) for t, gt, acc in items if acc is not None]
    if scored:
        est = cfg.estimator()
        from foldsearch.history import history_token_length

        b = length_bucket_accuracy(
            [(history_token_length(t.history, est), acc) for t, _, acc in scored],
            cfg["eval"]["length_threshold_tokens"],
        )
        stats["length_buckets"] = b.__dict__
        failures = [(t, gt) for t, gt, acc in scored if acc == 0]
        stats["history_hit_rate"] = history_hit_rate([t for t, _ in failures], [gt for _, gt in failures])
    print(json.dumps(stats, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_compare(args, cfg: GlobalConfig) -> int:
    from foldsearch.scoring.analytics import response_length_delta

    a = json.loads(args.baseline.read_text(encoding="utf-8"))
    b = json.loads(args.folded.read_text(encoding="utf-8"))
    delta = response_length_delta(a, b)
    print(f"avg response length: {a['avg_context_tokens']:.1f} -> {b['avg_context_tokens']:.1f} ({delta:.1f}% reduction)")
    if a.get("accuracy") is not None and b.get("accuracy") is not None:
        print(f"accuracy: {100 * a['accuracy']:.1f}% -> {100 * b['accuracy']:.1f}%")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "eval": cmd_eval,
    "curate": cmd_curate,
    "render": cmd_render,
    "stats": cmd_stats,
    "compare": cmd_compare,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = resolve_config(args)
        if args.print_config:
            sys.stdout.write(cfg.dump())
            return EXIT_OK
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_CONFIG
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("interrupted; finished items are saved and the run can be resumed", file=sys.stderr)
        return EXIT_INTERRUPTED
    except (FoldSearchError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ITEMS


if __name__ == "__main__":
    sys.exit(main())
