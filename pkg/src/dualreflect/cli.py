"""Command-line front end.

Subcommands: ``run`` (one task bundle), ``eval`` (a suite), ``replay``
(re-drive a task from a recorded backend trace), and ``validate`` (schema
check a task or suite). Exit codes: 0 on success, 1 when any run aborts /
validation fails / a replay diverges, 2 on usage errors.

Config precedence: built-in defaults, then the ``--config`` JSON file, then
explicit flags. Environment variables configure backend auth only.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from .backend import ChatBackend, HttpBackend, RecordingBackend, ReplayBackend
from .harness import SuiteError, check_success, evaluate, load_bundle, load_suite, report
from .model import RunConfig, Thresholds, task_from_json, validate_task
from .orchestrator import RunResult, RunStatus, run_task

__all__ = ["main", "build_parser", "resolve_config"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualreflect",
        description="Reflection-gated multi-agent tool workflow runner and evaluation harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, help="JSON config file mirroring the run-config fields")
        p.add_argument("--max-rounds", type=int, help="round cap override")
        p.add_argument("--theta-p", type=int, help="planner gate threshold override")
        p.add_argument("--theta-t", type=int, help="tool gate threshold override")
        p.add_argument("--theta-a", type=int, help="answer gate threshold override")

    def add_backend_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--backend", choices=("scripted", "http"), default="scripted")
        p.add_argument("--model", default="default", help="model name for the http backend")
        p.add_argument("--record", type=Path, metavar="PATH", help="record backend exchanges to a JSONL trace")

    p_run = sub.add_parser("run", help="run a single task bundle")
    p_run.add_argument("--task", type=Path, required=True, help="bundle directory (task.json + sandbox.json [+ script.jsonl])")
    p_run.add_argument("--trace-out", type=Path, help="write the event trace to this JSONL file")
    add_config_flags(p_run)
    add_backend_flags(p_run)

    p_eval = sub.add_parser("eval", help="evaluate a suite directory")
    p_eval.add_argument("--suite", type=Path, required=True)
    p_eval.add_argument("--repeats", type=int, default=1)
    p_eval.add_argument("--jobs", type=int, default=1)
    p_eval.add_argument("--report-dir", type=Path, default=Path("report"))
    p_eval.add_argument("--backend", choices=("scripted", "http"), default="scripted")
    p_eval.add_argument("--model", default="default", help="model name for the http backend")
    add_config_flags(p_eval)

    p_replay = sub.add_parser("replay", help="re-drive a task from a recorded backend trace")
    p_replay.add_argument("--task", type=Path, required=True)
    p_replay.add_argument("--trace", type=Path, required=True, help="recorded backend trace (JSONL)")
    p_replay.add_argument("--trace-out", type=Path)
    add_config_flags(p_replay)

    p_validate = sub.add_parser("validate", help="schema-check a task bundle or a suite")
    group = p_validate.add_mutually_exclusive_group(required=True)
    group.add_argument("--task", type=Path)
    group.add_argument("--suite", type=Path)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """defaults < config file < explicit flags."""
    values: dict[str, Any] = {
        "theta_p": 9,
        "theta_t": 8,
        "theta_a": 8,
        "max_rounds": 5,
        "revision_cap": 3,
        "subtask_retry_cap": 3,
        "parse_retry_cap": 2,
    }
    config_path = getattr(args, "config", None)
    if config_path is not None:
        data = json.loads(Path(config_path).read_text(encoding="utf-8"))
        thresholds = data.get("thresholds", {})
        for key in ("theta_p", "theta_t", "theta_a"):
            if key in thresholds:
                values[key] = thresholds[key]
        for key in ("max_rounds", "revision_cap", "subtask_retry_cap", "parse_retry_cap"):
            if key in data:
                values[key] = data[key]
    for key in ("max_rounds", "theta_p", "theta_t", "theta_a"):
        override = getattr(args, key, None)
        if override is not None:
            values[key] = override
    return RunConfig(
        thresholds=Thresholds(theta_p=values["theta_p"], theta_t=values["theta_t"], theta_a=values["theta_a"]),
        max_rounds=values["max_rounds"],
        revision_cap=values["revision_cap"],
        subtask_retry_cap=values["subtask_retry_cap"],
        parse_retry_cap=values["parse_retry_cap"],
    )


def _print_result(task_id: str, result: RunResult, passed: bool | None) -> None:
    totals = result.token_totals
    print(f"task {task_id}: {result.status.value} in {result.rounds_used} round(s)")
    if result.final_answer is not None:
        print(f"  answer (score {result.final_answer.reflection.score}/10, round {result.final_round}): "
              f"{result.final_answer.text}")
    if result.error is not None:
        print(f"  error: {result.error}")
    if passed is not None:
        print(f"  success predicate: {'pass' if passed else 'fail'}")
    print(f"  tokens: prompt {totals.prompt_tokens}, completion {totals.completion_tokens}, calls {totals.calls}")


def _cmd_run(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.task)
    if args.backend == "http":
        backend: ChatBackend = HttpBackend(model=args.model)
    else:
        backend = bundle.make_backend()
    if args.record is not None:
        backend = RecordingBackend(backend, args.record)
    config = resolve_config(args)
    result = run_task(bundle.task, config, backend, bundle.registry, trace_path=args.trace_out)
    passed = result.status is not RunStatus.ABORTED and check_success(bundle.task, result)
    _print_result(bundle.task.id, result, passed)
    return 1 if result.status is RunStatus.ABORTED else 0


def _cmd_eval(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    factory = None
    if args.backend == "http":
        shared = HttpBackend(model=args.model)  # safe for concurrent runs
        factory = lambda bundle: shared
    result = evaluate(args.suite, config, repeats=args.repeats, jobs=args.jobs, backend_factory=factory)
    paths = report(result, args.report_dir)
    print((paths["text"]).read_text(encoding="utf-8"), end="")
    print(f"report written to {args.report_dir}")
    return 1 if any(r.status == RunStatus.ABORTED.value for r in result.runs) else 0


def _cmd_replay(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.task)
    backend = ReplayBackend(args.trace)
    config = resolve_config(args)
    result = run_task(bundle.task, config, backend, bundle.registry, trace_path=args.trace_out)
    passed = result.status is not RunStatus.ABORTED and check_success(bundle.task, result)
    _print_result(bundle.task.id, result, passed)
    return 1 if result.status is RunStatus.ABORTED else 0


def _cmd_validate(args: argparse.Namespace) -> int:
    problems: list[str] = []
    if args.task is not None:
        task_file = Path(args.task) / "task.json" if Path(args.task).is_dir() else Path(args.task)
        try:
            task = task_from_json(task_file.read_text(encoding="utf-8"))
            problems = [f"{task_file}: {v}" for v in validate_task(task).violations]
            if not problems and Path(args.task).is_dir():
                load_bundle(args.task)
        except (OSError, ValueError, SuiteError) as exc:
            problems = [str(exc)]
    else:
        try:
            bundles = load_suite(args.suite, require_scripts=False)
            print(f"suite ok: {len(bundles)} task(s)")
        except SuiteError as exc:
            problems = [str(exc)]
    if problems:
        for problem in problems:
            print(problem, file=sys.stderr)
        return 1
    print("valid")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "replay":
            return _cmd_replay(args)
        return _cmd_validate(args)
    except (SuiteError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
