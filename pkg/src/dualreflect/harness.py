"""Suite evaluation.

Loads task bundles (task + sandbox + backend script), runs each through the
round loop ``repeats`` times, decides pass/fail with the task's success
predicate, and aggregates pass rates, exact token totals, and per-agent
reflection-score histograms. Reports land as JSON, a plain-text table, and
CSVs for external plotting.
"""

from __future__ import annotations

import json
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable

from .backend import ChatBackend, ScriptedBackend, load_script
from .model import PredicateKind, RunConfig, TaskSpec, task_from_json, validate_task
from .orchestrator import RunResult, RunStatus, run_task
from .sandbox import SandboxRegistry, SchemaError, load_registry

__all__ = [
    "SCHEMA_VERSION",
    "SuiteError",
    "TaskBundle",
    "RunRecord",
    "SuiteResult",
    "load_bundle",
    "load_suite",
    "check_success",
    "evaluate",
    "report",
    "suite_result_to_dict",
    "suite_result_from_dict",
]

SCHEMA_VERSION = 1

TASK_FILE = "task.json"
SANDBOX_FILE = "sandbox.json"
SCRIPT_FILE = "script.jsonl"

AGENTS = ("planner", "tool", "answer")


class SuiteError(Exception):
    """A suite or bundle cannot be loaded or does not validate."""


@dataclass(frozen=True)
class TaskBundle:
    """One runnable task: its spec, sandbox registry, and optional script."""

    task: TaskSpec
    registry: SandboxRegistry
    script_path: Path | None
    root: Path

    def make_backend(self) -> ScriptedBackend:
        """A fresh scripted backend; each run must own its own instance."""
        if self.script_path is None:
            raise SuiteError(f"{self.root}: bundle has no {SCRIPT_FILE}, cannot build a scripted backend")
        return load_script(self.script_path)


def load_bundle(path: Path | str) -> TaskBundle:
    root = Path(path)
    task_path = root / TASK_FILE
    sandbox_path = root / SANDBOX_FILE
    if not task_path.is_file():
        raise SuiteError(f"{root}: missing {TASK_FILE}")
    if not sandbox_path.is_file():
        raise SuiteError(f"{root}: missing {SANDBOX_FILE}")
    try:
        task = task_from_json(task_path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise SuiteError(f"{task_path}: {exc}") from None
    report_ = validate_task(task)
    if not report_.ok:
        raise SuiteError(f"{task_path}: " + "; ".join(report_.violations))
    try:
        registry = load_registry(sandbox_path)
    except SchemaError as exc:
        raise SuiteError(f"{sandbox_path}: {exc}") from None
    script_path = root / SCRIPT_FILE
    return TaskBundle(
        task=task,
        registry=registry,
        script_path=script_path if script_path.is_file() else None,
        root=root,
    )


def load_suite(path: Path | str, require_scripts: bool = True) -> list[TaskBundle]:
    """Load every bundle under a suite directory, sorted by task id."""
    root = Path(path)
    if not root.is_dir():
        raise SuiteError(f"suite directory not found: {root}")
    bundles = [load_bundle(child) for child in sorted(root.iterdir()) if (child / TASK_FILE).is_file()]
    ids = [b.task.id for b in bundles]
    if len(set(ids)) != len(ids):
        raise SuiteError(f"duplicate task ids in suite: {sorted(ids)}")
    if require_scripts:
        missing = [str(b.root) for b in bundles if b.script_path is None]
        if missing:
            raise SuiteError("scripted suite is missing backend scripts: " + ", ".join(missing))
    return sorted(bundles, key=lambda b: b.task.id)


def check_success(task: TaskSpec, result: RunResult) -> bool:
    """Apply the task's success predicate to a finished run."""
    pred = task.success_check
    if pred.kind is PredicateKind.ANSWER_CONTAINS:
        return result.final_answer is not None and all(s in result.final_answer.text for s in pred.payload)
    if pred.kind is PredicateKind.ALL_NODES_SUCCEEDED:
        return result.final_round > 0
    executed = [
        (e["function"], e["parameters"])
        for e in result.events
        if e["kind"] == "execute" and e["status"] == "ok" and e["round"] == result.final_round
    ]
    for expected in pred.payload:
        for i, (function, parameters) in enumerate(executed):
            if function == expected.function and (expected.parameters is None or parameters == expected.parameters):
                executed.pop(i)
                break
        else:
            return False
    return not executed


@dataclass(frozen=True)
class RunRecord:
    """Summary of one (task, repeat) cell."""

    task_id: str
    repeat: int
    status: str
    passed: bool
    rounds_used: int
    final_round: int
    answer_score: int | None
    prompt_tokens: int
    completion_tokens: int
    backend_calls: int


@dataclass(frozen=True)
class SuiteResult:
    """Aggregates over a whole suite evaluation.

    ``pass_rate`` is the mean of per-repeat pass percentages (population
    stdev in ``pass_rate_stdev``); both are None for an empty suite. Token
    figures are exact sums over the runs' trace events.
    """

    schema_version: int
    repeats: int
    task_ids: tuple[str, ...]
    runs: tuple[RunRecord, ...]
    pass_rate: float | None
    pass_rate_per_repeat: tuple[float, ...]
    pass_rate_stdev: float | None
    tokens_total: int
    tokens_mean_per_run: float | None
    histograms: dict[str, tuple[int, ...]]


BackendFactory = Callable[[TaskBundle], ChatBackend]


def _run_cell(bundle: TaskBundle, repeat: int, config: RunConfig, factory: BackendFactory) -> tuple[RunRecord, RunResult]:
    backend = factory(bundle)
    result = run_task(bundle.task, config, backend, bundle.registry)
    passed = result.status is not RunStatus.ABORTED and check_success(bundle.task, result)
    record = RunRecord(
        task_id=bundle.task.id,
        repeat=repeat,
        status=result.status.value,
        passed=passed,
        rounds_used=result.rounds_used,
        final_round=result.final_round,
        answer_score=None if result.final_answer is None else result.final_answer.reflection.score,
        prompt_tokens=result.token_totals.prompt_tokens,
        completion_tokens=result.token_totals.completion_tokens,
        backend_calls=result.token_totals.calls,
    )
    return record, result


def evaluate(
    suite_dir: Path | str,
    config: RunConfig,
    repeats: int = 1,
    jobs: int = 1,
    backend_factory: BackendFactory | None = None,
) -> SuiteResult:
    """Run every task in the suite ``repeats`` times.

    By default each run gets its own scripted backend from the bundle's
    script; pass ``backend_factory`` to evaluate against something else
    (e.g. a live endpoint). A task that aborts is recorded as a fail and
    never halts the suite. Aggregation is order-independent, so ``jobs`` > 1
    changes nothing but wall time.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    bundles = load_suite(suite_dir, require_scripts=backend_factory is None)
    factory = backend_factory if backend_factory is not None else (lambda bundle: bundle.make_backend())
    cells = [(bundle, repeat) for repeat in range(1, repeats + 1) for bundle in bundles]
    if jobs > 1 and cells:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(lambda cell: _run_cell(cell[0], cell[1], config, factory), cells))
    else:
        outcomes = [_run_cell(bundle, repeat, config, factory) for bundle, repeat in cells]
    outcomes.sort(key=lambda pair: (pair[0].repeat, pair[0].task_id))

    records = tuple(record for record, _ in outcomes)
    histograms = {agent: [0] * 10 for agent in AGENTS}
    for _, result in outcomes:
        for event in result.events:
            if event["kind"] == "agent_output":
                histograms[event["agent"]][event["score"] - 1] += 1

    per_repeat: list[float] = []
    n_tasks = len(bundles)
    for repeat in range(1, repeats + 1):
        passes = sum(1 for r in records if r.repeat == repeat and r.passed)
        per_repeat.append(100.0 * passes / n_tasks if n_tasks else 0.0)
    tokens_total = sum(r.prompt_tokens + r.completion_tokens for r in records)
    return SuiteResult(
        schema_version=SCHEMA_VERSION,
        repeats=repeats,
        task_ids=tuple(b.task.id for b in bundles),
        runs=records,
        pass_rate=statistics.fmean(per_repeat) if n_tasks else None,
        pass_rate_per_repeat=tuple(per_repeat) if n_tasks else (),
        pass_rate_stdev=statistics.pstdev(per_repeat) if n_tasks else None,
        tokens_total=tokens_total,
        tokens_mean_per_run=tokens_total / len(records) if records else None,
        histograms={agent: tuple(counts) for agent, counts in histograms.items()},
    )


# --- Serialization and reports --------------------------------------------------


def suite_result_to_dict(result: SuiteResult) -> dict[str, Any]:
    return {
        "schema_version": result.schema_version,
        "repeats": result.repeats,
        "task_ids": list(result.task_ids),
        "runs": [asdict(r) for r in result.runs],
        "pass_rate": result.pass_rate,
        "pass_rate_per_repeat": list(result.pass_rate_per_repeat),
        "pass_rate_stdev": result.pass_rate_stdev,
        "tokens_total": result.tokens_total,
        "tokens_mean_per_run": result.tokens_mean_per_run,
        "histograms": {agent: list(counts) for agent, counts in result.histograms.items()},
    }


def suite_result_from_dict(data: dict[str, Any]) -> SuiteResult:
    return SuiteResult(
        schema_version=int(data["schema_version"]),
        repeats=int(data["repeats"]),
        task_ids=tuple(data["task_ids"]),
        runs=tuple(RunRecord(**r) for r in data["runs"]),
        pass_rate=data["pass_rate"],
        pass_rate_per_repeat=tuple(data["pass_rate_per_repeat"]),
        pass_rate_stdev=data["pass_rate_stdev"],
        tokens_total=int(data["tokens_total"]),
        tokens_mean_per_run=data["tokens_mean_per_run"],
        histograms={agent: tuple(counts) for agent, counts in data["histograms"].items()},
    )


def _fmt(value: float | None, suffix: str = "") -> str:
    return "n/a" if value is None else f"{value:.1f}{suffix}"


def _text_table(result: SuiteResult) -> str:
    header = f"{'task':<24} {'rep':>3} {'status':<10} {'pass':<5} {'rounds':>6} {'tokens':>8}"
    lines = [header, "-" * len(header)]
    for r in result.runs:
        lines.append(
            f"{r.task_id:<24} {r.repeat:>3} {r.status:<10} {str(r.passed).lower():<5} "
            f"{r.rounds_used:>6} {r.prompt_tokens + r.completion_tokens:>8}"
        )
    lines.append("")
    lines.append(f"tasks: {len(result.task_ids)}  repeats: {result.repeats}")
    lines.append(f"pass rate: {_fmt(result.pass_rate, '%')} (stdev {_fmt(result.pass_rate_stdev)})")
    lines.append(f"tokens total: {result.tokens_total}  mean per run: {_fmt(result.tokens_mean_per_run)}")
    return "\n".join(lines) + "\n"


def report(result: SuiteResult, out_dir: Path | str) -> dict[str, Path]:
    """Write report.json, report.txt, histograms.csv, and runs.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / "report.json",
        "text": out / "report.txt",
        "histograms": out / "histograms.csv",
        "runs": out / "runs.csv",
    }
    paths["json"].write_text(
        json.dumps(suite_result_to_dict(result), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    paths["text"].write_text(_text_table(result), encoding="utf-8")

    hist_lines = ["agent,score,count"]
    for agent in AGENTS:
        for score, count in enumerate(result.histograms.get(agent, (0,) * 10), 1):
            hist_lines.append(f"{agent},{score},{count}")
    paths["histograms"].write_text("\n".join(hist_lines) + "\n", encoding="utf-8")

    run_lines = ["task_id,repeat,status,passed,rounds_used,final_round,answer_score,prompt_tokens,completion_tokens,backend_calls"]
    for r in result.runs:
        score = "" if r.answer_score is None else r.answer_score
        run_lines.append(
            f"{r.task_id},{r.repeat},{r.status},{str(r.passed).lower()},{r.rounds_used},"
            f"{r.final_round},{score},{r.prompt_tokens},{r.completion_tokens},{r.backend_calls}"
        )
    paths["runs"].write_text("\n".join(run_lines) + "\n", encoding="utf-8")
    return paths
