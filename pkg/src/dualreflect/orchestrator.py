"""The round state machine.

One run is a bounded loop of rounds: plan with long-term memory, execute
each node in plan order (selecting a tool, executing it, retrying on failure
with short-term memory), then synthesize an answer. An accepted answer ends
the run; a rejected answer or an unrecoverable execution failure stores the
round in long-term memory and replans. Every transition is emitted to an
ordered event trace which, under a scripted backend, is bit-deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from .agents import AgentRunner, ParseExhausted
from .backend import BackendError, ChatBackend, TokenTotals
from .memory import LongTermMemory, LTMRecord, ShortTermMemory, STMEntry
from .model import (
    ExecutionStatus,
    FinalAnswer,
    NodeStatus,
    Plan,
    RunConfig,
    TaskSpec,
    TrajectoryStep,
    node_transition,
    validate_task,
)
from .promptkit import PromptTemplate, TemplateName, describe_result
from .sandbox import SandboxRegistry

__all__ = [
    "RunStatus",
    "RunState",
    "RunResult",
    "TraceRecorder",
    "TaskRun",
    "run_task",
    "events_to_jsonl",
    "fold_event_tokens",
]

#: Every kind the trace may contain, in no particular order.
EVENT_KINDS = (
    "round_start",
    "agent_call",
    "agent_output",
    "execute",
    "stm_record",
    "stm_reset",
    "ltm_append",
    "ltm_reset",
    "round_end",
    "run_end",
)


class RunStatus(str, Enum):
    RUNNING = "running"
    ACCEPTED = "accepted"
    EXHAUSTED = "exhausted"
    ABORTED = "aborted"


class TraceRecorder:
    """Ordered event log; each event carries task id, round, and a sequence
    number. Serialization sorts keys so identical runs are identical bytes."""

    def __init__(self, task_id: str):
        self.task_id = task_id
        self.round = 0
        self.events: list[dict[str, Any]] = []
        self._seq = 0

    def emit(self, kind: str, **fields: Any) -> None:
        event: dict[str, Any] = {"kind": kind, "round": self.round, "seq": self._seq, "task": self.task_id}
        event.update(fields)
        self._seq += 1
        self.events.append(event)


def events_to_jsonl(events: list[dict[str, Any]] | tuple[dict[str, Any], ...]) -> str:
    return "".join(json.dumps(e, sort_keys=True, ensure_ascii=False) + "\n" for e in events)


def fold_event_tokens(events: list[dict[str, Any]] | tuple[dict[str, Any], ...]) -> TokenTotals:
    """Exact token totals recomputed from agent_call events."""
    prompt = completion = calls = 0
    for event in events:
        if event["kind"] == "agent_call":
            prompt += event["prompt_tokens"]
            completion += event["completion_tokens"]
            calls += 1
    return TokenTotals(prompt, completion, calls)


@dataclass
class RunState:
    """Mutable bookkeeping for one run; confined to a single thread."""

    task: TaskSpec
    ltm: LongTermMemory
    stm: ShortTermMemory
    round: int = 0
    status: RunStatus = RunStatus.RUNNING
    current_plan: Plan | None = None
    trajectory: list[TrajectoryStep] = field(default_factory=list)


@dataclass(frozen=True)
class RunResult:
    """Terminal report of one run.

    An exhausted run still carries the best answer seen (highest answer
    score, ties to the earliest round); ``final_round`` is 0 when no round
    produced an answer at all.
    """

    status: RunStatus
    final_answer: FinalAnswer | None
    final_round: int
    rounds_used: int
    token_totals: TokenTotals
    events: tuple[dict[str, Any], ...]
    error: str | None = None

    def trace_jsonl(self) -> str:
        return events_to_jsonl(self.events)


class TaskRun:
    """One task's journey through the round loop.

    Strictly sequential within the run; safe to run many instances
    concurrently as long as each owns its backend (scripted) and session.
    """

    def __init__(
        self,
        task: TaskSpec,
        config: RunConfig,
        backend: ChatBackend,
        registry: SandboxRegistry,
        templates: Mapping[TemplateName, PromptTemplate] | None = None,
    ):
        report = validate_task(task)
        if not report.ok:
            raise ValueError("task failed validation: " + "; ".join(report.violations))
        self.config = config
        self.trace = TraceRecorder(task.id)
        self.session = registry.session()
        self.state = RunState(task=task, ltm=LongTermMemory(task.id), stm=ShortTermMemory())
        self.runner = AgentRunner(task, backend, config, templates, emit=self.trace.emit)
        self._best: tuple[FinalAnswer, int] | None = None
        self._error: str | None = None

    def run(self) -> RunResult:
        state = self.state
        try:
            while state.status is RunStatus.RUNNING:
                if state.round >= self.config.max_rounds:
                    state.status = RunStatus.EXHAUSTED
                    break
                self.run_round()
        except (BackendError, ParseExhausted) as exc:
            state.status = RunStatus.ABORTED
            self._error = str(exc)
        return self._finish()

    def run_round(self) -> str:
        """One plan -> execute -> answer cycle; returns the round outcome
        (``accepted``, ``rejected``, or ``execution_failure``)."""
        state = self.state
        config = self.config
        if state.status is not RunStatus.RUNNING:
            raise RuntimeError(f"run_round requires a running state, not {state.status.value}")
        state.round += 1
        self.trace.round = state.round
        self.trace.emit("round_start")

        plan_out = self.runner.plan(state.ltm)
        plan = plan_out.accepted
        state.current_plan = plan
        state.trajectory = []
        related: list[tuple[str, str]] = []
        nodes = list(plan.nodes)
        failure: str | None = None

        if not nodes:
            failure = "planner produced an empty plan; nothing to execute"
        for i, node in enumerate(nodes):
            cleared = state.stm.bind(node.id)
            if cleared:
                self.trace.emit("stm_reset", node=node.id, reason="rebind", cleared=cleared)
            succeeded = False
            result = None
            for attempt in range(1, config.subtask_retry_cap + 1):
                tool_out = self.runner.select_tool(node, related, state.stm)
                call = tool_out.accepted
                result = self.session.execute(call)
                self.trace.emit(
                    "execute",
                    node=node.id,
                    attempt=attempt,
                    function=call.function,
                    parameters=call.parameters,
                    status=result.status.value,
                    payload=result.payload,
                    score=call.reflection.score,
                    forced=tool_out.forced,
                    divergence=call.function != node.function,
                )
                state.trajectory.append(TrajectoryStep(node.id, call, result, attempt))
                if result.status is ExecutionStatus.OK:
                    nodes[i] = node_transition(node, NodeStatus.SUCCEEDED)
                    related.append((node.id, result.payload))
                    cleared = state.stm.reset()
                    self.trace.emit("stm_reset", node=node.id, reason="subtask_success", cleared=cleared)
                    succeeded = True
                    break
                entry = STMEntry(
                    step=len(state.stm.entries) + 1,
                    subtask=node.subtask,
                    action=call.function,
                    action_input=call.parameters,
                    observation=describe_result(result),
                    reflection=call.reflection.evaluation,
                )
                state.stm.record(entry)
                self.trace.emit(
                    "stm_record", node=node.id, step=entry.step, action=entry.action, observation=entry.observation
                )
            if not succeeded:
                nodes[i] = node_transition(node, NodeStatus.FAILED)
                failure = (
                    f"subtask {node.id} failed after {config.subtask_retry_cap} attempts; "
                    f"last error: {describe_result(result)}"
                )
                break

        plan = Plan(nodes=tuple(nodes), reflection=plan.reflection)
        state.current_plan = plan
        succeeded_count = sum(1 for n in plan.nodes if n.status is NodeStatus.SUCCEEDED)
        base_fields = {
            "plan_score": plan.reflection.score,
            "plan_forced": plan_out.forced,
            "plan_attempts": plan_out.attempts,
            "nodes_total": len(plan.nodes),
            "nodes_succeeded": succeeded_count,
        }

        if failure is not None:
            self._store_round(plan, failure)
            self.trace.emit("round_end", outcome="execution_failure", **base_fields)
            return "execution_failure"

        answer_out = self.runner.answer(plan, state.trajectory)
        answer = answer_out.accepted
        if self._best is None or answer.reflection.score > self._best[0].reflection.score:
            self._best = (answer, state.round)
        if answer_out.passed:
            state.status = RunStatus.ACCEPTED
            self.trace.emit(
                "round_end", outcome="accepted", answer_score=answer.reflection.score, **base_fields
            )
            return "accepted"
        self._store_round(
            plan,
            f"Answer (score {answer.reflection.score}/10): {answer.text}\n"
            f"Evaluation: {answer.reflection.evaluation}",
        )
        self.trace.emit("round_end", outcome="rejected", answer_score=answer.reflection.score, **base_fields)
        return "rejected"

    def _store_round(self, plan: Plan, inter_reflection: str) -> None:
        state = self.state
        record = LTMRecord(
            round_index=state.round,
            plan=plan,
            trajectory=tuple(state.trajectory),
            inter_reflection=inter_reflection,
        )
        state.ltm.append(record)
        self.trace.emit("ltm_append", round_index=record.round_index, records=len(state.ltm.records))

    def _finish(self) -> RunResult:
        state = self.state
        cleared = state.stm.reset()
        self.trace.emit("stm_reset", node=state.stm.node_id, reason="run_end", cleared=cleared)
        self.trace.emit("ltm_reset", reason=state.status.value, cleared=state.ltm.reset())

        answer, final_round = (None, 0) if self._best is None else self._best
        totals = fold_event_tokens(self.trace.events)
        end_fields: dict[str, Any] = {
            "status": state.status.value,
            "rounds_used": state.round,
            "final_round": final_round,
            "prompt_tokens": totals.prompt_tokens,
            "completion_tokens": totals.completion_tokens,
            "backend_calls": totals.calls,
        }
        if answer is not None:
            end_fields["answer_score"] = answer.reflection.score
        if self._error is not None:
            end_fields["error"] = self._error
        self.trace.emit("run_end", **end_fields)
        return RunResult(
            status=state.status,
            final_answer=answer,
            final_round=final_round,
            rounds_used=state.round,
            token_totals=totals,
            events=tuple(self.trace.events),
            error=self._error,
        )


def run_task(
    task: TaskSpec,
    config: RunConfig,
    backend: ChatBackend,
    registry: SandboxRegistry,
    templates: Mapping[TemplateName, PromptTemplate] | None = None,
    trace_path: Path | str | None = None,
) -> RunResult:
    """Run one task to a terminal status.

    Backend and parse failures abort the run (partial trace preserved,
    memories reset) rather than raising. Deterministic under a scripted
    backend: same task, config, and script give byte-identical traces.
    """
    result = TaskRun(task, config, backend, registry, templates).run()
    if trace_path is not None:
        Path(trace_path).write_text(result.trace_jsonl(), encoding="utf-8")
    return result
