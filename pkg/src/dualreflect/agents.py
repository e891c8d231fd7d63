"""The three reflection-gated agents.

Each invocation renders its prompts, calls the backend, validates the JSON
reply, and gates its own output on the reflection score. Planner and tool
agents revise below-threshold output in a bounded loop (re-prompting with
the rejected attempt as context); the answer agent never revises locally —
a failed answer gate is the orchestrator's signal to store the round in
long-term memory and start over.

Agents are stateless over their inputs and never touch memory stores;
memory writes happen only in the orchestrator.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Callable, Generic, Mapping, Sequence, TypeVar

from .backend import ChatBackend, ChatRequest
from .memory import LongTermMemory, ShortTermMemory
from .model import FinalAnswer, Plan, PlanNode, RunConfig, TaskSpec, ToolCall
from .promptkit import (
    MalformedJson,
    NoJsonFound,
    OutputKind,
    PromptTemplate,
    SchemaError,
    TemplateName,
    default_templates,
    extract_json,
    plan_to_output_dict,
    render,
    render_related_outputs,
    render_tool_list,
    render_trajectory,
    tool_call_to_output_dict,
    validate_output,
)

__all__ = ["ParseExhausted", "GateOutcome", "gate", "AgentRunner", "prompt_hash"]

T = TypeVar("T", Plan, ToolCall, FinalAnswer)

EmitFn = Callable[..., None]


class ParseExhausted(Exception):
    """Every parse try of one attempt produced unusable output."""

    def __init__(self, agent: str, tries: int):
        super().__init__(f"{agent} agent produced {tries} unusable outputs in a row")
        self.agent = agent
        self.tries = tries


@dataclass(frozen=True)
class GateOutcome(Generic[T]):
    """What came out of a gated invocation.

    ``passed`` is the gate verdict for the accepted value; ``forced`` is True
    when the revision cap ran out and the best-scoring attempt was taken
    anyway. For planner/tool outcomes forced=False implies passed=True; the
    answer agent returns failed outcomes un-forced (it does not revise).
    """

    accepted: T
    attempts: int
    forced: bool
    passed: bool


def gate(score: int, threshold: int) -> bool:
    """Uniform acceptance test: the output proceeds iff score >= threshold."""
    for name, value in (("score", score), ("threshold", threshold)):
        if isinstance(value, bool) or not isinstance(value, int) or not 1 <= value <= 10:
            raise ValueError(f"{name} must be an integer in [1, 10], got {value!r}")
    return score >= threshold


def prompt_hash(system: str, user: str) -> str:
    return hashlib.sha256((system + "\x00" + user).encode("utf-8")).hexdigest()


_CORRECTION = (
    "Correction: the previous reply could not be used ({reason}); "
    "respond again with exactly one JSON object in the required output format."
)

_REVISION_HEADER = "\n\nPrevious Rejected Attempts:\n"
_REVISION_FOOTER = (
    "\nThe attempts above scored below the required quality threshold. "
    "Revise your output to address the weaknesses identified in their intra-reflections."
)


def _noop_emit(kind: str, **fields: Any) -> None:
    return None


class AgentRunner:
    """Runs the planner, tool, and answer agents for one task.

    ``emit`` receives trace events: ``agent_call`` per backend call and
    ``agent_output`` per successfully parsed attempt (exactly one per
    intra-reflection, so score histograms can fold over them).
    """

    def __init__(
        self,
        task: TaskSpec,
        backend: ChatBackend,
        config: RunConfig,
        templates: Mapping[TemplateName, PromptTemplate] | None = None,
        emit: EmitFn | None = None,
    ):
        self.task = task
        self.backend = backend
        self.config = config
        self.templates = templates if templates is not None else default_templates()
        self.emit = emit if emit is not None else _noop_emit
        self._tool_names = frozenset(t.name for t in task.tools)

    # -- the three agents ----------------------------------------------------

    def plan(self, ltm: LongTermMemory) -> GateOutcome[Plan]:
        """Decompose the task, gated on theta_p, with long-term memory in the
        prompt. A node naming an unknown function is a schema failure and
        consumes a parse retry."""
        base_user = render(
            self.templates[TemplateName.PLANNER_USER],
            {
                "task_description": self.task.description,
                "long_memory": ltm.render(self.templates),
                "functions": render_tool_list(self.task.tools),
            },
        )

        def validate(value: Any) -> Plan:
            plan = validate_output(value, OutputKind.PLANNER)
            unknown = [n.function for n in plan.nodes if n.function not in self._tool_names]
            if unknown:
                raise SchemaError([f"nodes: unknown function {name!r}" for name in unknown])
            return plan

        return self._gated(
            agent="planner",
            system=self.templates[TemplateName.PLANNER_SYSTEM].body,
            base_user=base_user,
            validate=validate,
            threshold=self.config.thresholds.theta_p,
            quote=plan_to_output_dict,
        )

    def select_tool(
        self,
        node: PlanNode,
        related_outputs: Sequence[tuple[str, str]],
        stm: ShortTermMemory,
    ) -> GateOutcome[ToolCall]:
        """Pick a function and arguments for one subtask, gated on theta_t.

        The agent may pick a different function than the node was bound to;
        the divergence is flagged in the trace. Short-term memory fills the
        failed-trajectories slot.
        """
        base_user = render(
            self.templates[TemplateName.TOOL_USER],
            {
                "subtask": node.subtask,
                "related_outputs": render_related_outputs(related_outputs),
                "short_memory": stm.render(self.templates),
            },
        )

        def validate(value: Any) -> ToolCall:
            call = validate_output(value, OutputKind.TOOL)
            if call.function not in self._tool_names:
                raise SchemaError([f"function: unknown function {call.function!r}"])
            return call

        return self._gated(
            agent="tool",
            system=self.templates[TemplateName.TOOL_SYSTEM].body,
            base_user=base_user,
            validate=validate,
            threshold=self.config.thresholds.theta_t,
            quote=tool_call_to_output_dict,
            node_function=node.function,
        )

    def answer(self, plan: Plan, trajectory: Sequence[Any]) -> GateOutcome[FinalAnswer]:
        """Synthesize the final answer from the full round trajectory.

        Single attempt by design: a below-theta_a answer comes back with
        passed=False so the caller can store the trajectory and replan.
        """
        user = render(
            self.templates[TemplateName.ANSWER_USER],
            {
                "task_description": self.task.description,
                "trajectory": render_trajectory(plan, trajectory),
            },
        )
        answer = self._attempt(
            agent="answer",
            attempt=1,
            system=self.templates[TemplateName.ANSWER_SYSTEM].body,
            user=user,
            validate=lambda value: validate_output(value, OutputKind.ANSWER),
        )
        passed = gate(answer.reflection.score, self.config.thresholds.theta_a)
        self.emit(
            "agent_output",
            agent="answer",
            attempt=1,
            score=answer.reflection.score,
            accepted=passed,
            divergence=False,
        )
        return GateOutcome(accepted=answer, attempts=1, forced=False, passed=passed)

    # -- shared machinery ------------------------------------------------------

    def _gated(
        self,
        agent: str,
        system: str,
        base_user: str,
        validate: Callable[[Any], T],
        threshold: int,
        quote: Callable[[T], dict[str, Any]],
        node_function: str | None = None,
    ) -> GateOutcome[T]:
        rejected: list[T] = []
        for attempt in range(1, self.config.revision_cap + 1):
            user = base_user + self._revision_context(rejected, quote)
            value = self._attempt(agent, attempt, system, user, validate)
            score = value.reflection.score
            passed = gate(score, threshold)
            self.emit(
                "agent_output",
                agent=agent,
                attempt=attempt,
                score=score,
                accepted=passed,
                divergence=node_function is not None and value.function != node_function,
            )
            if passed:
                return GateOutcome(accepted=value, attempts=attempt, forced=False, passed=True)
            rejected.append(value)
        best = max(rejected, key=lambda v: v.reflection.score)  # ties -> earliest
        return GateOutcome(accepted=best, attempts=self.config.revision_cap, forced=True, passed=False)

    def _revision_context(self, rejected: Sequence[T], quote: Callable[[T], dict[str, Any]]) -> str:
        if not rejected:
            return ""
        blocks = []
        for i, value in enumerate(rejected, 1):
            blocks.append(
                f"Attempt {i} (rejected, score {value.reflection.score}/10):\n"
                + json.dumps(quote(value), ensure_ascii=False, indent=2)
                + f"\nIts intra-reflection: {value.reflection.evaluation}"
            )
        return _REVISION_HEADER + "\n\n".join(blocks) + _REVISION_FOOTER

    def _attempt(
        self,
        agent: str,
        attempt: int,
        system: str,
        user: str,
        validate: Callable[[Any], T],
    ) -> T:
        """One revision attempt: initial call plus up to parse_retry_cap
        correction re-prompts; raises ParseExhausted when all are unusable."""
        reason = ""
        tries = 1 + self.config.parse_retry_cap
        for parse_try in range(tries):
            prompt = user if parse_try == 0 else user + "\n\n" + _CORRECTION.format(reason=reason)
            request = ChatRequest(system=system, user=prompt, model=self.backend.model)
            response = self.backend.complete(request)
            self.emit(
                "agent_call",
                agent=agent,
                attempt=attempt,
                parse_try=parse_try,
                prompt_hash=prompt_hash(system, prompt),
                prompt_tokens=response.prompt_tokens,
                completion_tokens=response.completion_tokens,
            )
            try:
                return validate(extract_json(response.text))
            except (NoJsonFound, MalformedJson, SchemaError) as exc:
                reason = str(exc)
        raise ParseExhausted(agent, tries)
