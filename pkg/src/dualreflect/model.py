"""Domain types shared by every part of the workflow engine.

Value objects are frozen dataclasses: construct once, share freely across
concurrent task runs. Field-level invariants that must never be violated
(score range, status transitions) are enforced at construction; aggregate
checks that should produce a report rather than an exception live in
:func:`validate_task`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Any

__all__ = [
    "NodeStatus",
    "ParamKind",
    "PredicateKind",
    "ExecutionStatus",
    "IllegalTransition",
    "ParamSpec",
    "ToolSpec",
    "ExpectedCall",
    "SuccessPredicate",
    "TaskSpec",
    "IntraReflection",
    "PlanNode",
    "Plan",
    "ToolCall",
    "ExecutionResult",
    "TrajectoryStep",
    "FinalAnswer",
    "Thresholds",
    "RunConfig",
    "ValidationReport",
    "clamp_score",
    "node_transition",
    "validate_task",
    "task_to_dict",
    "task_from_dict",
    "task_to_json",
    "task_from_json",
    "tool_to_dict",
    "tool_from_dict",
]


class NodeStatus(IntEnum):
    """Plan-node lifecycle; the wire encoding is the integer value."""

    PENDING = 0
    SUCCEEDED = 1
    FAILED = 2


class ParamKind(str, Enum):
    STRING = "string"
    NUMBER = "number"
    BOOLEAN = "boolean"
    ENUM = "enum"


class PredicateKind(str, Enum):
    EXPECTED_CALLS = "expected_calls"
    ANSWER_CONTAINS = "answer_contains"
    ALL_NODES_SUCCEEDED = "all_nodes_succeeded"


class ExecutionStatus(str, Enum):
    OK = "ok"
    TOOL_NOT_FOUND = "tool_not_found"
    INVALID_PARAMETERS = "invalid_parameters"
    SIMULATED_FAILURE = "simulated_failure"


class IllegalTransition(Exception):
    """A plan node was moved along a disallowed status edge."""


def clamp_score(raw: int | float) -> tuple[int, bool]:
    """Floor a model-reported score to an integer and clamp it into [1, 10].

    Returns the score and a flag that is True only when the bounds clamp
    fired; flooring a fractional value alone is not flagged.
    """
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise TypeError(f"score must be a number, got {type(raw).__name__}")
    floored = math.floor(raw)
    if floored < 1:
        return 1, True
    if floored > 10:
        return 10, True
    return int(floored), False


@dataclass(frozen=True)
class ParamSpec:
    """One declared tool parameter. ``values`` applies to enum kind only."""

    name: str
    kind: ParamKind
    required: bool
    description: str = ""
    values: tuple[str, ...] = ()


@dataclass(frozen=True)
class ToolSpec:
    """A callable tool: name, human description, and parameter schema."""

    name: str
    description: str
    parameters: tuple[ParamSpec, ...] = ()


@dataclass(frozen=True)
class ExpectedCall:
    """One expected tool invocation; parameters=None matches any arguments."""

    function: str
    parameters: dict[str, Any] | None = None


@dataclass(frozen=True)
class SuccessPredicate:
    """Deterministic pass/fail check applied to a finished run."""

    kind: PredicateKind
    payload: Any = None

    @classmethod
    def expected_calls(cls, calls: list[ExpectedCall] | tuple[ExpectedCall, ...]) -> "SuccessPredicate":
        return cls(PredicateKind.EXPECTED_CALLS, tuple(calls))

    @classmethod
    def answer_contains(cls, substrings: list[str] | tuple[str, ...]) -> "SuccessPredicate":
        return cls(PredicateKind.ANSWER_CONTAINS, tuple(substrings))

    @classmethod
    def all_nodes_succeeded(cls) -> "SuccessPredicate":
        return cls(PredicateKind.ALL_NODES_SUCCEEDED, None)


@dataclass(frozen=True)
class TaskSpec:
    """A task: description, candidate tool library, and how to score the run.

    Construction is deliberately lenient so that malformed specs can still be
    loaded and inspected; :func:`validate_task` reports every violation
    instead of raising on the first one.
    """

    id: str
    description: str
    tools: tuple[ToolSpec, ...]
    success_check: SuccessPredicate


@dataclass(frozen=True)
class IntraReflection:
    """An agent's pre-handoff self-evaluation: free text plus a 1-10 score."""

    evaluation: str
    score: int
    clamped: bool = False

    def __post_init__(self) -> None:
        if not self.evaluation:
            raise ValueError("reflection evaluation must be non-empty")
        if isinstance(self.score, bool) or not isinstance(self.score, int) or not 1 <= self.score <= 10:
            raise ValueError(f"reflection score must be an integer in [1, 10], got {self.score!r}")


@dataclass(frozen=True)
class PlanNode:
    """One subtask with the function it is bound to."""

    id: str
    subtask: str
    function: str
    status: NodeStatus = NodeStatus.PENDING


def node_transition(node: PlanNode, to: NodeStatus) -> PlanNode:
    """Move a node to a terminal status.

    Only PENDING -> SUCCEEDED and PENDING -> FAILED are legal; anything else
    raises :class:`IllegalTransition`, which keeps node status monotonic.
    """
    if node.status is not NodeStatus.PENDING or to not in (NodeStatus.SUCCEEDED, NodeStatus.FAILED):
        raise IllegalTransition(f"cannot move node {node.id!r} from {node.status.name} to {to.name}")
    return replace(node, status=to)


@dataclass(frozen=True)
class Plan:
    """Ordered subtask nodes plus the planner's self-evaluation.

    List order is execution order; there is no separate dependency edge set.
    """

    nodes: tuple[PlanNode, ...]
    reflection: IntraReflection

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for node in self.nodes:
            if node.id in seen:
                raise ValueError(f"duplicate plan node id {node.id!r}")
            seen.add(node.id)


@dataclass(frozen=True)
class ToolCall:
    """A concrete invocation: function name, argument map, self-evaluation."""

    function: str
    parameters: dict[str, Any]
    reflection: IntraReflection


@dataclass(frozen=True)
class ExecutionResult:
    """What the executor saw: a status plus observation or error text."""

    status: ExecutionStatus
    payload: str

    def __post_init__(self) -> None:
        if self.status is ExecutionStatus.OK and not self.payload:
            raise ValueError("successful execution must carry a non-empty payload")


@dataclass(frozen=True)
class TrajectoryStep:
    """One executed attempt: which node, what was called, what came back."""

    node_id: str
    call: ToolCall
    observation: ExecutionResult
    attempt_index: int

    def __post_init__(self) -> None:
        if self.attempt_index < 1:
            raise ValueError("attempt_index starts at 1")


@dataclass(frozen=True)
class FinalAnswer:
    """The synthesized natural-language answer plus its self-evaluation."""

    text: str
    reflection: IntraReflection

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("final answer text must be non-empty")


@dataclass(frozen=True)
class Thresholds:
    """Quality gates for the planner, tool, and answer agents."""

    theta_p: int = 9
    theta_t: int = 8
    theta_a: int = 8

    def __post_init__(self) -> None:
        for name in ("theta_p", "theta_t", "theta_a"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or not 1 <= value <= 10:
                raise ValueError(f"{name} must be an integer in [1, 10], got {value!r}")


@dataclass(frozen=True)
class RunConfig:
    """Caps and thresholds governing one task run."""

    thresholds: Thresholds = field(default_factory=Thresholds)
    max_rounds: int = 5
    revision_cap: int = 3
    subtask_retry_cap: int = 3
    parse_retry_cap: int = 2

    def __post_init__(self) -> None:
        for name in ("max_rounds", "revision_cap", "subtask_retry_cap", "parse_retry_cap"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {value!r}")


@dataclass(frozen=True)
class ValidationReport:
    """Accumulated invariant violations; empty means the task is runnable."""

    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_task(task: TaskSpec) -> ValidationReport:
    """Check every TaskSpec invariant and report all violations at once."""
    problems: list[str] = []
    if not task.id:
        problems.append("id: must be non-empty")
    if not task.description:
        problems.append("description: must be non-empty")
    if not task.tools:
        problems.append("tools: must declare at least one tool")

    seen_tools: set[str] = set()
    for i, tool in enumerate(task.tools):
        where = f"tools[{i}]"
        if not tool.name:
            problems.append(f"{where}.name: must be non-empty")
        elif tool.name in seen_tools:
            problems.append(f"{where}.name: duplicate tool name {tool.name!r}")
        else:
            seen_tools.add(tool.name)
        seen_params: set[str] = set()
        for j, param in enumerate(tool.parameters):
            pwhere = f"{where}.parameters[{j}]"
            if not param.name:
                problems.append(f"{pwhere}.name: must be non-empty")
            elif param.name in seen_params:
                problems.append(f"{pwhere}.name: duplicate parameter name {param.name!r}")
            else:
                seen_params.add(param.name)
            if param.kind is ParamKind.ENUM and not param.values:
                problems.append(f"{pwhere}: enum parameter must list allowed values")

    problems.extend(_check_predicate(task))
    return ValidationReport(tuple(problems))


def _check_predicate(task: TaskSpec) -> list[str]:
    pred = task.success_check
    problems: list[str] = []
    if pred.kind is PredicateKind.EXPECTED_CALLS:
        calls = pred.payload
        if not isinstance(calls, tuple) or not calls:
            problems.append("success_check.payload: expected a non-empty list of expected calls")
            return problems
        for i, call in enumerate(calls):
            if not isinstance(call, ExpectedCall) or not call.function:
                problems.append(f"success_check.payload[{i}]: expected call must name a function")
            elif task.tools and call.function not in {t.name for t in task.tools}:
                problems.append(
                    f"success_check.payload[{i}]: function {call.function!r} is not in the tool library"
                )
    elif pred.kind is PredicateKind.ANSWER_CONTAINS:
        subs = pred.payload
        if not isinstance(subs, tuple) or not subs or not all(isinstance(s, str) and s for s in subs):
            problems.append("success_check.payload: expected a non-empty list of non-empty substrings")
    elif pred.kind is PredicateKind.ALL_NODES_SUCCEEDED:
        if pred.payload is not None:
            problems.append("success_check.payload: must be empty for this predicate kind")
    return problems


# --- JSON (de)serialization ------------------------------------------------
#
# One JSON document per task. Serialization is canonical (fixed key order,
# two-space indent) so serialize -> parse -> serialize is byte-identical.


def tool_to_dict(tool: ToolSpec) -> dict[str, Any]:
    params = []
    for p in tool.parameters:
        entry: dict[str, Any] = {
            "name": p.name,
            "kind": p.kind.value,
            "required": p.required,
            "description": p.description,
        }
        if p.kind is ParamKind.ENUM:
            entry["values"] = list(p.values)
        params.append(entry)
    return {"name": tool.name, "description": tool.description, "parameters": params}


def tool_from_dict(data: Any) -> ToolSpec:
    if not isinstance(data, dict):
        raise ValueError("tool entry must be an object")
    try:
        name = data["name"]
        description = data["description"]
        raw_params = data.get("parameters", [])
    except KeyError as exc:
        raise ValueError(f"tool entry missing field {exc.args[0]!r}") from None
    if not isinstance(raw_params, list):
        raise ValueError("tool parameters must be an array")
    params = []
    for raw in raw_params:
        if not isinstance(raw, dict):
            raise ValueError("parameter entry must be an object")
        try:
            kind = ParamKind(raw["kind"])
        except (KeyError, ValueError):
            raise ValueError(f"parameter {raw.get('name')!r} has a missing or unknown kind") from None
        params.append(
            ParamSpec(
                name=str(raw.get("name", "")),
                kind=kind,
                required=bool(raw.get("required", False)),
                description=str(raw.get("description", "")),
                values=tuple(raw.get("values", ())),
            )
        )
    return ToolSpec(name=str(name), description=str(description), parameters=tuple(params))


def _predicate_to_dict(pred: SuccessPredicate) -> dict[str, Any]:
    if pred.kind is PredicateKind.EXPECTED_CALLS:
        payload: Any = [
            {"function": c.function} if c.parameters is None else {"function": c.function, "parameters": c.parameters}
            for c in pred.payload
        ]
    elif pred.kind is PredicateKind.ANSWER_CONTAINS:
        payload = list(pred.payload)
    else:
        payload = None
    return {"kind": pred.kind.value, "payload": payload}


def _predicate_from_dict(data: Any) -> SuccessPredicate:
    if not isinstance(data, dict) or "kind" not in data:
        raise ValueError("success_check must be an object with a 'kind' field")
    try:
        kind = PredicateKind(data["kind"])
    except ValueError:
        raise ValueError(f"unknown success_check kind {data['kind']!r}") from None
    payload = data.get("payload")
    if kind is PredicateKind.EXPECTED_CALLS:
        if not isinstance(payload, list):
            raise ValueError("expected_calls payload must be an array")
        calls = []
        for raw in payload:
            if not isinstance(raw, dict) or "function" not in raw:
                raise ValueError("expected call entries must be objects with a 'function' field")
            calls.append(ExpectedCall(function=str(raw["function"]), parameters=raw.get("parameters")))
        return SuccessPredicate(kind, tuple(calls))
    if kind is PredicateKind.ANSWER_CONTAINS:
        if not isinstance(payload, list):
            raise ValueError("answer_contains payload must be an array of strings")
        return SuccessPredicate(kind, tuple(str(s) for s in payload))
    return SuccessPredicate(kind, None)


def task_to_dict(task: TaskSpec) -> dict[str, Any]:
    return {
        "id": task.id,
        "description": task.description,
        "tools": [tool_to_dict(t) for t in task.tools],
        "success_check": _predicate_to_dict(task.success_check),
    }


def task_from_dict(data: Any) -> TaskSpec:
    if not isinstance(data, dict):
        raise ValueError("task document must be a JSON object")
    missing = [k for k in ("id", "description", "tools", "success_check") if k not in data]
    if missing:
        raise ValueError(f"task document missing fields: {', '.join(missing)}")
    if not isinstance(data["tools"], list):
        raise ValueError("task tools must be an array")
    return TaskSpec(
        id=str(data["id"]),
        description=str(data["description"]),
        tools=tuple(tool_from_dict(t) for t in data["tools"]),
        success_check=_predicate_from_dict(data["success_check"]),
    )


def task_to_json(task: TaskSpec) -> str:
    return json.dumps(task_to_dict(task), indent=2, ensure_ascii=False)


def task_from_json(text: str) -> TaskSpec:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"task document is not valid JSON: {exc}") from None
    return task_from_dict(data)
