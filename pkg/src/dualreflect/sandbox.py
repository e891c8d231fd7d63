"""Simulated tool executor.

A registry of tools with declarative behaviors: ordered rules matched on
parameter values and/or per-tool call count, with a mandatory default. Rules
make failure injectable ("fail the first N calls, then succeed") while
keeping execution pure data — failures come back as results, never as
exceptions, so the orchestrator always sees them.

The registry is read-only after load; per-tool call counters live in a
per-run session so concurrent runs never share executor state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .model import (
    ExecutionResult,
    ExecutionStatus,
    ParamKind,
    ParamSpec,
    ToolCall,
    ToolSpec,
    tool_from_dict,
    tool_to_dict,
)

__all__ = [
    "SchemaError",
    "BehaviorRule",
    "SandboxTool",
    "SandboxRegistry",
    "SandboxSession",
    "ExecutionResult",
    "ExecutionStatus",
    "load_registry",
    "registry_from_dict",
    "registry_to_dict",
]


class SchemaError(Exception):
    """A suite file entry is malformed; the message carries its path."""


@dataclass(frozen=True)
class BehaviorRule:
    """First-match-wins behavior: equality matchers on parameters and/or a
    1-based per-tool call index."""

    result: ExecutionResult
    params: dict[str, Any] | None = None
    call_index: int | None = None

    def matches(self, parameters: Mapping[str, Any], call_index: int) -> bool:
        if self.call_index is not None and call_index != self.call_index:
            return False
        if self.params is not None:
            for name, expected in self.params.items():
                if name not in parameters or parameters[name] != expected:
                    return False
        return True


@dataclass(frozen=True)
class SandboxTool:
    spec: ToolSpec
    default: ExecutionResult
    rules: tuple[BehaviorRule, ...] = ()


class SandboxRegistry:
    """All tools of a suite; shareable once constructed."""

    def __init__(self, tools: list[SandboxTool] | tuple[SandboxTool, ...]):
        self._tools: dict[str, SandboxTool] = {}
        for tool in tools:
            if tool.spec.name in self._tools:
                raise ValueError(f"duplicate sandbox tool {tool.spec.name!r}")
            self._tools[tool.spec.name] = tool

    def __len__(self) -> int:
        return len(self._tools)

    def get(self, name: str) -> SandboxTool | None:
        return self._tools.get(name)

    def tool_specs(self) -> tuple[ToolSpec, ...]:
        return tuple(tool.spec for tool in self._tools.values())

    def session(self) -> "SandboxSession":
        """A fresh stateful view; one per task run."""
        return SandboxSession(self)


class SandboxSession:
    """Per-run executor: owns the call counters the rules may match on."""

    def __init__(self, registry: SandboxRegistry):
        self._registry = registry
        self._counters: dict[str, int] = {}

    def execute(self, call: ToolCall) -> ExecutionResult:
        """Run one call; pure given (call, counters) — same input, same result.

        Every failure mode is encoded in the result status. Only calls that
        pass lookup and parameter validation consume a call-index slot.
        """
        tool = self._registry.get(call.function)
        if tool is None:
            return ExecutionResult(ExecutionStatus.TOOL_NOT_FOUND, f"unknown function: {call.function}")
        problems = _check_parameters(tool.spec, call.parameters)
        if problems:
            return ExecutionResult(ExecutionStatus.INVALID_PARAMETERS, "; ".join(problems))
        self._counters[call.function] = index = self._counters.get(call.function, 0) + 1
        for rule in tool.rules:
            if rule.matches(call.parameters, index):
                return rule.result
        return tool.default


def _check_parameters(spec: ToolSpec, parameters: Mapping[str, Any]) -> list[str]:
    declared = {p.name: p for p in spec.parameters}
    problems = []
    for p in spec.parameters:
        if p.required and p.name not in parameters:
            problems.append(f"missing required parameter: {p.name}")
    for name in parameters:
        if name not in declared:
            problems.append(f"unknown parameter: {name}")
    for p in spec.parameters:
        if p.name in parameters:
            problems.extend(_check_kind(p, parameters[p.name]))
    return problems


def _check_kind(param: ParamSpec, value: Any) -> list[str]:
    kind = param.kind
    if kind is ParamKind.STRING and not isinstance(value, str):
        return [f"wrong type for parameter {param.name}: expected string"]
    if kind is ParamKind.NUMBER and (isinstance(value, bool) or not isinstance(value, (int, float))):
        return [f"wrong type for parameter {param.name}: expected number"]
    if kind is ParamKind.BOOLEAN and not isinstance(value, bool):
        return [f"wrong type for parameter {param.name}: expected boolean"]
    if kind is ParamKind.ENUM:
        if not isinstance(value, str):
            return [f"wrong type for parameter {param.name}: expected enum"]
        if param.values and value not in param.values:
            return [f"invalid value for parameter {param.name}: expected one of {', '.join(param.values)}"]
    return []


# --- Suite file loading -------------------------------------------------------


def _result_from_dict(data: Any, path: str) -> ExecutionResult:
    if not isinstance(data, dict) or "status" not in data or "payload" not in data:
        raise SchemaError(f"{path}: expected an object with status and payload")
    try:
        status = ExecutionStatus(data["status"])
    except ValueError:
        raise SchemaError(f"{path}.status: unknown status {data['status']!r}") from None
    try:
        return ExecutionResult(status, str(data["payload"]))
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from None


def registry_from_dict(data: Any) -> SandboxRegistry:
    if not isinstance(data, dict) or not isinstance(data.get("tools"), list):
        raise SchemaError("suite file must be an object with a 'tools' array")
    tools = []
    for i, raw in enumerate(data["tools"]):
        path = f"tools[{i}]"
        if not isinstance(raw, dict) or "spec" not in raw or "default" not in raw:
            raise SchemaError(f"{path}: expected an object with spec and default")
        try:
            spec = tool_from_dict(raw["spec"])
        except ValueError as exc:
            raise SchemaError(f"{path}.spec: {exc}") from None
        declared = {p.name for p in spec.parameters}
        rules = []
        for j, raw_rule in enumerate(raw.get("rules", [])):
            rpath = f"{path}.rules[{j}]"
            if not isinstance(raw_rule, dict) or "result" not in raw_rule:
                raise SchemaError(f"{rpath}: expected an object with when/result")
            when = raw_rule.get("when", {})
            if not isinstance(when, dict):
                raise SchemaError(f"{rpath}.when: expected an object")
            params = when.get("params")
            if params is not None:
                if not isinstance(params, dict):
                    raise SchemaError(f"{rpath}.when.params: expected an object")
                for name in params:
                    if name not in declared:
                        raise SchemaError(f"{rpath}.when.params.{name}: references undeclared parameter")
            call_index = when.get("call_index")
            if call_index is not None and (isinstance(call_index, bool) or not isinstance(call_index, int) or call_index < 1):
                raise SchemaError(f"{rpath}.when.call_index: expected an integer >= 1")
            rules.append(
                BehaviorRule(
                    result=_result_from_dict(raw_rule["result"], f"{rpath}.result"),
                    params=dict(params) if params is not None else None,
                    call_index=call_index,
                )
            )
        tools.append(
            SandboxTool(spec=spec, default=_result_from_dict(raw["default"], f"{path}.default"), rules=tuple(rules))
        )
    try:
        return SandboxRegistry(tools)
    except ValueError as exc:
        raise SchemaError(str(exc)) from None


def registry_to_dict(registry: SandboxRegistry) -> dict[str, Any]:
    tools = []
    for spec in registry.tool_specs():
        tool = registry.get(spec.name)
        entry: dict[str, Any] = {"spec": tool_to_dict(spec), "default": {
            "status": tool.default.status.value,
            "payload": tool.default.payload,
        }}
        rules = []
        for rule in tool.rules:
            when: dict[str, Any] = {}
            if rule.params is not None:
                when["params"] = rule.params
            if rule.call_index is not None:
                when["call_index"] = rule.call_index
            rules.append({"when": when, "result": {"status": rule.result.status.value, "payload": rule.result.payload}})
        if rules:
            entry["rules"] = rules
        tools.append(entry)
    return {"tools": tools}


def load_registry(path: Path | str) -> SandboxRegistry:
    """Parse a suite file into a registry; schema violations carry the path
    of the offending entry."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"suite file is not valid JSON: {exc}") from None
    return registry_from_dict(data)
