"""Substitution, instantiation, and execution of parsed policies.

Execution produces a flat trace: component calls run the component body in an
isolated environment but append to the same record list and statement counter,
so the trace reads as one linear program run.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Mapping, Protocol

from ..model import (
    ApiCallRecord,
    ModelError,
    ParameterBinding,
    Plan,
    Policy,
    check_binding,
    literal_kind,
)
from . import nodes
from .parser import KEYWORDS

STATUS_COMPLETED = "completed"
STATUS_RUNTIME_ERROR = "runtime-error"

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class ApiError(Exception):
    """Raised by an executor when an API call fails at the domain level."""


class ComponentCycleError(ValueError):
    """A component-call cycle was found before execution started."""


class ApiExecutor(Protocol):
    def call(self, app: str, api: str, args: dict[str, Any]) -> Any:
        """Perform one API call; return the response or raise ApiError."""


@dataclass(frozen=True)
class ExecutionTrace:
    """Ordered API-call records plus a terminal status."""

    records: tuple[ApiCallRecord, ...]
    status: str
    error: str | None = None
    error_statement: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        if self.status == STATUS_COMPLETED:
            if self.error is not None or self.error_statement is not None:
                raise ModelError("completed trace cannot carry an error")
        elif self.status == STATUS_RUNTIME_ERROR:
            if self.error is None or self.error_statement is None:
                raise ModelError("runtime-error trace needs a message and statement index")
        else:
            raise ModelError(f"unknown trace status {self.status!r}")

    @property
    def completed(self) -> bool:
        return self.status == STATUS_COMPLETED

    def to_dict(self) -> dict[str, Any]:
        return {
            "records": [r.to_dict() for r in self.records],
            "status": self.status,
            "error": self.error,
            "error_statement": self.error_statement,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExecutionTrace":
        return cls(
            records=tuple(ApiCallRecord.from_dict(r) for r in data["records"]),
            status=data["status"],
            error=data.get("error"),
            error_statement=data.get("error_statement"),
        )


def free_parameters(fn: nodes.Function) -> set[str]:
    """Parameters of the root function that have not been substituted away."""
    return set(fn.params)


def substitute(fn: nodes.Function, values: Mapping[str, Any]) -> nodes.Function:
    """Replace parameter references with literals; unbound parameters remain.

    Parameters used as dynamic call targets must be bound to identifier-shaped
    strings, otherwise the result could not be rendered back to valid source.
    """
    unknown = sorted(set(values) - set(fn.params))
    if unknown:
        raise ModelError(f"unknown parameter(s): {', '.join(unknown)}")
    for name, value in values.items():
        if literal_kind(value) is None:
            raise ModelError(f"parameter {name!r} bound to a non-literal value")
    remaining = tuple(p for p in fn.params if p not in values)
    body = tuple(_sub_stmt(s, values) for s in fn.body)
    return nodes.Function(name=fn.name, params=remaining, body=body)


def _sub_stmt(stmt: nodes.Stmt, values: Mapping[str, Any]) -> nodes.Stmt:
    if isinstance(stmt, nodes.Let):
        return nodes.Let(name=stmt.name, expr=_sub_expr(stmt.expr, values))
    if isinstance(stmt, nodes.ExprStmt):
        return nodes.ExprStmt(call=_sub_expr(stmt.call, values))
    if isinstance(stmt, nodes.If):
        return nodes.If(
            cond=_sub_expr(stmt.cond, values),
            then=tuple(_sub_stmt(s, values) for s in stmt.then),
            orelse=tuple(_sub_stmt(s, values) for s in stmt.orelse),
        )
    if isinstance(stmt, nodes.Foreach):
        return nodes.Foreach(
            var=stmt.var,
            iterable=_sub_expr(stmt.iterable, values),
            body=tuple(_sub_stmt(s, values) for s in stmt.body),
        )
    if isinstance(stmt, nodes.Return):
        expr = None if stmt.expr is None else _sub_expr(stmt.expr, values)
        return nodes.Return(expr=expr)
    raise ModelError(f"unknown statement node {type(stmt).__name__}")


def _sub_expr(expr: nodes.Expr, values: Mapping[str, Any]) -> nodes.Expr:
    if isinstance(expr, nodes.Lit):
        return expr
    if isinstance(expr, nodes.Name):
        if expr.id in values:
            value = values[expr.id]
            return nodes.Lit(value=list(value) if isinstance(value, (list, tuple)) else value)
        return expr
    if isinstance(expr, nodes.Field):
        return nodes.Field(obj=_sub_expr(expr.obj, values), name=expr.name)
    if isinstance(expr, nodes.Binary):
        return nodes.Binary(
            op=expr.op, left=_sub_expr(expr.left, values), right=_sub_expr(expr.right, values)
        )
    if isinstance(expr, nodes.ApiCall):
        return nodes.ApiCall(
            app=_sub_target(expr.app, values),
            api=_sub_target(expr.api, values),
            args=tuple((n, _sub_expr(e, values)) for n, e in expr.args),
        )
    if isinstance(expr, nodes.ComponentCall):
        return nodes.ComponentCall(
            name=expr.name, args=tuple((n, _sub_expr(e, values)) for n, e in expr.args)
        )
    raise ModelError(f"unknown expression node {type(expr).__name__}")


def _sub_target(target: nodes.CallTarget, values: Mapping[str, Any]) -> nodes.CallTarget:
    if not target.dynamic or target.name not in values:
        return target
    value = values[target.name]
    if not isinstance(value, str) or not _IDENT_RE.match(value) or value in KEYWORDS:
        raise ModelError(
            f"parameter {target.name!r} is used as a call target and must be "
            f"an identifier-shaped string, got {value!r}"
        )
    return nodes.CallTarget(name=value, dynamic=False)


def instantiate(policy: Policy, binding: ParameterBinding) -> Plan:
    """Produce an executable plan by substituting the binding into the policy."""
    report = check_binding(policy.signature, binding)
    if not report.ok:
        raise ModelError(f"unbound or mismatched parameters: {report.describe()}")
    fn = substitute(policy.parsed(), dict(binding.values))
    return Plan(task_id=binding.task_id, instantiated_source=nodes.render(fn))


def check_component_cycles(
    root: nodes.Function, component_resolver: Mapping[str, nodes.Function]
) -> None:
    """Reject any component-call cycle reachable from `root` before running.

    Names that do not resolve are skipped here; reaching one at runtime is a
    runtime error recorded in the trace.
    """
    done: set[str] = set()

    def visit(fn: nodes.Function, stack: tuple[str, ...]) -> None:
        for name in nodes.component_call_names(fn):
            if name in stack:
                cycle = " -> ".join(stack[stack.index(name):] + (name,))
                raise ComponentCycleError(f"component-call cycle: {cycle}")
            if name in done:
                continue
            target = component_resolver.get(name)
            if target is not None:
                visit(target, stack + (name,))
            done.add(name)

    visit(root, ())


class _Return(Exception):
    def __init__(self, value: Any):
        self.value = value


class _Halt(Exception):
    def __init__(self, message: str, statement: int):
        self.message = message
        self.statement = statement


def _value_kind(value: Any) -> str:
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, (int, float)):
        return "number"
    if isinstance(value, str):
        return "string"
    if isinstance(value, list):
        return "list"
    if isinstance(value, dict):
        return "record"
    return "null"


class _Interp:
    def __init__(self, executor: ApiExecutor, resolver: Mapping[str, nodes.Function]):
        self.executor = executor
        self.resolver = resolver
        self.records: list[ApiCallRecord] = []
        self.counter = 0
        self.current = 0

    def fail(self, message: str) -> None:
        raise _Halt(message, self.current)

    def run_block(self, stmts: tuple[nodes.Stmt, ...], env: list[dict[str, Any]]) -> None:
        env.append({})
        try:
            for stmt in stmts:
                self.run_stmt(stmt, env)
        finally:
            env.pop()

    def run_stmt(self, stmt: nodes.Stmt, env: list[dict[str, Any]]) -> None:
        self.current = self.counter
        self.counter += 1
        if isinstance(stmt, nodes.Let):
            env[-1][stmt.name] = self.eval(stmt.expr, env)
        elif isinstance(stmt, nodes.ExprStmt):
            self.eval(stmt.call, env)
        elif isinstance(stmt, nodes.If):
            cond = self.eval(stmt.cond, env)
            if not isinstance(cond, bool):
                self.fail(f"if condition must be a boolean, got {_value_kind(cond)}")
            self.run_block(stmt.then if cond else stmt.orelse, env)
        elif isinstance(stmt, nodes.Foreach):
            items = self.eval(stmt.iterable, env)
            if not isinstance(items, list):
                self.fail(f"foreach requires a list, got {_value_kind(items)}")
            for item in items:
                env.append({stmt.var: item})
                try:
                    self.run_block(stmt.body, env)
                finally:
                    env.pop()
        elif isinstance(stmt, nodes.Return):
            raise _Return(None if stmt.expr is None else self.eval(stmt.expr, env))
        else:
            self.fail(f"unknown statement node {type(stmt).__name__}")

    def lookup(self, name: str, env: list[dict[str, Any]]) -> Any:
        for frame in reversed(env):
            if name in frame:
                return frame[name]
        self.fail(f"undefined variable {name!r}")

    def eval(self, expr: nodes.Expr, env: list[dict[str, Any]]) -> Any:
        if isinstance(expr, nodes.Lit):
            return list(expr.value) if isinstance(expr.value, list) else expr.value
        if isinstance(expr, nodes.Name):
            return self.lookup(expr.id, env)
        if isinstance(expr, nodes.Field):
            obj = self.eval(expr.obj, env)
            if not isinstance(obj, dict):
                self.fail(f"field access needs a record, got {_value_kind(obj)}")
            if expr.name not in obj:
                self.fail(f"no field {expr.name!r} in response")
            return obj[expr.name]
        if isinstance(expr, nodes.Binary):
            return self.eval_binary(expr, env)
        if isinstance(expr, nodes.ApiCall):
            return self.eval_api_call(expr, env)
        if isinstance(expr, nodes.ComponentCall):
            return self.eval_component_call(expr, env)
        self.fail(f"unknown expression node {type(expr).__name__}")

    def eval_binary(self, expr: nodes.Binary, env: list[dict[str, Any]]) -> Any:
        left = self.eval(expr.left, env)
        right = self.eval(expr.right, env)
        lk, rk = _value_kind(left), _value_kind(right)
        op = expr.op
        if op in ("==", "!="):
            if lk != rk:
                self.fail(f"cannot compare {lk} with {rk}")
            return (left == right) if op == "==" else (left != right)
        if op in ("<", "<=", ">", ">="):
            if lk != rk or lk not in ("number", "string"):
                self.fail(f"cannot order {lk} and {rk} values")
            if op == "<":
                return left < right
            if op == "<=":
                return left <= right
            if op == ">":
                return left > right
            return left >= right
        if op == "+":
            if lk == rk == "number":
                return left + right
            if lk == rk == "string":
                return left + right
            self.fail(f"operator '+' requires two numbers or two strings, got {lk} and {rk}")
        if op in ("-", "*"):
            if lk == rk == "number":
                return left - right if op == "-" else left * right
            self.fail(f"operator {op!r} requires numbers, got {lk} and {rk}")
        self.fail(f"unknown operator {op!r}")

    def target_value(self, target: nodes.CallTarget, env: list[dict[str, Any]]) -> str:
        if not target.dynamic:
            return target.name
        value = self.lookup(target.name, env)
        if not isinstance(value, str):
            self.fail(f"dynamic call target {target.name!r} must hold a string")
        return value

    def eval_api_call(self, call: nodes.ApiCall, env: list[dict[str, Any]]) -> Any:
        args = {name: self.eval(arg, env) for name, arg in call.args}
        app = self.target_value(call.app, env)
        api = self.target_value(call.api, env)
        try:
            response = self.executor.call(app, api, args)
        except ApiError as exc:
            self.records.append(
                ApiCallRecord(app=app, api=api, args=args, response=None, error=str(exc))
            )
            self.fail(str(exc))
        self.records.append(
            ApiCallRecord(app=app, api=api, args=args, response=response, error=None)
        )
        return response

    def eval_component_call(self, call: nodes.ComponentCall, env: list[dict[str, Any]]) -> Any:
        fn = self.resolver.get(call.name)
        if fn is None:
            self.fail(f"unknown component {call.name!r}")
        given = tuple(name for name, _ in call.args)
        if sorted(given) != sorted(fn.params):
            self.fail(
                f"component {call.name!r} expects ({', '.join(fn.params)}), "
                f"got ({', '.join(given)})"
            )
        frame = {name: self.eval(arg, env) for name, arg in call.args}
        try:
            self.run_block(fn.body, [frame])
        except _Return as ret:
            return ret.value
        return None


def execute(
    plan: Plan | nodes.Function,
    executor: ApiExecutor,
    component_resolver: Mapping[str, nodes.Function] | None = None,
) -> ExecutionTrace:
    """Run a plan against an executor; never raises for in-plan failures.

    Component-call cycles are the one exception: they are rejected up front
    with ComponentCycleError, before any API call happens.
    """
    fn = plan.parsed() if isinstance(plan, Plan) else plan
    resolver = dict(component_resolver or {})
    check_component_cycles(fn, resolver)
    interp = _Interp(executor, resolver)
    try:
        interp.run_block(fn.body, [{}])
    except _Return:
        pass
    except _Halt as halt:
        return ExecutionTrace(
            records=tuple(interp.records),
            status=STATUS_RUNTIME_ERROR,
            error=halt.message,
            error_statement=halt.statement,
        )
    return ExecutionTrace(records=tuple(interp.records), status=STATUS_COMPLETED)
