"""AST node types for the policy DSL, plus the canonical source renderer.

The renderer and parser round-trip: ``parse(render(ast)) == ast`` for every
well-formed tree (node-for-node dataclass equality).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator, Union

INDENT = "  "


# --- expressions ---


@dataclass(frozen=True)
class Lit:
    value: Any  # str | int | float | bool | list of scalar literals


@dataclass(frozen=True)
class Name:
    id: str


@dataclass(frozen=True)
class Field:
    obj: "Expr"
    name: str


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class CallTarget:
    """App or api position of an api-call: a literal name or a scoped variable."""

    name: str
    dynamic: bool = False


@dataclass(frozen=True)
class ApiCall:
    app: CallTarget
    api: CallTarget
    args: tuple[tuple[str, "Expr"], ...] = ()


@dataclass(frozen=True)
class ComponentCall:
    name: str
    args: tuple[tuple[str, "Expr"], ...] = ()


Expr = Union[Lit, Name, Field, Binary, ApiCall, ComponentCall]


# --- statements ---


@dataclass(frozen=True)
class Let:
    name: str
    expr: Expr


@dataclass(frozen=True)
class ExprStmt:
    call: Union[ApiCall, ComponentCall]


@dataclass(frozen=True)
class If:
    cond: Expr
    then: tuple["Stmt", ...]
    orelse: tuple["Stmt", ...] = ()


@dataclass(frozen=True)
class Foreach:
    var: str
    iterable: Expr
    body: tuple["Stmt", ...]


@dataclass(frozen=True)
class Return:
    expr: Expr | None = None


Stmt = Union[Let, ExprStmt, If, Foreach, Return]


@dataclass(frozen=True)
class Function:
    """Root of every policy or component: one named, parameterized body."""

    name: str
    params: tuple[str, ...]
    body: tuple[Stmt, ...]


# --- rendering ---

_CMP_OPS = ("==", "!=", "<", "<=", ">", ">=")
_PRECEDENCE = {"==": 1, "!=": 1, "<": 1, "<=": 1, ">": 1, ">=": 1, "+": 2, "-": 2, "*": 3}


def render_literal(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")
        return f'"{escaped}"'
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(render_literal(v) for v in value) + "]"
    raise TypeError(f"cannot render literal of type {type(value).__name__}")


def _render_args(args: tuple[tuple[str, Expr], ...]) -> str:
    return ", ".join(f"{name}={render_expr(value)}" for name, value in args)


def render_expr(expr: Expr, parent_prec: int = 0, right_side: bool = False) -> str:
    if isinstance(expr, Lit):
        return render_literal(expr.value)
    if isinstance(expr, Name):
        return expr.id
    if isinstance(expr, Field):
        return f"{render_expr(expr.obj, 4)}.{expr.name}"
    if isinstance(expr, ApiCall):
        return f"call {expr.app.name}.{expr.api.name}({_render_args(expr.args)})"
    if isinstance(expr, ComponentCall):
        return f"use {expr.name}({_render_args(expr.args)})"
    if isinstance(expr, Binary):
        prec = _PRECEDENCE[expr.op]
        text = (
            f"{render_expr(expr.left, prec)} {expr.op} "
            f"{render_expr(expr.right, prec, right_side=True)}"
        )
        if prec < parent_prec or (prec == parent_prec and right_side):
            return f"({text})"
        return text
    raise TypeError(f"cannot render expression {expr!r}")


def _render_block(stmts: tuple[Stmt, ...], depth: int) -> list[str]:
    pad = INDENT * depth
    lines: list[str] = []
    for stmt in stmts:
        if isinstance(stmt, Let):
            lines.append(f"{pad}let {stmt.name} = {render_expr(stmt.expr)}")
        elif isinstance(stmt, ExprStmt):
            lines.append(f"{pad}{render_expr(stmt.call)}")
        elif isinstance(stmt, If):
            lines.append(f"{pad}if {render_expr(stmt.cond)} {{")
            lines.extend(_render_block(stmt.then, depth + 1))
            if stmt.orelse:
                lines.append(f"{pad}}} else {{")
                lines.extend(_render_block(stmt.orelse, depth + 1))
            lines.append(f"{pad}}}")
        elif isinstance(stmt, Foreach):
            lines.append(f"{pad}foreach {stmt.var} in {render_expr(stmt.iterable)} {{")
            lines.extend(_render_block(stmt.body, depth + 1))
            lines.append(f"{pad}}}")
        elif isinstance(stmt, Return):
            if stmt.expr is None:
                lines.append(f"{pad}return")
            else:
                lines.append(f"{pad}return {render_expr(stmt.expr)}")
        else:
            raise TypeError(f"cannot render statement {stmt!r}")
    return lines


def render(fn: Function) -> str:
    """Canonical source text of a function (parse/render round-trip safe)."""
    header = f"fn {fn.name}({', '.join(fn.params)}) {{"
    lines = [header] + _render_block(fn.body, 1) + ["}"]
    return "\n".join(lines) + "\n"


# --- tree walks ---


def iter_statements(stmts: tuple[Stmt, ...]) -> Iterator[Stmt]:
    """All statements in program order, descending into blocks."""
    for stmt in stmts:
        yield stmt
        if isinstance(stmt, If):
            yield from iter_statements(stmt.then)
            yield from iter_statements(stmt.orelse)
        elif isinstance(stmt, Foreach):
            yield from iter_statements(stmt.body)


def _iter_exprs(expr: Expr) -> Iterator[Expr]:
    yield expr
    if isinstance(expr, Field):
        yield from _iter_exprs(expr.obj)
    elif isinstance(expr, Binary):
        yield from _iter_exprs(expr.left)
        yield from _iter_exprs(expr.right)
    elif isinstance(expr, (ApiCall, ComponentCall)):
        for _, arg in expr.args:
            yield from _iter_exprs(arg)


def iter_expressions(fn: Function) -> Iterator[Expr]:
    for stmt in iter_statements(fn.body):
        if isinstance(stmt, Let):
            yield from _iter_exprs(stmt.expr)
        elif isinstance(stmt, ExprStmt):
            yield from _iter_exprs(stmt.call)
        elif isinstance(stmt, If):
            yield from _iter_exprs(stmt.cond)
        elif isinstance(stmt, Foreach):
            yield from _iter_exprs(stmt.iterable)
        elif isinstance(stmt, Return) and stmt.expr is not None:
            yield from _iter_exprs(stmt.expr)


def component_call_names(fn: Function) -> tuple[str, ...]:
    """Component names called anywhere in the body, in first-use order."""
    seen: list[str] = []
    for expr in iter_expressions(fn):
        if isinstance(expr, ComponentCall) and expr.name not in seen:
            seen.append(expr.name)
    return tuple(seen)


def api_calls(fn: Function) -> tuple[ApiCall, ...]:
    return tuple(e for e in iter_expressions(fn) if isinstance(e, ApiCall))
