"""Policy DSL: AST, parser, renderer, and interpreter."""

from . import nodes
from .interp import (
    ApiError,
    ApiExecutor,
    ComponentCycleError,
    ExecutionTrace,
    STATUS_COMPLETED,
    STATUS_RUNTIME_ERROR,
    check_component_cycles,
    execute,
    free_parameters,
    instantiate,
    substitute,
)
from .nodes import Function, render
from .parser import LangError, parse, parse_many

__all__ = [
    "ApiError",
    "ApiExecutor",
    "ComponentCycleError",
    "ExecutionTrace",
    "Function",
    "LangError",
    "STATUS_COMPLETED",
    "STATUS_RUNTIME_ERROR",
    "check_component_cycles",
    "execute",
    "free_parameters",
    "instantiate",
    "nodes",
    "parse",
    "parse_many",
    "render",
    "substitute",
]
