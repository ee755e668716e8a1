"""Core domain types, engine configuration, and canonical serialization.

Everything here is a frozen value object: construction validates invariants,
`to_dict`/`from_dict` round-trip through the canonical JSON layer used by the
component repository and report files, and nothing mutates after `__init__`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from typing import Any, Iterable, Mapping, Sequence

KIND_STRING = "string"
KIND_NUMBER = "number"
KIND_BOOLEAN = "boolean"
KIND_STRING_LIST = "list-of-string"
LITERAL_KINDS = (KIND_STRING, KIND_NUMBER, KIND_BOOLEAN, KIND_STRING_LIST)

Literal = Any  # str | int | float | bool | list[str]


class ModelError(ValueError):
    """An invariant of a core type was violated."""


def literal_kind(value: Literal) -> str | None:
    """Classify a literal into one of the four semantic-type tags."""
    if isinstance(value, bool):
        return KIND_BOOLEAN
    if isinstance(value, str):
        return KIND_STRING
    if isinstance(value, (int, float)):
        return KIND_NUMBER
    if isinstance(value, (list, tuple)) and all(isinstance(v, str) for v in value):
        return KIND_STRING_LIST
    return None


def canonical_json(data: Any, *, indent: int | None = None) -> str:
    """Serialize to UTF-8 JSON with stable field order.

    Field order of type dicts is declaration order (the dicts are built that
    way); free-form maps must be sorted by the caller (see `sorted_map`).
    """
    return json.dumps(data, ensure_ascii=False, indent=indent, sort_keys=False)


def sorted_map(values: Mapping[str, Any]) -> dict[str, Any]:
    """Free-form maps serialize with lexicographically sorted keys."""
    return {k: values[k] for k in sorted(values)}


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ModelError(message)


def _require_identifier(value: str, what: str) -> None:
    _require(isinstance(value, str) and value != "", f"{what} must be a non-empty string")


def _unique(items: Iterable[str], what: str) -> None:
    seen = set()
    for item in items:
        if item in seen:
            raise ModelError(f"duplicate {what}: {item!r}")
        seen.add(item)


@dataclass(frozen=True)
class Param:
    """A named parameter with a semantic-type tag (signature or API schema)."""

    name: str
    kind: str

    def __post_init__(self) -> None:
        _require_identifier(self.name, "parameter name")
        _require(self.kind in LITERAL_KINDS, f"unknown kind {self.kind!r} for parameter {self.name!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "kind": self.kind}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Param":
        return cls(name=data["name"], kind=data["kind"])


@dataclass(frozen=True)
class ApiDoc:
    """Documentation entry for one API of one app."""

    app: str
    api: str
    params: tuple[Param, ...]
    description: str

    def __post_init__(self) -> None:
        _require_identifier(self.app, "app name")
        _require_identifier(self.api, "api name")
        _require(self.description.strip() != "", f"description of {self.app}.{self.api} must be non-empty")
        object.__setattr__(self, "params", tuple(self.params))
        _unique((p.name for p in self.params), f"parameter in {self.app}.{self.api}")

    @property
    def doc_id(self) -> str:
        return f"{self.app}.{self.api}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "app": self.app,
            "api": self.api,
            "params": [p.to_dict() for p in self.params],
            "description": self.description,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ApiDoc":
        return cls(
            app=data["app"],
            api=data["api"],
            params=tuple(Param.from_dict(p) for p in data["params"]),
            description=data["description"],
        )


@dataclass(frozen=True)
class MetaDomainDescriptor:
    """The shared action space: a named catalog of app APIs."""

    name: str
    api_catalog: tuple[ApiDoc, ...]

    def __post_init__(self) -> None:
        _require_identifier(self.name, "meta-domain name")
        object.__setattr__(self, "api_catalog", tuple(self.api_catalog))
        _unique((d.doc_id for d in self.api_catalog), "api catalog entry")

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "api_catalog": [d.to_dict() for d in self.api_catalog]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MetaDomainDescriptor":
        return cls(
            name=data["name"],
            api_catalog=tuple(ApiDoc.from_dict(d) for d in data["api_catalog"]),
        )


@dataclass(frozen=True)
class GoalTest:
    """A named predicate over the final world state; the validator interprets it."""

    name: str
    kind: str
    args: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        _require_identifier(self.name, "goal test name")
        _require_identifier(self.kind, "goal test kind")
        object.__setattr__(self, "args", dict(self.args))

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "kind": self.kind, "args": sorted_map(self.args)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GoalTest":
        return cls(name=data["name"], kind=data["kind"], args=dict(data.get("args", {})))


@dataclass(frozen=True)
class TaskInstance:
    """One task: instruction text, an opaque initial-state seed, and goal tests."""

    id: str
    instruction: str
    initial_state_seed: str
    goal_tests: tuple[GoalTest, ...]

    def __post_init__(self) -> None:
        _require_identifier(self.id, "task id")
        _require(self.instruction.strip() != "", f"task {self.id}: instruction must be non-empty")
        object.__setattr__(self, "goal_tests", tuple(self.goal_tests))
        _require(len(self.goal_tests) >= 1, f"task {self.id}: at least one goal test required")
        _unique((g.name for g in self.goal_tests), f"goal test in task {self.id}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "instruction": self.instruction,
            "initial_state_seed": self.initial_state_seed,
            "goal_tests": [g.to_dict() for g in self.goal_tests],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TaskInstance":
        return cls(
            id=data["id"],
            instruction=data["instruction"],
            initial_state_seed=data["initial_state_seed"],
            goal_tests=tuple(GoalTest.from_dict(g) for g in data["goal_tests"]),
        )


@dataclass(frozen=True)
class Domain:
    """An ordered group of related task instances sharing procedural structure."""

    id: str
    tasks: tuple[TaskInstance, ...]

    def __post_init__(self) -> None:
        _require_identifier(self.id, "domain id")
        object.__setattr__(self, "tasks", tuple(self.tasks))
        _require(len(self.tasks) >= 1, f"domain {self.id}: at least one task required")
        _unique((t.id for t in self.tasks), f"task id in domain {self.id}")

    def task(self, task_id: str) -> TaskInstance:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(task_id)

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "tasks": [t.to_dict() for t in self.tasks]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Domain":
        return cls(id=data["id"], tasks=tuple(TaskInstance.from_dict(t) for t in data["tasks"]))


@dataclass(frozen=True)
class PolicySignature:
    """Name and ordered typed parameters of a parameterized policy."""

    name: str
    params: tuple[Param, ...]

    def __post_init__(self) -> None:
        _require_identifier(self.name, "signature name")
        object.__setattr__(self, "params", tuple(self.params))
        _unique((p.name for p in self.params), f"parameter in signature {self.name}")

    def param_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)

    def render(self) -> str:
        """Canonical one-line form, e.g. ``pay_send(recipient: string, amount: number)``."""
        inner = ", ".join(f"{p.name}: {p.kind}" for p in self.params)
        return f"{self.name}({inner})"

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "params": [p.to_dict() for p in self.params]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PolicySignature":
        return cls(name=data["name"], params=tuple(Param.from_dict(p) for p in data["params"]))


@dataclass(frozen=True)
class BindingReport:
    """Outcome of checking a parameter binding against a signature."""

    missing: tuple[str, ...] = ()
    extra: tuple[str, ...] = ()
    mismatched: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not (self.missing or self.extra or self.mismatched)

    def describe(self) -> str:
        if self.ok:
            return "ok"
        parts = []
        if self.missing:
            parts.append("missing: " + ", ".join(self.missing))
        if self.extra:
            parts.append("extra: " + ", ".join(self.extra))
        if self.mismatched:
            parts.append("type mismatch: " + ", ".join(self.mismatched))
        return "; ".join(parts)


@dataclass(frozen=True)
class ParameterBinding:
    """Concrete literal values for one task, keyed by signature parameter name."""

    task_id: str
    values: dict[str, Literal]

    def __post_init__(self) -> None:
        _require_identifier(self.task_id, "binding task id")
        object.__setattr__(self, "values", dict(self.values))
        for name, value in self.values.items():
            _require(
                literal_kind(value) is not None,
                f"binding for {self.task_id}: value of {name!r} is not a supported literal",
            )

    def to_dict(self) -> dict[str, Any]:
        return {"task_id": self.task_id, "values": sorted_map(self.values)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ParameterBinding":
        return cls(task_id=data["task_id"], values=dict(data["values"]))


def check_binding(signature: PolicySignature, binding: ParameterBinding) -> BindingReport:
    """Check that a binding covers exactly the signature's params with matching kinds."""
    sig_names = set(signature.param_names())
    bound_names = set(binding.values)
    missing = tuple(sorted(sig_names - bound_names))
    extra = tuple(sorted(bound_names - sig_names))
    mismatched = tuple(
        sorted(
            p.name
            for p in signature.params
            if p.name in binding.values and literal_kind(binding.values[p.name]) != p.kind
        )
    )
    return BindingReport(missing=missing, extra=extra, mismatched=mismatched)


@dataclass(frozen=True)
class Policy:
    """A parameterized program in the policy DSL plus the component ids it calls."""

    signature: PolicySignature
    source: str
    referenced_components: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "referenced_components", tuple(self.referenced_components))
        from .lang.parser import LangError, parse

        try:
            ast = parse(self.source)
        except LangError as exc:
            raise ModelError(f"policy {self.signature.name}: source does not parse: {exc}") from exc
        if ast.name != self.signature.name:
            raise ModelError(
                f"policy source defines {ast.name!r} but signature names {self.signature.name!r}"
            )
        if ast.params != self.signature.param_names():
            raise ModelError(
                f"policy {self.signature.name}: source params {ast.params} "
                f"differ from signature params {self.signature.param_names()}"
            )
        from .lang.nodes import component_call_names

        undeclared = [n for n in component_call_names(ast) if n not in self.referenced_components]
        if undeclared:
            raise ModelError(
                f"policy {self.signature.name}: calls undeclared component(s) "
                f"{', '.join(undeclared)}"
            )

    def parsed(self):
        from .lang.parser import parse

        return parse(self.source)

    def component_calls(self) -> tuple[str, ...]:
        """Names of components called anywhere in the source, in first-use order."""
        from .lang.nodes import component_call_names

        return component_call_names(self.parsed())

    def to_dict(self) -> dict[str, Any]:
        return {
            "signature": self.signature.to_dict(),
            "source": self.source,
            "referenced_components": list(self.referenced_components),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Policy":
        return cls(
            signature=PolicySignature.from_dict(data["signature"]),
            source=data["source"],
            referenced_components=tuple(data.get("referenced_components", ())),
        )


@dataclass(frozen=True)
class Plan:
    """A policy instantiated with concrete values; executable as-is."""

    task_id: str
    instantiated_source: str

    def __post_init__(self) -> None:
        _require_identifier(self.task_id, "plan task id")
        from .lang.parser import LangError, parse

        try:
            ast = parse(self.instantiated_source)
        except LangError as exc:
            raise ModelError(f"plan for {self.task_id}: source does not parse: {exc}") from exc
        if ast.params:
            raise ModelError(
                f"plan for {self.task_id}: free parameters remain: {', '.join(ast.params)}"
            )

    def parsed(self):
        from .lang.parser import parse

        return parse(self.instantiated_source)

    def to_dict(self) -> dict[str, Any]:
        return {"task_id": self.task_id, "instantiated_source": self.instantiated_source}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Plan":
        return cls(task_id=data["task_id"], instantiated_source=data["instantiated_source"])


@dataclass(frozen=True)
class ApiCallRecord:
    """One API call as executed: arguments plus either a response or an error."""

    app: str
    api: str
    args: dict[str, Any]
    response: Any = None
    error: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "args", dict(self.args))

    def to_dict(self) -> dict[str, Any]:
        return {
            "app": self.app,
            "api": self.api,
            "args": sorted_map(self.args),
            "response": self.response,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ApiCallRecord":
        return cls(
            app=data["app"],
            api=data["api"],
            args=dict(data["args"]),
            response=data.get("response"),
            error=data.get("error"),
        )


@dataclass(frozen=True)
class ValidationOutcome:
    """Per-task verdict with structured execution feedback."""

    task_id: str
    passed: bool
    failed_tests: tuple[str, ...] = ()
    error: str | None = None
    trace: tuple[ApiCallRecord, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "failed_tests", tuple(self.failed_tests))
        object.__setattr__(self, "trace", tuple(self.trace))
        if self.passed:
            _require(not self.failed_tests, f"outcome {self.task_id}: passed but tests failed")
            _require(self.error is None, f"outcome {self.task_id}: passed but error present")

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "passed": self.passed,
            "failed_tests": list(self.failed_tests),
            "error": self.error,
            "trace": [r.to_dict() for r in self.trace],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ValidationOutcome":
        return cls(
            task_id=data["task_id"],
            passed=data["passed"],
            failed_tests=tuple(data.get("failed_tests", ())),
            error=data.get("error"),
            trace=tuple(ApiCallRecord.from_dict(r) for r in data.get("trace", ())),
        )


@dataclass(frozen=True)
class EngineConfig:
    """Tunable constants; defaults match the reference experimental setup."""

    retrieval_k: int = 20
    cluster_threshold: float = 0.85
    debug_budget: int = 3
    generalization_trigger: int = 20
    price_per_m_input: float = 3.0
    price_per_m_output: float = 15.0

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            _require(value > 0, f"config {f.name} must be positive")
        _require(self.cluster_threshold <= 1.0, "cluster_threshold must be at most 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "retrieval_k": self.retrieval_k,
            "cluster_threshold": self.cluster_threshold,
            "debug_budget": self.debug_budget,
            "generalization_trigger": self.generalization_trigger,
            "price_per_m_input": self.price_per_m_input,
            "price_per_m_output": self.price_per_m_output,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EngineConfig":
        return cls(**{f.name: data[f.name] for f in fields(cls) if f.name in data})


def encode(obj: Any, *, indent: int | None = None) -> str:
    """Canonical text form of any core type (declared field order, UTF-8)."""
    return canonical_json(obj.to_dict(), indent=indent)


def decode(cls: type, text: str) -> Any:
    """Inverse of `encode` for any core type."""
    return cls.from_dict(json.loads(text))
