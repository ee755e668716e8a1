"""The model-facing agents: prompt construction and strict reply parsing.

Each operation renders one template, sends a single user message through the
gateway, and parses the tagged reply envelope. Prompts carry a RUN-CONTEXT
header line naming the agent, domain, attempt, and offered component ids so
scripted backends can match on the full invocation context. Policy prompts
include component summaries only, never bodies; generalize prompts include
bodies, since merging needs them.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Mapping, Sequence

from ..gateway import CompletionRequest, Gateway, Message
from ..generalize import GeneralizationProposal
from ..lang.nodes import Function, component_call_names, render
from ..lang.parser import LangError, parse, parse_many
from ..model import (
    ApiDoc,
    Domain,
    ModelError,
    ParameterBinding,
    Policy,
    PolicySignature,
    ValidationOutcome,
    canonical_json,
    check_binding,
)
from ..repository import Component, ComponentDraft, summary_block
from ..retrieval import EmbeddingProvider, VectorIndex
from .envelope import (
    AgentReplyEnvelope,
    AgentReplyError,
    POLICY_PREFIX,
    TAG_BINDINGS,
    TAG_COMPONENTS,
    TAG_POLICY,
    TAG_REPLACES,
    TAG_SIGNATURE,
    TAG_STEPS,
    TAG_USAGE_NOTES,
    parse_bindings,
    parse_signature,
    parse_usage_notes,
)

AGENT_ABSTRACT = "abstract"
AGENT_POLICY = "policy"
AGENT_DECOMPOSE = "decompose"
AGENT_GENERALIZE = "generalize"

TRACE_TAIL = 20


@lru_cache(maxsize=None)
def load_template(name: str) -> string.Template:
    text = (resources.files(__package__) / "templates" / f"{name}.txt").read_text(
        encoding="utf-8"
    )
    return string.Template(text)


@dataclass(frozen=True)
class AbstractionResult:
    """Shared workflow induced from a domain: steps, signature, per-task values."""

    domain_id: str
    high_level_steps: tuple[str, ...]
    signature: PolicySignature
    bindings: tuple[ParameterBinding, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "high_level_steps", tuple(self.high_level_steps))
        object.__setattr__(self, "bindings", tuple(self.bindings))
        if not self.high_level_steps:
            raise ModelError(f"abstraction for {self.domain_id}: no high-level steps")
        task_ids = [b.task_id for b in self.bindings]
        if len(set(task_ids)) != len(task_ids):
            raise ModelError(f"abstraction for {self.domain_id}: duplicate binding task ids")
        for binding in self.bindings:
            report = check_binding(self.signature, binding)
            if not report.ok:
                raise ModelError(
                    f"abstraction for {self.domain_id}: binding for task "
                    f"{binding.task_id} does not fit {self.signature.render()} "
                    f"({report.describe()})"
                )

    def binding_for(self, task_id: str) -> ParameterBinding:
        for binding in self.bindings:
            if binding.task_id == task_id:
                return binding
        raise KeyError(task_id)

    def steps_text(self) -> str:
        return "\n".join(self.high_level_steps)


# -- prompt fragments ---------------------------------------------------------


def render_api_docs(docs: Sequence[ApiDoc]) -> str:
    if not docs:
        return "(none)"
    lines = []
    for doc in docs:
        params = ", ".join(f"{p.name}: {p.kind}" for p in doc.params)
        lines.append(f"{doc.app}.{doc.api}({params}) -- {doc.description}")
    return "\n".join(lines)


def render_tasks(domain: Domain) -> str:
    lines = []
    for task in domain.tasks:
        goals = ", ".join(g.name for g in task.goal_tests)
        lines.append(f"- {task.id}: {task.instruction} (goals: {goals})")
    return "\n".join(lines)


def render_bindings(bindings: Sequence[ParameterBinding]) -> str:
    return "\n".join(
        canonical_json({"task": b.task_id, "values": dict(sorted(b.values.items()))})
        for b in bindings
    )


def render_summaries(components: Sequence[Component]) -> str:
    if not components:
        return "(none)"
    return "\n\n".join(summary_block(c) for c in components)


def render_component_full(component: Component) -> str:
    return f"{summary_block(component)}\nbody:\n{component.body.rstrip()}"


def render_failures(outcomes: Sequence[ValidationOutcome]) -> str:
    lines = []
    for outcome in outcomes:
        if outcome.passed:
            continue
        lines.append(f"task {outcome.task_id}:")
        lines.append(f"  error: {outcome.error or 'none'}")
        lines.append(f"  failed goal tests: {', '.join(outcome.failed_tests) or 'none'}")
        tail = outcome.trace[-TRACE_TAIL:]
        lines.append(f"  trace (last {len(tail)} of {len(outcome.trace)} calls):")
        for record in tail:
            lines.append(f"    {canonical_json(record.to_dict())}")
    return "\n".join(lines)


def _component_ids(components: Sequence[Component]) -> str:
    return ", ".join(c.id for c in components)


# -- prompt builders (exposed for dry runs) -----------------------------------


def build_abstract_prompt(domain: Domain) -> str:
    return load_template("abstract").substitute(
        domain_id=domain.id, tasks=render_tasks(domain)
    )


def build_policy_prompt(
    abstraction: AbstractionResult,
    components: Sequence[Component],
    api_docs: Sequence[ApiDoc],
) -> str:
    return load_template("policy").substitute(
        domain_id=abstraction.domain_id,
        attempt=0,
        component_ids=_component_ids(components),
        steps=abstraction.steps_text(),
        signature=abstraction.signature.render(),
        bindings=render_bindings(abstraction.bindings),
        api_docs=render_api_docs(api_docs),
        component_summaries=render_summaries(components),
    )


def build_debug_prompt(
    abstraction: AbstractionResult,
    policy: Policy,
    outcomes: Sequence[ValidationOutcome],
    components: Sequence[Component],
    api_docs: Sequence[ApiDoc],
    attempt: int,
) -> str:
    return load_template("debug").substitute(
        domain_id=abstraction.domain_id,
        attempt=attempt,
        component_ids=_component_ids(components),
        steps=abstraction.steps_text(),
        signature=abstraction.signature.render(),
        bindings=render_bindings(abstraction.bindings),
        previous_policy=policy.source.rstrip(),
        failures=render_failures(outcomes),
        api_docs=render_api_docs(api_docs),
        component_summaries=render_summaries(components),
    )


def build_decompose_prompt(policy: Policy, domain: Domain) -> str:
    return load_template("decompose").substitute(
        domain_id=domain.id, policy=policy.source.rstrip()
    )


def build_generalize_prompt(
    cluster_id: str,
    components: Sequence[Component],
    affected_policies: Mapping[str, Policy],
    feedback: str | None,
    attempt: int,
) -> str:
    policies_text = (
        "\n\n".join(
            f"domain {domain_id}:\n{policy.source.rstrip()}"
            for domain_id, policy in sorted(affected_policies.items())
        )
        or "(none)"
    )
    return load_template("generalize").substitute(
        cluster_id=cluster_id,
        attempt=attempt,
        components="\n\n".join(render_component_full(c) for c in components),
        policies=policies_text,
        feedback=feedback or "(first attempt)",
    )


# -- agents -------------------------------------------------------------------


def _complete(gateway: Gateway, agent: str, domain_id: str, prompt: str) -> AgentReplyEnvelope:
    request = CompletionRequest(messages=(Message(role="user", content=prompt),))
    response = gateway.complete(agent, domain_id, request)
    return AgentReplyEnvelope.parse(response.text)


def abstract_domain(gateway: Gateway, domain: Domain) -> AbstractionResult:
    envelope = _complete(gateway, AGENT_ABSTRACT, domain.id, build_abstract_prompt(domain))
    steps = tuple(
        line.strip() for line in envelope.one(TAG_STEPS).splitlines() if line.strip()
    )
    signature = parse_signature(envelope.one(TAG_SIGNATURE))
    bindings = parse_bindings(envelope.one(TAG_BINDINGS))
    try:
        abstraction = AbstractionResult(
            domain_id=domain.id,
            high_level_steps=steps,
            signature=signature,
            bindings=tuple(bindings),
        )
    except ModelError as exc:
        raise AgentReplyError(str(exc)) from exc
    bound = {b.task_id for b in abstraction.bindings}
    expected = {t.id for t in domain.tasks}
    if bound != expected:
        missing = ", ".join(sorted(expected - bound)) or "none"
        unknown = ", ".join(sorted(bound - expected)) or "none"
        raise AgentReplyError(
            f"bindings block must cover the domain's tasks exactly once "
            f"(missing: {missing}; unknown: {unknown})"
        )
    return abstraction


def search_components(
    abstraction: AbstractionResult,
    index: VectorIndex,
    provider: EmbeddingProvider,
    k: int = 20,
) -> list[str]:
    """Top-k live component ids by similarity to the abstraction's steps."""
    if len(index) == 0:
        return []
    query = provider.embed(abstraction.steps_text())
    return [entry_id for entry_id, _ in index.search(query, k=k)]


def _policy_from_block(
    block: str, signature: PolicySignature, known_components: set[str]
) -> Policy:
    try:
        fn = parse(block)
    except LangError as exc:
        raise AgentReplyError(f"policy block does not parse: {exc}") from exc
    called = component_call_names(fn)
    unknown = [name for name in called if name not in known_components]
    if unknown:
        raise AgentReplyError(
            f"policy block calls unknown component(s): {', '.join(unknown)}"
        )
    try:
        return Policy(signature=signature, source=render(fn), referenced_components=called)
    except ModelError as exc:
        raise AgentReplyError(f"policy block: {exc}") from exc


def generate_policy(
    gateway: Gateway,
    abstraction: AbstractionResult,
    components: Sequence[Component],
    api_docs: Sequence[ApiDoc],
) -> Policy:
    prompt = build_policy_prompt(abstraction, components, api_docs)
    envelope = _complete(gateway, AGENT_POLICY, abstraction.domain_id, prompt)
    return _policy_from_block(
        envelope.one(TAG_POLICY), abstraction.signature, {c.name for c in components}
    )


def debug_policy(
    gateway: Gateway,
    abstraction: AbstractionResult,
    policy: Policy,
    outcomes: Sequence[ValidationOutcome],
    components: Sequence[Component],
    api_docs: Sequence[ApiDoc],
    attempt: int,
) -> Policy:
    if all(outcome.passed for outcome in outcomes):
        raise ModelError("debug_policy requires at least one failed outcome")
    prompt = build_debug_prompt(abstraction, policy, outcomes, components, api_docs, attempt)
    envelope = _complete(gateway, AGENT_POLICY, abstraction.domain_id, prompt)
    return _policy_from_block(
        envelope.one(TAG_POLICY), abstraction.signature, {c.name for c in components}
    )


def _drafts_from_reply(
    envelope: AgentReplyEnvelope, origin_domains: tuple[str, ...]
) -> list[ComponentDraft]:
    block = envelope.one(TAG_COMPONENTS)
    try:
        functions = parse_many(block) if block.strip() else []
    except LangError as exc:
        raise AgentReplyError(f"components block does not parse: {exc}") from exc
    notes = parse_usage_notes(envelope.one(TAG_USAGE_NOTES))
    names = [fn.name for fn in functions]
    if len(set(names)) != len(names):
        raise AgentReplyError("components block defines duplicate names")
    if set(notes) != set(names):
        raise AgentReplyError(
            f"usage-notes block must cover the components exactly "
            f"(components: {', '.join(sorted(names)) or 'none'}; "
            f"notes: {', '.join(sorted(notes)) or 'none'})"
        )
    drafts = []
    for fn in functions:
        note = notes[fn.name]
        signature = parse_signature(note["signature"])
        if signature.name != fn.name or signature.param_names() != fn.params:
            raise AgentReplyError(
                f"usage-notes signature {note['signature']!r} does not match "
                f"component {fn.name}({', '.join(fn.params)})"
            )
        drafts.append(
            ComponentDraft(
                name=fn.name,
                signature=signature,
                body=render(fn),
                description=note["description"],
                usage_info=note["usage"],
                origin_domains=origin_domains,
            )
        )
    return drafts


def decompose_policy(
    gateway: Gateway, policy: Policy, domain: Domain
) -> tuple[list[ComponentDraft], Policy]:
    prompt = build_decompose_prompt(policy, domain)
    envelope = _complete(gateway, AGENT_DECOMPOSE, domain.id, prompt)
    drafts = _drafts_from_reply(envelope, (domain.id,))
    known = {draft.name for draft in drafts} | set(policy.referenced_components)
    updated = _policy_from_block(envelope.one(TAG_POLICY), policy.signature, known)
    return drafts, updated


def generalize_dedup(
    gateway: Gateway,
    cluster_id: str,
    components: Sequence[Component],
    affected_policies: Mapping[str, Policy],
    feedback: str | None = None,
    attempt: int = 0,
) -> GeneralizationProposal:
    if not components:
        raise ModelError("generalize_dedup requires at least one component")
    prompt = build_generalize_prompt(cluster_id, components, affected_policies, feedback, attempt)
    envelope = _complete(gateway, AGENT_GENERALIZE, cluster_id, prompt)

    origins = tuple(sorted({d for c in components for d in c.origin_domains}))
    drafts = _drafts_from_reply(envelope, origins)
    member_ids = {c.id for c in components}
    replaces = [
        line.strip() for line in envelope.one(TAG_REPLACES).splitlines() if line.strip()
    ]
    stray = [r for r in replaces if r not in member_ids]
    if stray:
        raise AgentReplyError(
            f"replaces block names non-members: {', '.join(stray)}"
        )

    surviving_names = {c.name for c in components if c.id not in set(replaces)}
    updated: dict[str, Policy] = {}
    for domain_id, block in envelope.prefixed(POLICY_PREFIX).items():
        if domain_id not in affected_policies:
            raise AgentReplyError(
                f"policy block for unknown domain {domain_id!r}"
            )
        original = affected_policies[domain_id]
        known = (
            {draft.name for draft in drafts}
            | surviving_names
            | set(original.referenced_components)
        )
        updated[domain_id] = _policy_from_block(block, original.signature, known)
    try:
        return GeneralizationProposal(
            cluster_id=cluster_id,
            components=tuple(drafts),
            updated_policies=updated,
            replaced_ids=tuple(replaces),
        )
    except ModelError as exc:
        raise AgentReplyError(str(exc)) from exc
