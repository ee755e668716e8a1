"""Suite orchestration: the per-domain solve loop, post-success component
learning, generalization triggering, and repository seeding.

A domain is solved by abstracting it, optionally retrieving reusable
components, generating a parameterized policy, validating it on every task
binding, and debugging failures within a fixed budget. In hclgp mode a solved
policy is decomposed into components that only enter the learned store after
the updated policy re-validates on the original bindings; gp mode disables
retrieval, decomposition, and generalization. Failures never raise; they are
encoded in DomainResult.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .agents import (
    AbstractionResult,
    AgentReplyError,
    abstract_domain,
    debug_policy,
    decompose_policy,
    generalize_dedup,
    generate_policy,
    search_components,
)
from .gateway import Gateway, GatewayError, Usage
from .generalize import run_generalization
from .lang.interp import instantiate
from .lang.nodes import Function, component_call_names
from .lang.parser import parse
from .miniworld.validator import validate
from .miniworld.world import MiniWorld
from .model import (
    ApiDoc,
    Domain,
    EngineConfig,
    ModelError,
    ParameterBinding,
    Policy,
    ValidationOutcome,
)
from .repository import USAGE_DIRECT, USAGE_INDIRECT, Component, ComponentRepository
from .retrieval import VectorIndex, index_api_docs

MODE_GP = "gp"
MODE_HCLGP = "hclgp"
MODES = (MODE_GP, MODE_HCLGP)

STATUS_SOLVED = "solved"
STATUS_FAILED = "failed"

EVENT_DEBUG_ITERATION = "debug-iteration"
EVENT_GENERALIZATION = "generalization-pass"
EVENT_DOMAIN_SOLVED = "domain-solved"
EVENT_KINDS = (EVENT_DEBUG_ITERATION, EVENT_GENERALIZATION, EVENT_DOMAIN_SOLVED)

# ids for suite-level events that belong to no single domain
SUITE_SCOPE = "*"

_AGENT_FAILURES = (AgentReplyError, ModelError, GatewayError)


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ModelError(f"mode must be one of {', '.join(MODES)}, got {mode!r}")


@dataclass(frozen=True)
class RunEvent:
    """One timeline entry: a policy-generation cycle, a generalization pass,
    or a domain getting solved, with cumulative billed tokens at that point."""

    ordinal: int
    kind: str
    domain_id: str
    usage: Usage

    def __post_init__(self) -> None:
        if self.ordinal < 1:
            raise ModelError("event ordinal must be >= 1")
        if self.kind not in EVENT_KINDS:
            raise ModelError(f"unknown event kind {self.kind!r}")

    @property
    def cumulative_tokens(self) -> int:
        return self.usage.input_tokens + self.usage.output_tokens

    def to_dict(self) -> dict:
        return {
            "ordinal": self.ordinal,
            "kind": self.kind,
            "domain_id": self.domain_id,
            "input_tokens": self.usage.input_tokens,
            "output_tokens": self.usage.output_tokens,
        }


@dataclass(frozen=True)
class DomainResult:
    """Outcome of one domain: solved iff every task passed under the final
    policy; failed domains keep their per-task map for partial-credit TGC."""

    domain_id: str
    status: str
    task_passes: dict[str, bool]
    iterations: int
    usage: Usage
    policy_id: str
    components_learned: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "task_passes", dict(self.task_passes))
        object.__setattr__(self, "components_learned", tuple(self.components_learned))
        if self.status not in (STATUS_SOLVED, STATUS_FAILED):
            raise ModelError(f"unknown status {self.status!r}")
        if not self.task_passes:
            raise ModelError(f"domain {self.domain_id}: empty task map")
        all_passed = all(self.task_passes.values())
        if (self.status == STATUS_SOLVED) != all_passed:
            raise ModelError(
                f"domain {self.domain_id}: status {self.status} contradicts task map"
            )
        if self.iterations < 0:
            raise ModelError("iterations must be >= 0")

    @property
    def solved(self) -> bool:
        return self.status == STATUS_SOLVED

    @property
    def tasks_passed(self) -> int:
        return sum(1 for passed in self.task_passes.values() if passed)

    def to_dict(self) -> dict:
        return {
            "domain_id": self.domain_id,
            "status": self.status,
            "task_passes": dict(sorted(self.task_passes.items())),
            "iterations": self.iterations,
            "input_tokens": self.usage.input_tokens,
            "output_tokens": self.usage.output_tokens,
            "policy_id": self.policy_id,
            "components_learned": list(self.components_learned),
        }


@dataclass(frozen=True)
class ArchiveEntry:
    """A solved domain's policy plus the bindings needed to re-validate it."""

    domain: Domain
    policy: Policy
    bindings: tuple[ParameterBinding, ...]

    def binding_for(self, task_id: str) -> ParameterBinding:
        for binding in self.bindings:
            if binding.task_id == task_id:
                return binding
        raise ModelError(f"no binding archived for task {task_id!r}")


@dataclass(frozen=True)
class SuiteReport:
    mode: str
    results: tuple[DomainResult, ...]
    events: tuple[RunEvent, ...]
    generalization_passes: tuple[dict, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "results", tuple(self.results))
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "generalization_passes", tuple(self.generalization_passes))
        ordinals = [event.ordinal for event in self.events]
        if ordinals != sorted(set(ordinals)):
            raise ModelError("event ordinals must be strictly increasing")

    @property
    def solved_domains(self) -> int:
        return sum(1 for result in self.results if result.solved)

    @property
    def all_solved(self) -> bool:
        return bool(self.results) and self.solved_domains == len(self.results)

    @property
    def debug_iterations(self) -> int:
        return sum(1 for event in self.events if event.kind == EVENT_DEBUG_ITERATION)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "domains": len(self.results),
            "solved": self.solved_domains,
            "debug_iterations": self.debug_iterations,
            "generalization_passes": list(self.generalization_passes),
            "results": [result.to_dict() for result in self.results],
        }


class Engine:
    """Shared run state: world, gateway, repository, archive, event log.

    The call_log records which agent operations ran, letting tests assert the
    gp-mode contract (no component search, no decomposition).
    """

    def __init__(
        self,
        gateway: Gateway,
        world: MiniWorld | None = None,
        config: EngineConfig | None = None,
        repo: ComponentRepository | None = None,
    ):
        self.gateway = gateway
        self.world = world or MiniWorld.from_bundled()
        self.config = config or EngineConfig()
        self.repo = repo or ComponentRepository()
        self.api_index = VectorIndex(self.repo.provider.dimension)
        index_api_docs(self.api_index, self.world.api_docs(), self.repo.provider)
        self._docs = {doc.doc_id: doc for doc in self.world.api_docs()}
        self.archive: dict[str, ArchiveEntry] = {}
        self.events: list[RunEvent] = []
        self.call_log: list[str] = []
        self.iterations = 0
        self._passes_fired = 0
        self._ordinal = 0

    # -- event log -------------------------------------------------------

    def _emit(self, kind: str, domain_id: str) -> RunEvent:
        self._ordinal += 1
        event = RunEvent(
            ordinal=self._ordinal,
            kind=kind,
            domain_id=domain_id,
            usage=self.gateway.ledger.total_usage(),
        )
        self.events.append(event)
        return event

    # -- shared lookups ----------------------------------------------------

    def _live_resolver(self) -> dict[str, Function]:
        """Name -> parsed body over live components; validated names win and
        learned duplicates resolve to the oldest, keeping execution stable."""
        resolver: dict[str, Function] = {}
        for component in self.repo.validated_components():
            resolver[component.name] = component.parsed()
        for component in self.repo.learned_components():
            resolver.setdefault(component.name, component.parsed())
        return resolver

    def _live_by_name(self) -> dict[str, Component]:
        by_name: dict[str, Component] = {}
        for component in self.repo.validated_components():
            by_name[component.name] = component
        for component in self.repo.learned_components():
            by_name.setdefault(component.name, component)
        return by_name

    def _retrieve_api_docs(self, abstraction: AbstractionResult) -> list[ApiDoc]:
        query = self.repo.provider.embed(abstraction.steps_text())
        ranked = self.api_index.search(query, k=self.config.retrieval_k)
        return [self._docs[doc_id] for doc_id, _ in ranked]

    def _offered_components(self, abstraction: AbstractionResult) -> list[Component]:
        """Top-k retrieval deduplicated by name (best rank wins) so a policy's
        component references resolve unambiguously."""
        self.call_log.append("search_components")
        ranked = search_components(
            abstraction, self.repo.index, self.repo.provider, k=self.config.retrieval_k
        )
        offered: list[Component] = []
        seen: set[str] = set()
        for component_id in ranked:
            component = self.repo.get(component_id)
            if component.name not in seen:
                seen.add(component.name)
                offered.append(component)
        return offered

    def _validate_policy(
        self,
        domain: Domain,
        bindings: Sequence[ParameterBinding],
        policy: Policy,
        resolver: Mapping[str, Function],
    ) -> list[ValidationOutcome]:
        by_task = {binding.task_id: binding for binding in bindings}
        outcomes = []
        for task in domain.tasks:
            plan = instantiate(policy, by_task[task.id])
            outcomes.append(validate(self.world, plan, task, resolver))
        return outcomes

    # -- the per-domain loop ----------------------------------------------

    def solve_domain(self, domain: Domain, mode: str) -> DomainResult:
        _check_mode(mode)
        usage_before = self.gateway.ledger.total_usage()

        abstraction: AbstractionResult | None = None
        try:
            self.call_log.append("abstract_domain")
            abstraction = abstract_domain(self.gateway, domain)
        except _AGENT_FAILURES:
            abstraction = None

        offered: list[Component] = []
        docs: list[ApiDoc] = []
        if abstraction is not None:
            if mode == MODE_HCLGP:
                offered = self._offered_components(abstraction)
            docs = self._retrieve_api_docs(abstraction)

        policy: Policy | None = None
        outcomes: list[ValidationOutcome] = []
        iterations = 0
        solved = False
        resolver = self._live_resolver()
        if abstraction is not None:
            for attempt in range(1 + self.config.debug_budget):
                iterations += 1
                candidate: Policy | None = None
                try:
                    if policy is None:
                        self.call_log.append("generate_policy")
                        candidate = generate_policy(self.gateway, abstraction, offered, docs)
                    else:
                        self.call_log.append("debug_policy")
                        candidate = debug_policy(
                            self.gateway, abstraction, policy, outcomes,
                            offered, docs, attempt=attempt,
                        )
                except _AGENT_FAILURES:
                    candidate = None
                if candidate is not None:
                    policy = candidate
                    outcomes = self._validate_policy(
                        domain, abstraction.bindings, policy, resolver
                    )
                    solved = all(outcome.passed for outcome in outcomes)
                self.iterations += 1
                self._emit(EVENT_DEBUG_ITERATION, domain.id)
                if solved:
                    break

        final_policy = policy
        learned_ids: tuple[str, ...] = ()
        if solved and mode == MODE_HCLGP:
            final_policy, learned_ids = self._learn_components(
                domain, abstraction, policy, resolver
            )
        if solved:
            self._record_usage(domain.id, final_policy, offered)
            self.archive[domain.id] = ArchiveEntry(
                domain=domain, policy=final_policy, bindings=abstraction.bindings
            )
            self._emit(EVENT_DOMAIN_SOLVED, domain.id)

        task_passes = {task.id: False for task in domain.tasks}
        for outcome in outcomes:
            task_passes[outcome.task_id] = outcome.passed
        usage_after = self.gateway.ledger.total_usage()
        return DomainResult(
            domain_id=domain.id,
            status=STATUS_SOLVED if solved else STATUS_FAILED,
            task_passes=task_passes,
            iterations=iterations,
            usage=Usage(
                input_tokens=usage_after.input_tokens - usage_before.input_tokens,
                output_tokens=usage_after.output_tokens - usage_before.output_tokens,
            ),
            policy_id=f"pol-{domain.id}" if solved else "",
            components_learned=learned_ids,
        )

    def _learn_components(
        self,
        domain: Domain,
        abstraction: AbstractionResult,
        policy: Policy,
        resolver: Mapping[str, Function],
    ) -> tuple[Policy, tuple[str, ...]]:
        """Decompose a solved policy; accept only if the updated policy
        re-validates on the original bindings, else keep the original."""
        for _ in range(1 + self.config.debug_budget):
            try:
                self.call_log.append("decompose_policy")
                drafts, updated = decompose_policy(self.gateway, policy, domain)
            except _AGENT_FAILURES:
                continue
            candidate_resolver = dict(resolver)
            for draft in drafts:
                candidate_resolver[draft.name] = parse(draft.body)
            outcomes = self._validate_policy(
                domain, abstraction.bindings, updated, candidate_resolver
            )
            if all(outcome.passed for outcome in outcomes):
                learned = tuple(
                    self.repo.add_learned(
                        name=draft.name,
                        signature=draft.signature,
                        body=draft.body,
                        description=draft.description,
                        usage_info=draft.usage_info,
                        origin_domains=draft.origin_domains,
                    ).id
                    for draft in drafts
                )
                return updated, learned
        return policy, ()

    def _record_usage(
        self, domain_id: str, policy: Policy, offered: Sequence[Component]
    ) -> None:
        """Record reuse of pre-existing components: direct when the final
        policy calls them, indirect when reached one level into their bodies."""
        by_name = {component.name: component for component in offered}
        direct = [
            by_name[name]
            for name in policy.referenced_components
            if name in by_name
        ]
        for component in direct:
            self.repo.record_usage(component.id, domain_id, USAGE_DIRECT, self.iterations)
        live = self._live_by_name()
        direct_names = {component.name for component in direct}
        for component in direct:
            for callee in component_call_names(component.parsed()):
                if callee in direct_names or callee not in live:
                    continue
                self.repo.record_usage(
                    live[callee].id, domain_id, USAGE_INDIRECT, self.iterations
                )

    # -- generalization wiring ----------------------------------------------

    def _generalize_agent(self):
        def agent(cluster_id, members, affected, feedback, attempt):
            return generalize_dedup(
                self.gateway, cluster_id, members, affected,
                feedback=feedback, attempt=attempt,
            )

        return agent

    def _generalize_validator(self):
        def validator(domain_id, policy, resolver):
            entry = self.archive[domain_id]
            return self._validate_policy(entry.domain, entry.bindings, policy, resolver)

        return validator

    def run_generalization_pass(self) -> dict:
        """One full cluster-and-consolidate pass over all live components;
        accepted revisions replace the archived policies."""
        self.call_log.append("run_generalization")
        policies = {domain_id: entry.policy for domain_id, entry in self.archive.items()}
        report, revisions = run_generalization(
            self.repo,
            policies,
            self._generalize_agent(),
            self._generalize_validator(),
            self.config,
        )
        for domain_id, policy in revisions.items():
            entry = self.archive[domain_id]
            self.archive[domain_id] = ArchiveEntry(
                domain=entry.domain, policy=policy, bindings=entry.bindings
            )
        self._emit(EVENT_GENERALIZATION, SUITE_SCOPE)
        return report.to_dict()

    # -- suite drivers -------------------------------------------------------

    def run_suite(self, domains: Sequence[Domain], mode: str) -> SuiteReport:
        """Process domains in declared order; in hclgp mode run a
        generalization pass whenever the global debug-iteration counter
        crosses a multiple of the trigger, and catch up at the end so passes
        fired == floor(iterations / trigger)."""
        _check_mode(mode)
        results = []
        passes: list[dict] = []
        for domain in domains:
            results.append(self.solve_domain(domain, mode))
            if mode == MODE_HCLGP:
                passes.extend(self._due_generalization())
        if mode == MODE_HCLGP:
            passes.extend(self._due_generalization())
        return SuiteReport(
            mode=mode,
            results=tuple(results),
            events=tuple(self.events),
            generalization_passes=tuple(passes),
        )

    def _due_generalization(self) -> list[dict]:
        fired = []
        while self._passes_fired < self.iterations // self.config.generalization_trigger:
            fired.append(self.run_generalization_pass())
            self._passes_fired += 1
        return fired

    def seed_repository(
        self, domains: Sequence[Domain], out_dir: str | Path | None = None
    ) -> SuiteReport:
        """Solve the training domains in hclgp mode, consolidate the
        accumulated components with two extra generalization passes, seal the
        survivors as the seed library, and optionally persist it."""
        if self.repo.live_components() or self.repo.tombstoned_components():
            raise ModelError("seeding requires an empty component repository")
        report = self.run_suite(domains, MODE_HCLGP)
        passes = list(report.generalization_passes)
        passes.append(self.run_generalization_pass())
        passes.append(self.run_generalization_pass())
        self.repo.seal_seed()
        if out_dir is not None:
            self.repo.save(out_dir)
        return SuiteReport(
            mode=report.mode,
            results=report.results,
            events=tuple(self.events),
            generalization_passes=tuple(passes),
        )
