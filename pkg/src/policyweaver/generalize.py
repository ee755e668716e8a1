"""Greedy similarity clustering and the generalize/deduplicate pass.

Components are scanned in creation order; each joins the first cluster whose
seed is cosine-similar above the threshold, else founds its own. Per cluster,
an agent proposes merged or generalized components plus revised policies for
every domain that calls a replaced component; the proposal is accepted only
when every affected domain revalidates with its original bindings, and a
rejected proposal leaves stores and policies untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .lang.nodes import Function
from .model import EngineConfig, ModelError, Policy, ValidationOutcome
from .repository import (
    PROVENANCE_LEARNED,
    ComponentDraft,
    ComponentRepository,
    Component,
)
from .retrieval import EmbeddingProvider, component_text, cosine

# agent(cluster_id, components, affected_policies, feedback, attempt) -> proposal
GeneralizeAgent = Callable[
    [str, Sequence[Component], Mapping[str, Policy], "str | None", int],
    "GeneralizationProposal",
]
# validator(domain_id, policy, component resolver) -> per-task outcomes
PolicyValidator = Callable[[str, Policy, Mapping[str, Function]], Sequence[ValidationOutcome]]


@dataclass(frozen=True)
class Cluster:
    """One similarity group; the seed is its first (oldest) member."""

    seed_id: str
    member_ids: tuple[str, ...]
    seed_vector: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "member_ids", tuple(self.member_ids))
        if not self.member_ids or self.member_ids[0] != self.seed_id:
            raise ModelError(f"cluster {self.seed_id}: seed must be the first member")
        if len(set(self.member_ids)) != len(self.member_ids):
            raise ModelError(f"cluster {self.seed_id}: duplicate members")


@dataclass(frozen=True)
class GeneralizationProposal:
    """Agent output for one cluster: new components, revisions, replacements."""

    cluster_id: str
    components: tuple[ComponentDraft, ...]
    updated_policies: dict[str, Policy]
    replaced_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "updated_policies", dict(self.updated_policies))
        object.__setattr__(self, "replaced_ids", tuple(self.replaced_ids))
        if len(set(self.replaced_ids)) != len(self.replaced_ids):
            raise ModelError(f"proposal {self.cluster_id}: duplicate replaced ids")
        names = [draft.name for draft in self.components]
        if len(set(names)) != len(names):
            raise ModelError(f"proposal {self.cluster_id}: duplicate component names")

    @property
    def keeps_all(self) -> bool:
        return not (self.components or self.replaced_ids or self.updated_policies)


@dataclass(frozen=True)
class ClusterResult:
    cluster_id: str
    member_ids: tuple[str, ...]
    accepted: bool
    attempts: int
    replaced: int
    added: int
    updated_domains: tuple[str, ...]
    note: str = ""


@dataclass(frozen=True)
class GeneralizationReport:
    clusters: tuple[ClusterResult, ...]
    agent_calls: int

    @property
    def accepted(self) -> int:
        return sum(1 for c in self.clusters if c.accepted)

    @property
    def rejected(self) -> int:
        return sum(1 for c in self.clusters if not c.accepted)

    @property
    def merged(self) -> int:
        return sum(c.replaced for c in self.clusters)

    def to_dict(self) -> dict:
        return {
            "clusters": len(self.clusters),
            "accepted": self.accepted,
            "rejected": self.rejected,
            "merged": self.merged,
            "agent_calls": self.agent_calls,
        }


def greedy_cluster(
    components: Sequence[Component],
    threshold: float,
    provider: EmbeddingProvider,
) -> list[Cluster]:
    """Assign each component (in created-at order) to the first cluster whose
    seed has cosine similarity >= threshold, else found a new cluster."""
    ordered = sorted(components, key=lambda c: c.created_at)
    seeds: list[tuple[str, np.ndarray, list[str]]] = []
    for component in ordered:
        vector = provider.embed(component_text(component))
        for seed_id, seed_vector, members in seeds:
            if cosine(seed_vector, vector) >= threshold:
                members.append(component.id)
                break
        else:
            seeds.append((component.id, vector, [component.id]))
    return [
        Cluster(seed_id=seed_id, member_ids=tuple(members), seed_vector=seed_vector)
        for seed_id, seed_vector, members in seeds
    ]


def _affected_policies(
    repo: ComponentRepository, cluster: Cluster, policies: Mapping[str, Policy]
) -> dict[str, Policy]:
    member_names = {repo.get(component_id).name for component_id in cluster.member_ids}
    return {
        domain_id: policy
        for domain_id, policy in policies.items()
        if member_names & set(policy.referenced_components)
    }


def _failure_feedback(domain_id: str, outcomes: Sequence[ValidationOutcome]) -> str:
    lines = [f"domain {domain_id}:"]
    for outcome in outcomes:
        if outcome.passed:
            continue
        lines.append(f"  task {outcome.task_id}: failed {', '.join(outcome.failed_tests) or 'execution'}")
        if outcome.error:
            lines.append(f"    error: {outcome.error}")
    return "\n".join(lines)


def _check_names_fit(
    repo: ComponentRepository,
    member_ids: set[str],
    proposal: GeneralizationProposal,
) -> str | None:
    """Simulate the accept-time promote and move name rules; complaint or None."""
    replaced = set(proposal.replaced_ids)
    validated_names = {
        c.name for c in repo.validated_components() if c.id not in replaced
    }
    incoming = [draft.name for draft in proposal.components] + [
        c.name
        for c in repo.learned_components()
        if c.id in member_ids and c.id not in replaced
    ]
    for name in incoming:
        if name in validated_names:
            return f"component name {name!r} already live in the validated store"
        validated_names.add(name)
    return None


def generalize_cluster(
    repo: ComponentRepository,
    cluster: Cluster,
    policies: Mapping[str, Policy],
    agent: GeneralizeAgent,
    validator: PolicyValidator,
    budget: int,
) -> tuple[ClusterResult, dict[str, Policy], int]:
    """Run the propose-validate loop for one cluster.

    Returns (result, accepted policy revisions, agent calls made). The
    repository is mutated only on acceptance: replaced members are
    tombstoned, new components promoted, and surviving learned members moved
    to the validated store.
    """
    members = [repo.get(component_id) for component_id in cluster.member_ids]
    member_ids = set(cluster.member_ids)
    affected = _affected_policies(repo, cluster, policies)
    feedback: str | None = None
    calls = 0

    for attempt in range(1 + budget):
        try:
            proposal = agent(cluster.seed_id, members, affected, feedback, attempt)
            calls += 1
        except ValueError as exc:
            calls += 1
            feedback = f"previous reply could not be parsed: {exc}"
            continue

        stray = [r for r in proposal.replaced_ids if r not in member_ids]
        if stray:
            feedback = f"replaced ids outside the cluster: {', '.join(stray)}"
            continue
        complaint = _check_names_fit(repo, member_ids, proposal)
        if complaint:
            feedback = complaint
            continue

        # Candidate post-state resolver: live minus replaced, plus drafts.
        resolver: dict[str, Function] = {}
        for component in repo.live_components():
            if component.id not in proposal.replaced_ids:
                resolver[component.name] = component.parsed()
        for draft in proposal.components:
            resolver[draft.name] = draft_function(draft)

        failures = []
        for domain_id, current in sorted(affected.items()):
            candidate = proposal.updated_policies.get(domain_id, current)
            outcomes = validator(domain_id, candidate, resolver)
            if not all(outcome.passed for outcome in outcomes):
                failures.append(_failure_feedback(domain_id, outcomes))
        if failures:
            feedback = "\n".join(failures)
            continue

        repo.promote(list(proposal.components), list(proposal.replaced_ids))
        surviving_learned = [
            c.id
            for c in repo.learned_components()
            if c.id in member_ids and c.id not in proposal.replaced_ids
        ]
        repo.move_to_validated(surviving_learned)
        result = ClusterResult(
            cluster_id=cluster.seed_id,
            member_ids=cluster.member_ids,
            accepted=True,
            attempts=attempt + 1,
            replaced=len(proposal.replaced_ids),
            added=len(proposal.components),
            updated_domains=tuple(sorted(proposal.updated_policies)),
            note="kept as-is" if proposal.keeps_all else "",
        )
        return result, dict(proposal.updated_policies), calls

    result = ClusterResult(
        cluster_id=cluster.seed_id,
        member_ids=cluster.member_ids,
        accepted=False,
        attempts=1 + budget,
        replaced=0,
        added=0,
        updated_domains=(),
        note=f"rejected after {1 + budget} attempts: {feedback}",
    )
    return result, {}, calls


def draft_function(draft: ComponentDraft) -> Function:
    from .lang.parser import parse

    return parse(draft.body)


def run_generalization(
    repo: ComponentRepository,
    policies: Mapping[str, Policy],
    agent: GeneralizeAgent,
    validator: PolicyValidator,
    config: EngineConfig | None = None,
) -> tuple[GeneralizationReport, dict[str, Policy]]:
    """Cluster the union of live learned + validated components and process
    every cluster; returns the report and all accepted policy revisions."""
    config = config or EngineConfig()
    clusters = greedy_cluster(repo.live_components(), config.cluster_threshold, repo.provider)
    results = []
    revisions: dict[str, Policy] = {}
    current = dict(policies)
    calls = 0
    for cluster in clusters:
        result, updates, cluster_calls = generalize_cluster(
            repo, cluster, current, agent, validator, config.debug_budget
        )
        results.append(result)
        calls += cluster_calls
        current.update(updates)
        revisions.update(updates)
    return GeneralizationReport(clusters=tuple(results), agent_calls=calls), revisions
