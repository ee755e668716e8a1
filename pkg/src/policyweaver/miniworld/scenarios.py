"""Scenario pack loading: domains, train/test split, and reference solutions.

A pack is a JSON file naming two phases of domains plus, for every domain, a
reference policy (component-free) and per-task bindings. The references are
fixture ground truth: the master solvability test validates every one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from ..model import (
    Domain,
    ModelError,
    ParameterBinding,
    Policy,
    PolicySignature,
    TaskInstance,
)
from .world import MiniWorld

BUNDLED_PACK = "default"


@dataclass(frozen=True)
class ReferenceSolution:
    """Known-good policy and bindings for one domain."""

    policy: Policy
    bindings: dict[str, ParameterBinding]

    def binding_for(self, task_id: str) -> ParameterBinding:
        if task_id not in self.bindings:
            raise KeyError(task_id)
        return self.bindings[task_id]


@dataclass(frozen=True)
class ScenarioPack:
    """Ordered domains in two phases plus reference solutions per domain."""

    name: str
    train: tuple[Domain, ...]
    test: tuple[Domain, ...]
    challenge_ids: tuple[str, ...]
    reference: dict[str, ReferenceSolution]

    def __post_init__(self) -> None:
        ids = [d.id for d in self.domains()]
        if len(set(ids)) != len(ids):
            raise ModelError(f"pack {self.name}: duplicate domain ids")
        missing = [i for i in ids if i not in self.reference]
        if missing:
            raise ModelError(f"pack {self.name}: no reference solution for {', '.join(missing)}")
        unknown = [i for i in self.challenge_ids if i not in ids]
        if unknown:
            raise ModelError(f"pack {self.name}: unknown challenge domain {', '.join(unknown)}")

    def domains(self) -> tuple[Domain, ...]:
        return self.train + self.test

    def domain(self, domain_id: str) -> Domain:
        for d in self.domains():
            if d.id == domain_id:
                return d
        raise KeyError(domain_id)


def _load_reference(
    domain: Domain, data: Mapping[str, Any], read_policy: Any
) -> ReferenceSolution:
    signature = PolicySignature.from_dict(data["signature"])
    source = read_policy(data["policy_file"])
    policy = Policy(signature=signature, source=source, referenced_components=())
    bindings = {}
    for task in domain.tasks:
        if task.id not in data["bindings"]:
            raise ModelError(f"domain {domain.id}: no reference binding for task {task.id}")
        bindings[task.id] = ParameterBinding(task_id=task.id, values=data["bindings"][task.id])
    return ReferenceSolution(policy=policy, bindings=bindings)


def load_pack(pack: str = BUNDLED_PACK) -> ScenarioPack:
    """Load the bundled pack (name ``default``) or a pack JSON on disk.

    A filesystem pack resolves its policy files against a ``policies``
    directory next to the pack file.
    """
    if pack == BUNDLED_PACK:
        root = resources.files(__package__) / "data"
        raw = json.loads((root / "scenarios.json").read_text(encoding="utf-8"))
        read_policy = lambda name: (root / "policies" / name).read_text(encoding="utf-8")
    else:
        path = Path(pack)
        if not path.is_file():
            raise ModelError(f"scenario pack not found: {pack}")
        raw = json.loads(path.read_text(encoding="utf-8"))
        read_policy = lambda name: (path.parent / "policies" / name).read_text(encoding="utf-8")

    train = tuple(Domain.from_dict(d) for d in raw["train"])
    test = tuple(Domain.from_dict(d) for d in raw["test"])
    reference = {
        d.id: _load_reference(d, raw["reference"][d.id], read_policy)
        for d in train + test
        if d.id in raw["reference"]
    }
    return ScenarioPack(
        name=raw["name"],
        train=train,
        test=test,
        challenge_ids=tuple(raw.get("challenge_ids", ())),
        reference=reference,
    )


def describe(world: MiniWorld, pack: ScenarioPack) -> str:
    """Human-readable listing of apps, APIs, and scenario domains."""
    lines = [f"meta-domain: {world.name}", ""]
    by_app: dict[str, list] = {}
    for doc in world.api_docs():
        by_app.setdefault(doc.app, []).append(doc)
    for app in sorted(by_app):
        lines.append(f"app {app}")
        for doc in by_app[app]:
            params = ", ".join(f"{p.name}: {p.kind}" for p in doc.params)
            lines.append(f"  {doc.api}({params})  {doc.description}")
    lines.append("")
    lines.append(f"scenario pack: {pack.name}")
    for phase, domains in (("train", pack.train), ("test", pack.test)):
        for domain in domains:
            tag = " [challenge]" if domain.id in pack.challenge_ids else ""
            lines.append(f"  {phase} domain {domain.id} ({len(domain.tasks)} tasks){tag}")
            for task in domain.tasks:
                lines.append(f"    {task.id}: {task.instruction}")
    return "\n".join(lines) + "\n"
