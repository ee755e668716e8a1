"""Component stores with provenance, usage analytics, and op-log persistence.

Freshly extracted components accumulate in the learned store (duplicate names
allowed) until a generalization pass promotes or moves them into the validated
store, where names are unique. Replaced components are tombstoned: they leave
the search index and prompt summaries but stay loadable for audit. Every
mutation appends one op to an in-memory log; saving writes the log one
canonical-JSON record per line plus a sidecar file pinning the index ids, and
loading replays the log and checks the rebuilt index against the sidecar.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .lang.nodes import Function
from .model import ModelError, PolicySignature, canonical_json
from .retrieval import (
    EmbeddingProvider,
    MockEmbedder,
    VectorIndex,
    component_text,
    index_components,
)

PROVENANCE_SEED_UNCHANGED = "seed-unchanged"
PROVENANCE_SEED_MODIFIED = "seed-modified"
PROVENANCE_LEARNED = "learned"
PROVENANCES = (PROVENANCE_SEED_UNCHANGED, PROVENANCE_SEED_MODIFIED, PROVENANCE_LEARNED)

USAGE_DIRECT = "direct"
USAGE_INDIRECT = "indirect"

LOG_FILE = "components.jsonl"
INDEX_FILE = "index.json"


@dataclass(frozen=True)
class Component:
    """One reusable function with its provenance and prompt-facing metadata."""

    id: str
    name: str
    signature: PolicySignature
    body: str
    description: str
    usage_info: str
    provenance: str
    origin_domains: tuple[str, ...]
    created_at: int

    def __post_init__(self) -> None:
        if self.provenance not in PROVENANCES:
            raise ModelError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "origin_domains", tuple(self.origin_domains))
        if not self.origin_domains:
            raise ModelError(f"component {self.name}: origin_domains must be non-empty")
        if self.created_at < 1:
            raise ModelError(f"component {self.name}: created_at must be positive")
        if self.signature.name != self.name:
            raise ModelError(
                f"component {self.name}: signature is named {self.signature.name!r}"
            )
        fn = self.parsed()
        if fn.name != self.name:
            raise ModelError(f"component {self.name}: body defines {fn.name!r}")
        if tuple(fn.params) != tuple(p.name for p in self.signature.params):
            raise ModelError(
                f"component {self.name}: body parameters {list(fn.params)} do not "
                f"match signature {self.signature.render()}"
            )

    def parsed(self) -> Function:
        from .lang.parser import parse

        return parse(self.body)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "name": self.name,
            "signature": self.signature.to_dict(),
            "body": self.body,
            "description": self.description,
            "usage_info": self.usage_info,
            "provenance": self.provenance,
            "origin_domains": list(self.origin_domains),
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Component":
        return cls(
            id=data["id"],
            name=data["name"],
            signature=PolicySignature.from_dict(data["signature"]),
            body=data["body"],
            description=data["description"],
            usage_info=data["usage_info"],
            provenance=data["provenance"],
            origin_domains=tuple(data["origin_domains"]),
            created_at=data["created_at"],
        )


@dataclass(frozen=True)
class ComponentDraft:
    """Agent-proposed component before the repository assigns id and provenance."""

    name: str
    signature: PolicySignature
    body: str
    description: str
    usage_info: str
    origin_domains: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "origin_domains", tuple(self.origin_domains))


def summary_block(component: Component) -> str:
    """Prompt-facing view of a component: identity and usage, never the body."""
    return (
        f"id: {component.id}\n"
        f"name: {component.name}\n"
        f"signature: {component.signature.render()}\n"
        f"usage: {component.usage_info}"
    )


@dataclass(frozen=True)
class UsageRecord:
    """One component used while solving one domain, directly or via another component."""

    component_id: str
    domain_id: str
    mode: str
    iteration: int

    def __post_init__(self) -> None:
        if self.mode not in (USAGE_DIRECT, USAGE_INDIRECT):
            raise ModelError(f"unknown usage mode {self.mode!r}")
        if self.iteration < 0:
            raise ModelError("usage iteration must be non-negative")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.component_id, self.domain_id, self.mode)

    def to_dict(self) -> dict[str, Any]:
        return {
            "component_id": self.component_id,
            "domain_id": self.domain_id,
            "mode": self.mode,
            "iteration": self.iteration,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "UsageRecord":
        return cls(
            component_id=data["component_id"],
            domain_id=data["domain_id"],
            mode=data["mode"],
            iteration=data["iteration"],
        )


@dataclass(frozen=True)
class UsageStats:
    """One provenance category's row of the usage table."""

    available: int
    total_used: int
    utilization_pct: float
    per_scenario_mean: float
    reuse_rate: float
    multi_use_pct: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "available": self.available,
            "total_used": self.total_used,
            "utilization_pct": self.utilization_pct,
            "per_scenario_mean": self.per_scenario_mean,
            "reuse_rate": self.reuse_rate,
            "multi_use_pct": self.multi_use_pct,
        }


class ComponentRepository:
    """Learned + validated stores sharing one id space, op log, and vector index."""

    def __init__(self, provider: EmbeddingProvider | None = None):
        self.provider: EmbeddingProvider = provider or MockEmbedder()
        self.index = VectorIndex(self.provider.dimension)
        self._learned: dict[str, Component] = {}
        self._validated: dict[str, Component] = {}
        self._tombstones: dict[str, Component] = {}
        self._usage: list[UsageRecord] = []
        self._usage_keys: set[tuple[str, str, str]] = set()
        self._next_ordinal = 1
        self._log: list[dict[str, Any]] = []

    # -- lookups ------------------------------------------------------------

    def is_live(self, component_id: str) -> bool:
        return component_id in self._learned or component_id in self._validated

    def get(self, component_id: str) -> Component:
        found = self._learned.get(component_id) or self._validated.get(component_id)
        if found is None:
            raise ModelError(f"no live component {component_id!r}")
        return found

    def get_any(self, component_id: str) -> Component:
        """Live or tombstoned lookup, for audit."""
        if self.is_live(component_id):
            return self.get(component_id)
        if component_id in self._tombstones:
            return self._tombstones[component_id]
        raise ModelError(f"no component {component_id!r}")

    def learned_components(self) -> list[Component]:
        return sorted(self._learned.values(), key=lambda c: c.created_at)

    def validated_components(self) -> list[Component]:
        return sorted(self._validated.values(), key=lambda c: c.created_at)

    def live_components(self) -> list[Component]:
        both = list(self._learned.values()) + list(self._validated.values())
        return sorted(both, key=lambda c: c.created_at)

    def tombstoned_components(self) -> list[Component]:
        return sorted(self._tombstones.values(), key=lambda c: c.created_at)

    def usage_records(self) -> tuple[UsageRecord, ...]:
        return tuple(self._usage)

    def resolver_for(self, ids: Iterable[str]) -> dict[str, Function]:
        """Name -> parsed body for executing policies that call these components."""
        out: dict[str, Function] = {}
        for component_id in ids:
            component = self.get(component_id)
            if component.name in out:
                raise ModelError(f"duplicate component name {component.name!r} in call set")
            out[component.name] = component.parsed()
        return out

    # -- mutations ----------------------------------------------------------

    def add_learned(
        self,
        *,
        name: str,
        signature: PolicySignature,
        body: str,
        description: str,
        usage_info: str,
        origin_domains: Sequence[str],
    ) -> Component:
        component = Component(
            id=f"c{self._next_ordinal:03d}-{name}",
            name=name,
            signature=signature,
            body=body,
            description=description,
            usage_info=usage_info,
            provenance=PROVENANCE_LEARNED,
            origin_domains=tuple(origin_domains),
            created_at=self._next_ordinal,
        )
        self._commit({"op": "add", "store": "learned", "component": component.to_dict()})
        return component

    def promote(
        self, drafts: Sequence[ComponentDraft], replacing: Sequence[str]
    ) -> list[Component]:
        """Tombstone `replacing` and add fresh validated components, atomically.

        New provenance is seed-modified when any replaced component descends
        from the seed, otherwise learned; nothing ever becomes seed-unchanged
        here.
        """
        replacing = tuple(replacing)
        if len(set(replacing)) != len(replacing):
            raise ModelError("duplicate id in replacing list")
        replaced = [self.get(r) for r in replacing]
        seed_derived = any(c.provenance != PROVENANCE_LEARNED for c in replaced)
        provenance = PROVENANCE_SEED_MODIFIED if seed_derived else PROVENANCE_LEARNED

        surviving_names = {c.name for c in self._validated.values()} - {
            c.name for c in replaced if c.id in self._validated
        }
        new_components = []
        ordinal = self._next_ordinal
        for draft in drafts:
            if draft.name in surviving_names:
                raise ModelError(
                    f"component name {draft.name!r} already live in the validated store"
                )
            surviving_names.add(draft.name)
            new_components.append(
                Component(
                    id=f"c{ordinal:03d}-{draft.name}",
                    name=draft.name,
                    signature=draft.signature,
                    body=draft.body,
                    description=draft.description,
                    usage_info=draft.usage_info,
                    provenance=provenance,
                    origin_domains=draft.origin_domains,
                    created_at=ordinal,
                )
            )
            ordinal += 1

        for replaced_id in replacing:
            self._commit({"op": "tombstone", "id": replaced_id})
        for component in new_components:
            self._commit({"op": "add", "store": "validated", "component": component.to_dict()})
        return new_components

    def move_to_validated(self, ids: Sequence[str]) -> None:
        """Relocate accepted learned components unchanged (id, provenance kept)."""
        moving = []
        for component_id in ids:
            if component_id not in self._learned:
                raise ModelError(f"no learned component {component_id!r}")
            moving.append(self._learned[component_id])
        names = {c.name for c in self._validated.values()}
        for component in moving:
            if component.name in names:
                raise ModelError(
                    f"component name {component.name!r} already live in the validated store"
                )
            names.add(component.name)
        for component in moving:
            self._commit({"op": "move", "id": component.id})

    def seal_seed(self) -> None:
        """Close a seeding run: everything live becomes the validated seed baseline.

        This is the run-boundary relabel to seed-unchanged; within a run the
        only provenance transition is seed-unchanged -> seed-modified (via
        promote).
        """
        names = {c.name for c in self._validated.values()}
        for component in self.learned_components():
            if component.name in names:
                raise ModelError(
                    f"component name {component.name!r} already live in the validated store"
                )
            names.add(component.name)
        self._commit({"op": "seal_seed"})

    def record_usage(
        self, component_id: str, domain_id: str, mode: str, iteration: int
    ) -> bool:
        """Record one use; returns False when (component, domain, mode) is already recorded."""
        self.get(component_id)
        record = UsageRecord(
            component_id=component_id, domain_id=domain_id, mode=mode, iteration=iteration
        )
        if record.key in self._usage_keys:
            return False
        self._commit({"op": "usage", "record": record.to_dict()})
        return True

    # -- analytics ----------------------------------------------------------

    def summaries_for_prompt(self, ids: Sequence[str]) -> str:
        """Prompt blocks in the given (retrieval-score) order; never bodies."""
        return "\n\n".join(summary_block(self.get(component_id)) for component_id in ids)

    def usage_stats(self, scenario_count: int) -> dict[str, UsageStats]:
        """Per-provenance usage table over live components.

        per_scenario_mean averages distinct used components over ALL
        scenarios (including ones that used none); reuse_rate averages
        distinct scenarios over used components; multi-use counts used
        components appearing in two or more scenarios.
        """
        if scenario_count < 1:
            raise ModelError("scenario count must be positive")
        live = {c.id: c for c in self.live_components()}
        domains_by_component: dict[str, set[str]] = {}
        for record in self._usage:
            if record.component_id in live:
                domains_by_component.setdefault(record.component_id, set()).add(
                    record.domain_id
                )
        out = {}
        for provenance in PROVENANCES:
            available = sum(1 for c in live.values() if c.provenance == provenance)
            used = {
                cid: doms
                for cid, doms in domains_by_component.items()
                if live[cid].provenance == provenance
            }
            pair_count = sum(len(doms) for doms in used.values())
            multi = sum(1 for doms in used.values() if len(doms) >= 2)
            total_used = len(used)
            out[provenance] = UsageStats(
                available=available,
                total_used=total_used,
                utilization_pct=100.0 * total_used / available if available else 0.0,
                per_scenario_mean=pair_count / scenario_count,
                reuse_rate=pair_count / total_used if total_used else 0.0,
                multi_use_pct=100.0 * multi / total_used if total_used else 0.0,
            )
        return out

    # -- op log -------------------------------------------------------------

    def _commit(self, op: dict[str, Any]) -> None:
        self._apply(op)
        self._log.append(op)

    def _apply(self, op: dict[str, Any]) -> None:
        kind = op["op"]
        if kind == "add":
            component = Component.from_dict(op["component"])
            if (
                self.is_live(component.id)
                or component.id in self._tombstones
                or component.id in self.index
            ):
                raise ModelError(f"duplicate component id {component.id!r}")
            store = self._learned if op["store"] == "learned" else self._validated
            store[component.id] = component
            index_components(self.index, [component], self.provider)
            self._next_ordinal = max(self._next_ordinal, component.created_at + 1)
        elif kind == "tombstone":
            component_id = op["id"]
            component = self.get(component_id)
            self._learned.pop(component_id, None)
            self._validated.pop(component_id, None)
            self._tombstones[component_id] = component
            self.index.remove(component_id)
        elif kind == "move":
            component_id = op["id"]
            if component_id not in self._learned:
                raise ModelError(f"no learned component {component_id!r}")
            self._validated[component_id] = self._learned.pop(component_id)
        elif kind == "seal_seed":
            for component in self.learned_components():
                self._validated[component.id] = self._learned.pop(component.id)
            for component_id, component in list(self._validated.items()):
                self._validated[component_id] = dataclasses.replace(
                    component, provenance=PROVENANCE_SEED_UNCHANGED
                )
        elif kind == "usage":
            record = UsageRecord.from_dict(op["record"])
            if record.key in self._usage_keys:
                raise ModelError(f"duplicate usage record {record.key}")
            self._usage.append(record)
            self._usage_keys.add(record.key)
        else:
            raise ModelError(f"unknown repository op {kind!r}")

    # -- persistence --------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        log_text = "".join(canonical_json(op) + "\n" for op in self._log)
        (directory / LOG_FILE).write_text(log_text, encoding="utf-8")
        sidecar = {
            "dimension": self.index.dimension,
            "entries": [
                {"id": e.id, "kind": e.kind, "text_hash": e.text_hash}
                for e in self.index.entries()
            ],
        }
        (directory / INDEX_FILE).write_text(
            canonical_json(sidecar, indent=2) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(
        cls, directory: str | Path, provider: EmbeddingProvider | None = None
    ) -> "ComponentRepository":
        directory = Path(directory)
        log_path = directory / LOG_FILE
        index_path = directory / INDEX_FILE
        if not log_path.exists() or not index_path.exists():
            raise ModelError(f"no repository at {directory}")
        repo = cls(provider)
        for line in log_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                repo._commit(json.loads(line))
        sidecar = json.loads(index_path.read_text(encoding="utf-8"))
        rebuilt = [
            {"id": e.id, "kind": e.kind, "text_hash": e.text_hash}
            for e in repo.index.entries()
        ]
        if sidecar["dimension"] != repo.index.dimension or sidecar["entries"] != rebuilt:
            raise ModelError(f"index sidecar at {directory} does not match the op log")
        return repo
