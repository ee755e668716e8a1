"""Embedding provider, exact top-k cosine index, and retrieval quality metrics.

The mock embedder hashes lowercase character trigrams into a 256-bucket
frequency vector (L2-normalized). Search is an exact scan: repository sizes
are a few hundred entries, so exactness costs nothing and drops a dependency.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

import numpy as np

from .model import ApiDoc, ModelError

MOCK_DIMENSION = 256
# Bucket salt fixed so that related phrases land on shared buckets, e.g.
# "transfer money" scores closer to "send payment" than to "play a song".
MOCK_SALT = "pw002"

KIND_COMPONENT = "component"
KIND_API_DOC = "api-doc"


def _trigrams(text: str) -> list[str]:
    flat = " ".join(text.lower().split())
    if not flat:
        raise ModelError("cannot embed empty text")
    if len(flat) < 3:
        return [flat]
    return [flat[i : i + 3] for i in range(len(flat) - 2)]


class EmbeddingProvider(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


class MockEmbedder:
    """Hashed-trigram frequency embedding; deterministic across platforms."""

    dimension = MOCK_DIMENSION

    def embed(self, text: str) -> np.ndarray:
        counts = np.zeros(self.dimension, dtype=np.float64)
        for gram in _trigrams(text):
            digest = hashlib.blake2b(
                f"{MOCK_SALT}|{gram}".encode("utf-8"), digest_size=8
            ).digest()
            counts[int.from_bytes(digest, "big") % self.dimension] += 1.0
        return counts / np.linalg.norm(counts)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ModelError("cosine of a zero vector is undefined")
    return float(np.dot(u, v) / (nu * nv))


def text_hash(text: str) -> str:
    return hashlib.blake2b(text.encode("utf-8"), digest_size=16).hexdigest()


@dataclass(frozen=True)
class IndexEntry:
    id: str
    kind: str
    vector: np.ndarray
    text_hash: str

    def __post_init__(self) -> None:
        if self.kind not in (KIND_COMPONENT, KIND_API_DOC):
            raise ModelError(f"unknown index entry kind {self.kind!r}")
        norm = float(np.linalg.norm(self.vector))
        if abs(norm - 1.0) > 1e-9:
            raise ModelError(f"entry {self.id}: vector norm {norm} is not 1")


class VectorIndex:
    """Exact cosine top-k over unit vectors of one fixed dimension."""

    def __init__(self, dimension: int):
        if dimension < 1:
            raise ModelError("index dimension must be positive")
        self.dimension = dimension
        self._entries: dict[str, IndexEntry] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, entry_id: str) -> bool:
        return entry_id in self._entries

    def entry(self, entry_id: str) -> IndexEntry:
        return self._entries[entry_id]

    def entries(self) -> list[IndexEntry]:
        """All entries in insertion order."""
        return list(self._entries.values())

    def add(self, entry_id: str, kind: str, vector: np.ndarray, text: str) -> None:
        if entry_id in self._entries:
            raise ModelError(f"duplicate id in index: {entry_id!r}")
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dimension,):
            raise ModelError(
                f"entry {entry_id!r}: dimension {vector.shape} does not match "
                f"index dimension {self.dimension}"
            )
        self._entries[entry_id] = IndexEntry(
            id=entry_id, kind=kind, vector=vector, text_hash=text_hash(text)
        )

    def remove(self, entry_id: str) -> None:
        if entry_id not in self._entries:
            raise ModelError(f"no such index entry: {entry_id!r}")
        del self._entries[entry_id]

    def search(self, query: np.ndarray, k: int) -> list[tuple[str, float]]:
        """Exactly min(k, n) results, scores non-increasing, id tie-break."""
        if k < 1:
            raise ModelError("k must be at least 1")
        query = np.asarray(query, dtype=np.float64)
        if query.shape != (self.dimension,):
            raise ModelError(
                f"query dimension {query.shape} does not match index dimension "
                f"{self.dimension}"
            )
        norm = float(np.linalg.norm(query))
        if norm == 0.0:
            raise ModelError("cannot search with a zero query vector")
        unit = query / norm
        scored = [
            (entry_id, float(np.dot(entry.vector, unit)))
            for entry_id, entry in self._entries.items()
        ]
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return scored[:k]


def api_doc_text(doc: ApiDoc) -> str:
    return f"{doc.app}.{doc.api} {doc.description}"


def component_text(component) -> str:
    """Embedding text for a component: name, signature string, description."""
    return f"{component.name} {component.signature.render()} {component.description}"


def index_api_docs(index: VectorIndex, docs: Iterable[ApiDoc], provider: EmbeddingProvider) -> None:
    for doc in docs:
        text = api_doc_text(doc)
        index.add(doc.doc_id, KIND_API_DOC, provider.embed(text), text)


def index_components(index: VectorIndex, components: Iterable, provider: EmbeddingProvider) -> None:
    for component in components:
        text = component_text(component)
        index.add(component.id, KIND_COMPONENT, provider.embed(text), text)


def ir_metrics(
    rankings: Sequence[Sequence[str]],
    relevants: Sequence[Iterable[str]],
    ks: Sequence[int] = (5, 10, 20),
) -> dict:
    """MRR, MAP, and R@k over parallel ranked-id lists and relevant-id sets.

    MRR averages 1/rank of the first relevant hit (0 when none retrieved);
    AP averages precision at each relevant-hit position over the hits in the
    ranking; R@k is the fraction of queries with at least one relevant id in
    the top k.
    """
    if len(rankings) != len(relevants):
        raise ModelError("rankings and relevants must be parallel")
    if not rankings:
        raise ModelError("ir_metrics needs at least one query")
    relevant_sets = [set(r) for r in relevants]
    for i, rel in enumerate(relevant_sets):
        if not rel:
            raise ModelError(f"query {i}: relevant set is empty")

    rr_total = 0.0
    ap_total = 0.0
    hits_at: dict[int, int] = {k: 0 for k in ks}
    for ranking, relevant in zip(rankings, relevant_sets):
        first = None
        precisions = []
        seen_relevant = 0
        for position, entry_id in enumerate(ranking, start=1):
            if entry_id in relevant:
                seen_relevant += 1
                precisions.append(seen_relevant / position)
                if first is None:
                    first = position
        if first is not None:
            rr_total += 1.0 / first
        if precisions:
            ap_total += sum(precisions) / len(precisions)
        for k in ks:
            if first is not None and first <= k:
                hits_at[k] += 1

    n = len(rankings)
    return {
        "mrr": rr_total / n,
        "map": ap_total / n,
        "r_at_k": {k: hits_at[k] / n for k in ks},
    }
