"""Candidate support of the latent dialogue subgraph.

Head entities are the context mentions; tail candidates are the union of the
global top-k entities by mutual information with corpus co-occurrence heads
and the KG neighbors of the mentioned heads. Pairing every head with every
tail (minus self-pairs) yields the pair list whose connection probabilities
the refactor networks later predict.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .corpus import CooccurrenceStats, KnowledgeGraph

MI_TOPK = "mi_topk"
KG_NEIGHBOR = "kg_neighbor"
BOTH = "both"


def mi_scores(stats: CooccurrenceStats) -> np.ndarray:
    """Per-entity relevance: sum over co-occurring heads of
    P(e|e_h) * P(e_h) * log(P(e|e_h) / P(e)).

    Probabilities are read directly from the count table; zero-co-occurrence
    terms contribute nothing. The accumulation order is fixed (ascending
    (entity, head)), so results are reproducible bit for bit.
    """
    if stats.unit_count <= 0:
        raise ValueError("co-occurrence statistics are empty")
    e_ids, h_ids, counts = stats.pair_table()
    return kernels.mi_accumulate(
        e_ids, h_ids, counts, stats.entity_count, float(stats.unit_count)
    )


def top_k_entities(scores: np.ndarray, occurred: np.ndarray, k: int) -> list[int]:
    """Global top-k by MI score; ties broken by ascending entity id.

    Entities that never occur in the corpus are excluded regardless of k.
    """
    candidates = np.flatnonzero(occurred)
    if k <= 0 or candidates.size == 0:
        return []
    order = sorted(candidates.tolist(), key=lambda e: (-scores[e], e))
    return order[:k]


def select_tail_entities(
    heads,
    scores: np.ndarray,
    occurred: np.ndarray,
    kg: KnowledgeGraph,
    k: int,
) -> tuple[tuple[int, ...], tuple[str, ...]]:
    """Tail candidates with provenance tags, ordered by ascending entity id."""
    mi_pool = set(top_k_entities(scores, occurred, k))
    neighbor_pool = set()
    for h in heads:
        neighbor_pool.update(kg.neighbors(h))
    tails = sorted(mi_pool | neighbor_pool)
    provenance = []
    for t in tails:
        if t in mi_pool and t in neighbor_pool:
            provenance.append(BOTH)
        elif t in mi_pool:
            provenance.append(MI_TOPK)
        else:
            provenance.append(KG_NEIGHBOR)
    return tuple(tails), tuple(provenance)


@dataclass(frozen=True)
class CandidatePairs:
    """Enumerated (head, tail) support of the latent subgraph."""

    heads: tuple[int, ...]
    tails: tuple[int, ...]
    provenance: tuple[str, ...]  # aligned with tails
    pairs: tuple[tuple[int, int], ...]  # head-major, tail-minor, no self-pairs

    def __len__(self):
        return len(self.pairs)

    @property
    def head_ids(self) -> np.ndarray:
        return np.asarray([h for h, _ in self.pairs], dtype=np.int64)

    @property
    def tail_ids(self) -> np.ndarray:
        return np.asarray([t for _, t in self.pairs], dtype=np.int64)


EMPTY_PAIRS = CandidatePairs((), (), (), ())


def candidate_pairs(heads, tails, provenance=None) -> CandidatePairs:
    """All head x tail combinations in deterministic order, self-pairs removed."""
    heads = tuple(dict.fromkeys(heads))
    tails = tuple(tails)
    if provenance is None:
        provenance = tuple("" for _ in tails)
    if not heads:
        return EMPTY_PAIRS
    pairs = tuple((h, t) for h in heads for t in tails if h != t)
    return CandidatePairs(heads, tails, tuple(provenance), pairs)


def build_pairs(
    context_mentions,
    scores: np.ndarray,
    occurred: np.ndarray,
    kg: KnowledgeGraph,
    k: int,
) -> CandidatePairs:
    """Full support construction for one dialogue context."""
    heads = tuple(dict.fromkeys(context_mentions))
    if not heads:
        return EMPTY_PAIRS
    tails, provenance = select_tail_entities(heads, scores, occurred, kg, k)
    return candidate_pairs(heads, tails, provenance)


def save_scores(path, kg: KnowledgeGraph, scores: np.ndarray) -> None:
    """Cache MI scores as ``entity_id<TAB>score`` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, eid in enumerate(kg.entity_ids):
            fh.write(f"{eid}\t{float(scores[i])!r}\n")


def load_scores(path, kg: KnowledgeGraph) -> np.ndarray:
    scores = np.zeros(kg.n_entities, dtype=np.float64)
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            eid, value = line.split("\t")
            scores[kg.id_to_index[eid]] = float(value)
    return scores
