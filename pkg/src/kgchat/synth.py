"""Synthetic corpus with planted structure for end-to-end verification.

Each item owns a distinct attribute signature; dialogues mention the
signature and then recommend the item, so a model that works can (a) rank
the right item first and (b) reassign high connection probability to edges
withheld from the visible graph.

Withholding removes the complete attribute edge set of a few items (still
30% of all edges by default). Blacked-out items keep appearing as dialogue
targets, and each of their attribute edges is exercised by its own
single-attribute dialogue, so the likelihood term can only explain those
dialogues by inferring the missing connection — a lazy model that leans on
surviving edges scores recall but fails edge recovery.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import (
    Dialogue,
    EntityLinker,
    KnowledgeGraph,
    TurnExample,
    Utterance,
    build_examples,
    tokenize,
)

HAS_ATTR = "has_attr"
RELATED_TO = "related_to"


@dataclass
class SyntheticCorpus:
    full_kg: KnowledgeGraph
    visible_kg: KnowledgeGraph          # same entity table, withheld triples removed
    withheld: list[tuple[int, int, int]]  # (head, relation, tail) indices
    dialogues: list[Dialogue]

    @property
    def examples(self) -> list[TurnExample]:
        return build_examples(self.dialogues, self.visible_kg)


# Six 3-subsets of an 8-element pool, any two sharing at most one element.
# Low overlap keeps surviving items separable: a wrong item never matches
# more than one attribute of another item's ask.
_SHARED_DESIGN = [
    (0, 1, 2), (3, 4, 5), (0, 3, 6), (1, 4, 7), (2, 5, 6), (0, 5, 7),
]


def _signatures(rng, n_items: int, n_attrs: int, size: int, blackout) -> list:
    """Distinct per-item attribute signatures.

    Blacked-out items draw from a reserved attr pool so their attributes
    belong to no other item: each single-attribute dialogue then names its
    target unambiguously.  Surviving items take low-overlap signatures from
    the shared remainder of the pool.
    """
    n_reserved = len(blackout) * size
    n_shared = n_attrs - n_reserved
    n_survivors = n_items - len(blackout)
    if size != 3 or n_survivors > len(_SHARED_DESIGN) or n_shared < 8:
        raise ValueError("signature design needs size 3, <=6 survivors, >=8 shared attrs")
    perm = rng.permutation(n_attrs).tolist()
    reserved = iter(perm[:n_reserved])
    shared = perm[n_reserved:]
    design = iter(rng.permutation(len(_SHARED_DESIGN)).tolist())
    sigs: list = [None] * n_items
    for i in range(n_items):
        if i in blackout:
            sigs[i] = tuple(sorted(next(reserved) for _ in range(size)))
        else:
            sigs[i] = tuple(sorted(shared[k] for k in _SHARED_DESIGN[next(design)]))
    return sigs


def generate(
    seed: int = 0,
    n_items: int = 10,
    n_attrs: int = 20,
    n_dialogues: int = 20,
    withhold_frac: float = 0.3,
    sig_size: int = 3,
) -> SyntheticCorpus:
    rng = np.random.default_rng(seed)

    entity_ids = [f"m{i}" for i in range(n_items)] + [f"a{j}" for j in range(n_attrs)]
    entity_names = [f"film{i}" for i in range(n_items)] + [f"genre{j}" for j in range(n_attrs)]
    item_flags = [True] * n_items + [False] * n_attrs
    relations = [HAS_ATTR, RELATED_TO]

    # Planted graph: sig_size attribute edges per item plus one attr-attr edge,
    # so n_items * (sig_size + 1) edges total.  Withholding erases the full
    # attribute edge set of round(frac * total / sig_size) items.
    n_triples = n_items * (sig_size + 1)
    n_blackout = int(round(withhold_frac * n_triples / sig_size))
    blackout = set(rng.choice(n_items, size=n_blackout, replace=False).tolist())

    sigs = _signatures(rng, n_items, n_attrs, sig_size, blackout)
    triples: list[tuple[int, int, int]] = []
    withheld: list[tuple[int, int, int]] = []
    for i, sig in enumerate(sigs):
        attr_edges = [(i, 0, n_items + a) for a in sig]
        triples.extend(attr_edges)
        if i in blackout:
            withheld.extend(attr_edges)
    used_pairs: set[tuple[int, int]] = set()
    for sig in sigs:
        # one attr-attr edge per item, distinct across items so the planted
        # edge count is exact after deduplication
        for a, b in ((0, 1), (1, 2), (0, 2)):
            pair = (n_items + sig[a], n_items + sig[b])
            if pair not in used_pairs:
                break
        else:
            raise ValueError("could not plant a distinct attr-attr edge")
        used_pairs.add(pair)
        triples.append((pair[0], 1, pair[1]))

    full_kg = KnowledgeGraph(entity_ids, entity_names, item_flags, relations, triples)
    withheld_set = set(withheld)
    visible = [t for t in full_kg.triples if t not in withheld_set]
    visible_kg = KnowledgeGraph(entity_ids, entity_names, item_flags, relations, visible)

    linker = EntityLinker(full_kg)

    def utt(speaker: str, text: str) -> Utterance:
        tokens = tuple(tokenize(text))
        return Utterance(speaker, tokens, linker.link(tokens))

    def make_dialogue(tag: str, item: int, ask_attrs, greet: bool) -> Dialogue:
        names = [entity_names[n_items + a] for a in ask_attrs]
        turns = []
        if greet:
            turns.append(utt("user", "hello there"))
            turns.append(utt("recommender", "hi , what are you in the mood for ?"))
        ask = f"i want a movie with {' and '.join(names)}"
        reply = f"you should watch {entity_names[item]} , it has {names[0]}"
        turns.append(utt("user", ask))
        turns.append(utt("recommender", reply))
        return Dialogue(tag, tuple(turns))

    # One dialogue per withheld edge (single-attribute ask: that edge is the
    # only route from the mention to the target) plus one full-signature
    # dialogue per surviving item; extras repeat surviving items and a few
    # dialogues open with greeting small talk.
    survivors = [i for i in range(n_items) if i not in blackout]
    plan: list[tuple[int, list[int]]] = []
    for i in sorted(blackout):
        plan.extend((i, [a]) for a in sigs[i])
    plan.extend((i, list(sigs[i])) for i in survivors)
    if len(plan) > n_dialogues:
        raise ValueError(f"need at least {len(plan)} dialogues")
    for k in range(n_dialogues - len(plan)):
        i = survivors[k % len(survivors)]
        plan.append((i, list(sigs[i])))

    dialogues = [
        make_dialogue(f"syn{d}", item, attrs, greet=d % 5 == 0)
        for d, (item, attrs) in enumerate(plan)
    ]
    return SyntheticCorpus(full_kg, visible_kg, withheld, dialogues)


def write_corpus(corpus: SyntheticCorpus, outdir) -> dict[str, Path]:
    """Write the visible graph and dialogues in the on-disk formats."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    kg = corpus.visible_kg

    entities_path = outdir / "kg.entities.tsv"
    with open(entities_path, "w", encoding="utf-8") as fh:
        for eid, name, flag in zip(kg.entity_ids, kg.entity_names, kg.item_flags):
            fh.write(f"{eid}\t{name}\t{1 if flag else 0}\n")

    kg_path = outdir / "kg.tsv"
    with open(kg_path, "w", encoding="utf-8") as fh:
        for h, r, t in kg.triples:
            fh.write(f"{kg.entity_ids[h]}\t{kg.relation_names[r]}\t{kg.entity_ids[t]}\n")

    dlg_path = outdir / "dialogues.jsonl"
    with open(dlg_path, "w", encoding="utf-8") as fh:
        for dialogue in corpus.dialogues:
            record = {
                "dialogue_id": dialogue.dialogue_id,
                "turns": [
                    {"speaker": u.speaker, "text": " ".join(u.tokens)}
                    for u in dialogue.turns
                ],
            }
            fh.write(json.dumps(record) + "\n")

    return {"kg": kg_path, "entities": entities_path, "dialogues": dlg_path}
