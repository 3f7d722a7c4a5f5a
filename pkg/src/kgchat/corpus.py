"""Corpus ingestion: knowledge graph, dialogues, turn examples, statistics.

On-disk formats:
  * knowledge graph: TSV triples ``head<TAB>relation<TAB>tail`` with a sidecar
    entity table ``id<TAB>name<TAB>is_item`` (or a single JSON document with
    ``entities`` and ``triples`` keys);
  * dialogues: line-delimited JSON records
    ``{"dialogue_id": ..., "turns": [{"speaker", "text", "entities"}]}``.

Entity ids are opaque strings in files and contiguous integer indices
in-memory.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

USER = "user"
RECOMMENDER = "recommender"
SPEAKERS = (USER, RECOMMENDER)

_TOKEN_RE = re.compile(r"[\w']+|[^\w\s]")


class ParseError(ValueError):
    """Malformed input file; message carries the offending line number."""


class DanglingIdError(ValueError):
    """A triple references an entity or relation id that was never declared."""


def tokenize(text: str) -> list[str]:
    """Lowercased whitespace+punctuation tokenization."""
    return _TOKEN_RE.findall(text.lower())


def normalize_name(name: str) -> str:
    return " ".join(name.lower().split())


@dataclass(frozen=True)
class Utterance:
    speaker: str
    tokens: tuple[str, ...]
    entities: tuple[int, ...]  # entity indices into the KG table

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("utterance must contain at least one token")
        if self.speaker not in SPEAKERS:
            raise ValueError(f"unknown speaker label: {self.speaker!r}")


@dataclass(frozen=True)
class Dialogue:
    dialogue_id: str
    turns: tuple[Utterance, ...]


@dataclass(frozen=True)
class TurnExample:
    """One training/inference unit: context, target items, gold response."""

    dialogue_id: str
    turn_index: int  # 1-based position of the gold response in the dialogue
    context: tuple[Utterance, ...]
    target_items: tuple[int, ...]
    gold_response: Utterance

    @property
    def example_id(self) -> str:
        return f"{self.dialogue_id}:{self.turn_index}"


class KnowledgeGraph:
    """Entity/relation tables plus deduplicated triples and adjacency."""

    def __init__(self, entity_ids, entity_names, item_flags, relation_names, triples):
        self.entity_ids = list(entity_ids)
        self.entity_names = list(entity_names)
        self.item_flags = np.asarray(item_flags, dtype=bool)
        self.relation_names = list(relation_names)
        self.id_to_index = {eid: i for i, eid in enumerate(self.entity_ids)}
        if len(self.id_to_index) != len(self.entity_ids):
            raise ParseError("duplicate entity id in entity table")

        seen = set()
        self.triples: list[tuple[int, int, int]] = []
        for h, r, t in triples:
            key = (h, r, t)
            if key in seen:
                continue
            seen.add(key)
            self.triples.append(key)

        self._adjacency: list[set[int]] = [set() for _ in self.entity_ids]
        for h, _, t in self.triples:
            self._adjacency[h].add(t)
            self._adjacency[t].add(h)
        self._edge_set = {(h, t) for h, _, t in self.triples}

    @property
    def n_entities(self) -> int:
        return len(self.entity_ids)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    @property
    def item_indices(self) -> np.ndarray:
        return np.flatnonzero(self.item_flags)

    def neighbors(self, entity: int) -> tuple[int, ...]:
        return tuple(sorted(self._adjacency[entity]))

    def has_edge(self, head: int, tail: int) -> bool:
        """True when any triple connects the ordered pair (head, tail)."""
        return (head, tail) in self._edge_set or (tail, head) in self._edge_set

    def relation_edges(self, relation: int) -> tuple[np.ndarray, np.ndarray]:
        heads = [h for h, r, t in self.triples if r == relation]
        tails = [t for h, r, t in self.triples if r == relation]
        return np.asarray(heads, dtype=np.int64), np.asarray(tails, dtype=np.int64)


def _parse_bool(text: str, path, lineno) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes"):
        return True
    if value in ("0", "false", "no"):
        return False
    raise ParseError(f"{path}:{lineno}: bad boolean {text!r}")


def _read_entity_table(path: Path):
    ids, names, flags = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields")
            ids.append(parts[0])
            names.append(parts[1])
            flags.append(_parse_bool(parts[2], path, lineno))
    return ids, names, flags


def default_entity_path(triple_path) -> Path:
    p = Path(triple_path)
    return p.with_name(p.stem + ".entities.tsv")


def load_kg(path, format: str = "triple_tsv", entity_path=None) -> KnowledgeGraph:
    """Load, validate and deduplicate a knowledge graph file."""
    path = Path(path)
    if format == "triple_tsv":
        entity_path = Path(entity_path) if entity_path else default_entity_path(path)
        ids, names, flags = _read_entity_table(entity_path)
        id_to_index = {eid: i for i, eid in enumerate(ids)}
        relations: list[str] = []
        rel_index: dict[str, int] = {}
        triples = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields")
                head, rel, tail = parts
                if head not in id_to_index:
                    raise DanglingIdError(f"{path}:{lineno}: unknown head entity {head!r}")
                if tail not in id_to_index:
                    raise DanglingIdError(f"{path}:{lineno}: unknown tail entity {tail!r}")
                if rel not in rel_index:
                    rel_index[rel] = len(relations)
                    relations.append(rel)
                triples.append((id_to_index[head], rel_index[rel], id_to_index[tail]))
        return KnowledgeGraph(ids, names, flags, relations, triples)

    if format == "triple_json":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
        ids = [e["id"] for e in doc["entities"]]
        names = [e["name"] for e in doc["entities"]]
        flags = [bool(e.get("is_item", False)) for e in doc["entities"]]
        id_to_index = {eid: i for i, eid in enumerate(ids)}
        relations, rel_index, triples = [], {}, []
        for i, (head, rel, tail) in enumerate(doc.get("triples", [])):
            if head not in id_to_index:
                raise DanglingIdError(f"{path}: triple {i}: unknown head entity {head!r}")
            if tail not in id_to_index:
                raise DanglingIdError(f"{path}: triple {i}: unknown tail entity {tail!r}")
            if rel not in rel_index:
                rel_index[rel] = len(relations)
                relations.append(rel)
            triples.append((id_to_index[head], rel_index[rel], id_to_index[tail]))
        return KnowledgeGraph(ids, names, flags, relations, triples)

    raise ValueError(f"unknown KG format: {format!r}")


class EntityLinker:
    """Greedy longest-match linking of KG surface names in token sequences."""

    def __init__(self, kg: KnowledgeGraph):
        self._by_tokens: dict[tuple[str, ...], int] = {}
        self.max_len = 1
        for idx, name in enumerate(kg.entity_names):
            toks = tuple(tokenize(normalize_name(name)))
            if not toks:
                continue
            # first declaration wins on duplicate surface names
            self._by_tokens.setdefault(toks, idx)
            self.max_len = max(self.max_len, len(toks))

    def link(self, tokens) -> tuple[int, ...]:
        found: list[int] = []
        i = 0
        n = len(tokens)
        while i < n:
            matched = False
            for span in range(min(self.max_len, n - i), 0, -1):
                idx = self._by_tokens.get(tuple(tokens[i : i + span]))
                if idx is not None:
                    if idx not in found:
                        found.append(idx)
                    i += span
                    matched = True
                    break
            if not matched:
                i += 1
        return tuple(found)


def load_dialogues(path, kg: KnowledgeGraph) -> list[Dialogue]:
    """Read line-delimited dialogue JSON and resolve entity mentions."""
    linker = EntityLinker(kg)
    dialogues = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            turns_raw = record.get("turns", [])
            if not turns_raw:
                raise ParseError(f"{path}:{lineno}: dialogue has no turns")
            turns = []
            for turn in turns_raw:
                speaker = turn.get("speaker")
                if speaker not in SPEAKERS:
                    raise ParseError(f"{path}:{lineno}: unknown speaker {speaker!r}")
                tokens = tuple(tokenize(turn.get("text", "")))
                if not tokens:
                    raise ParseError(f"{path}:{lineno}: empty utterance text")
                linked = list(linker.link(tokens))
                for eid in turn.get("entities", []):
                    idx = kg.id_to_index.get(eid)
                    if idx is None:
                        logger.warning(
                            "%s:%d: entity %r not in the knowledge graph; skipped",
                            path,
                            lineno,
                            eid,
                        )
                        continue
                    if idx not in linked:
                        linked.append(idx)
                turns.append(Utterance(speaker, tokens, tuple(linked)))
            dialogues.append(Dialogue(str(record.get("dialogue_id", lineno)), tuple(turns)))
    return dialogues


def build_examples(dialogues, kg: KnowledgeGraph) -> list[TurnExample]:
    """One example per recommender-side turn with at least one context turn.

    Examples whose response mentions no item keep an empty target set; they
    feed the generation subtask and are skipped by the recommendation loss.
    """
    examples = []
    for dialogue in dialogues:
        for t in range(2, len(dialogue.turns) + 1):
            response = dialogue.turns[t - 1]
            if response.speaker != RECOMMENDER:
                continue
            targets = tuple(e for e in response.entities if kg.item_flags[e])
            examples.append(
                TurnExample(
                    dialogue_id=dialogue.dialogue_id,
                    turn_index=t,
                    context=dialogue.turns[: t - 1],
                    target_items=targets,
                    gold_response=response,
                )
            )
    return examples


def mentioned_entities(context) -> tuple[int, ...]:
    """Entities mentioned anywhere in the context, deduplicated in first-mention order."""
    seen: list[int] = []
    for utt in context:
        for e in utt.entities:
            if e not in seen:
                seen.append(e)
    return tuple(seen)


@dataclass
class CooccurrenceStats:
    """Per-example occurrence counts; the counting unit is one TurnExample."""

    unit_count: int
    entity_count: np.ndarray
    _pairs: dict[tuple[int, int], int] = field(default_factory=dict)

    def pair_count(self, e: int, h: int) -> int:
        if e == h:
            return 0
        key = (e, h) if e < h else (h, e)
        return self._pairs.get(key, 0)

    def pair_table(self):
        """Ordered-pair arrays (both directions), sorted by (entity, head)."""
        rows = []
        for (a, b), c in self._pairs.items():
            rows.append((a, b, c))
            rows.append((b, a, c))
        rows.sort()
        if not rows:
            return (
                np.zeros(0, dtype=np.int64),
                np.zeros(0, dtype=np.int64),
                np.zeros(0, dtype=np.float64),
            )
        arr = np.asarray(rows, dtype=np.float64)
        return (
            arr[:, 0].astype(np.int64),
            arr[:, 1].astype(np.int64),
            arr[:, 2].copy(),
        )


def count_cooccurrence(examples, n_entities: int) -> CooccurrenceStats:
    """Count entity occurrences and pairwise co-occurrences per example.

    An entity occurs when mentioned anywhere in the context or the gold
    response; self-pairs are not counted.
    """
    entity_count = np.zeros(n_entities, dtype=np.float64)
    pairs: dict[tuple[int, int], int] = {}
    for example in examples:
        present = set(mentioned_entities(example.context))
        present.update(example.gold_response.entities)
        ordered = sorted(present)
        for e in ordered:
            entity_count[e] += 1.0
        for i, a in enumerate(ordered):
            for b in ordered[i + 1 :]:
                pairs[(a, b)] = pairs.get((a, b), 0) + 1
    return CooccurrenceStats(len(examples), entity_count, pairs)


class Vocabulary:
    """Token table with reserved control indices."""

    PAD, UNK, BOS, EOS, SEP = 0, 1, 2, 3, 4
    RESERVED = ("<pad>", "<unk>", "<s>", "</s>", "<sep>")

    def __init__(self, tokens):
        self.index_to_token = list(self.RESERVED) + list(tokens)
        self.token_to_index = {t: i for i, t in enumerate(self.index_to_token)}
        if len(self.token_to_index) != len(self.index_to_token):
            raise ValueError("duplicate token in vocabulary")

    def __len__(self):
        return len(self.index_to_token)

    def encode(self, tokens) -> list[int]:
        return [self.token_to_index.get(t, self.UNK) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.index_to_token[i] for i in ids]

    @classmethod
    def build(cls, dialogues, kg: KnowledgeGraph, max_size: int) -> "Vocabulary":
        """Frequency-ranked corpus tokens plus all entity surface tokens.

        Entity-name tokens always enter the table so the copy mechanism can
        emit them even when they never occur in training responses.
        """
        counts: dict[str, int] = {}
        for dialogue in dialogues:
            for turn in dialogue.turns:
                for tok in turn.tokens:
                    counts[tok] = counts.get(tok, 0) + 1
        entity_tokens = []
        seen = set()
        for name in kg.entity_names:
            for tok in tokenize(normalize_name(name)):
                if tok not in seen:
                    seen.add(tok)
                    entity_tokens.append(tok)
        budget = max_size - len(cls.RESERVED)
        chosen = entity_tokens[:budget]
        chosen_set = set(chosen)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        for tok, _ in ranked:
            if len(chosen) >= budget:
                break
            if tok not in chosen_set:
                chosen_set.add(tok)
                chosen.append(tok)
        return cls(chosen)
