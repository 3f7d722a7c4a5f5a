"""Automatic evaluation: Recall@m, Distinct-n, and ROUGE recall scores."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import kernels

import numpy as np

RECALL_CUTOFFS = (1, 10, 50)
DISTINCT_ORDERS = (3, 4)


def recall_at_k(rankings, gold_sets, m: int) -> float:
    """Fraction of (example, gold item) pairs whose item appears in the
    ranking's top-m. Examples with empty gold sets are skipped."""
    hits = 0
    total = 0
    for ranking, gold in zip(rankings, gold_sets):
        if not gold:
            continue
        top = set(ranking[:m])
        for item in gold:
            total += 1
            if item in top:
                hits += 1
    return hits / total if total else 0.0


def _ngrams(tokens, n: int):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def distinct_n(responses, n: int) -> float:
    """Corpus-level unique/total n-gram ratio across all responses."""
    if n < 1:
        raise ValueError("n must be at least 1")
    seen = set()
    total = 0
    for tokens in responses:
        for gram in _ngrams(list(tokens), n):
            seen.add(gram)
            total += 1
    return len(seen) / total if total else 0.0


def _rouge_n(generated, reference, n: int) -> float:
    """Recall variant: clipped n-gram overlap / reference n-gram count."""
    ref_grams = _ngrams(reference, n)
    if not ref_grams:
        return 0.0
    ref_counts: dict[tuple, int] = {}
    for g in ref_grams:
        ref_counts[g] = ref_counts.get(g, 0) + 1
    gen_counts: dict[tuple, int] = {}
    for g in _ngrams(generated, n):
        gen_counts[g] = gen_counts.get(g, 0) + 1
    overlap = sum(min(c, gen_counts.get(g, 0)) for g, c in ref_counts.items())
    return overlap / len(ref_grams)


def _rouge_l(generated, reference, token_index) -> float:
    if not reference:
        return 0.0
    a = np.asarray([token_index(t) for t in generated], dtype=np.int64)
    b = np.asarray([token_index(t) for t in reference], dtype=np.int64)
    return kernels.lcs_length(a, b) / len(reference)


def rouge_scores(generated_list, reference_list) -> dict[str, float]:
    """Mean ROUGE-1/2 recall and LCS-recall ROUGE-L over example pairs;
    empty references are skipped."""
    interned: dict[str, int] = {}

    def token_index(tok: str) -> int:
        return interned.setdefault(tok, len(interned))

    r1, r2, rl = [], [], []
    for gen, ref in zip(generated_list, reference_list):
        gen = list(gen)
        ref = list(ref)
        if not ref:
            continue
        r1.append(_rouge_n(gen, ref, 1))
        r2.append(_rouge_n(gen, ref, 2))
        rl.append(_rouge_l(gen, ref, token_index))
    if not r1:
        return {"rouge1": 0.0, "rouge2": 0.0, "rougeL": 0.0}
    return {
        "rouge1": float(np.mean(r1)),
        "rouge2": float(np.mean(r2)),
        "rougeL": float(np.mean(rl)),
    }


@dataclass
class EvalReport:
    recall: dict[int, float] = field(default_factory=dict)
    distinct: dict[int, float] = field(default_factory=dict)
    rouge: dict[str, float] = field(default_factory=dict)
    example_count: int = 0

    def to_dict(self) -> dict:
        return {
            "recall": {str(k): v for k, v in sorted(self.recall.items())},
            "distinct": {str(k): v for k, v in sorted(self.distinct.items())},
            "rouge": dict(sorted(self.rouge.items())),
            "example_count": self.example_count,
        }

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8"
        )

    @classmethod
    def from_dict(cls, raw) -> "EvalReport":
        return cls(
            recall={int(k): v for k, v in raw["recall"].items()},
            distinct={int(k): v for k, v in raw["distinct"].items()},
            rouge=dict(raw["rouge"]),
            example_count=int(raw["example_count"]),
        )


def build_report(rankings, gold_sets, generated, references) -> EvalReport:
    report = EvalReport(example_count=len(rankings))
    for m in RECALL_CUTOFFS:
        report.recall[m] = recall_at_k(rankings, gold_sets, m)
    for n in DISTINCT_ORDERS:
        report.distinct[n] = distinct_n(generated, n)
    report.rouge = rouge_scores(generated, references)
    return report
