"""Response generation: a decoder that attends over dialogue knowledge.

Each decoder layer runs masked self-attention, attention over head-entity
representations, attention over the filtered tail-entity representations,
cross-attention over the encoded context tokens, and a feed-forward block
(pre-norm residuals throughout). Empty knowledge matrices skip their
sublayer. A copy mechanism mixes the vocabulary softmax with attention
weights over source tokens (context words plus the surface names of
connected tail entities) through a learned sigmoid gate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Vocabulary
from .nn import (
    Embedding,
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    Tensor,
    autodiff as ad,
    causal_mask,
)

_EPS = 1e-10


@dataclass
class KnowledgeMatrices:
    """Stacked head/tail entity representations feeding decoder attention.

    Tail rows are restricted to tails the prior connects under argmax
    sampling; either matrix may be empty.
    """

    head_rows: Tensor  # (H, d_ent)
    tail_rows: Tensor  # (T, d_ent)
    tail_entities: tuple[int, ...] = field(default=())

    @classmethod
    def empty(cls, d_ent: int) -> "KnowledgeMatrices":
        zero = Tensor(np.zeros((0, d_ent)))
        return cls(zero, zero, ())


class DecoderLayer(Module):
    """Self-attention, two knowledge attentions, context cross-attention, FFN."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, rng):
        self.ln_self = LayerNorm(d_model)
        self.self_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.ln_head = LayerNorm(d_model)
        self.head_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.ln_tail = LayerNorm(d_model)
        self.tail_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.ln_ctx = LayerNorm(d_model)
        self.ctx_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.ln_ffn = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, d_ff, rng)

    def __call__(self, c, n_h, n_t, x_ctx, mask):
        normed = self.ln_self(c)
        a = ad.add(c, self.self_attn(normed, normed, mask=mask))
        if n_h is not None and n_h.shape[0] > 0:
            a = ad.add(a, self.head_attn(self.ln_head(a), n_h))
        if n_t is not None and n_t.shape[0] > 0:
            a = ad.add(a, self.tail_attn(self.ln_tail(a), n_t))
        if x_ctx is not None and x_ctx.shape[0] > 0:
            a = ad.add(a, self.ctx_attn(self.ln_ctx(a), x_ctx))
        return ad.add(a, self.ffn(self.ln_ffn(a)))


def copy_mix(gen_dist, copy_weights, source_ids, gate, n_vocab: int):
    """output(w) = gate * gen(w) + (1 - gate) * sum of weights at positions
    holding token w. ``gate`` may be a scalar float or a (T, 1) tensor."""
    source_ids = np.asarray(source_ids, dtype=np.int64)
    copy_vocab = ad.scatter_add_cols(copy_weights, source_ids, n_vocab)
    if isinstance(gate, Tensor):
        keep = gate
        inv = ad.sub(1.0, gate)
    else:
        keep = float(gate)
        inv = 1.0 - float(gate)
    return ad.add(ad.mul(gen_dist, keep), ad.mul(copy_vocab, inv))


class Generator(Module):
    def __init__(self, vocab, d_model, d_ent, n_layers, n_heads, d_ff, max_len, rng):
        self.vocab = vocab
        self.max_len = max_len
        self.d_model = d_model
        self.tok_emb = Embedding(len(vocab), d_model, rng)
        self.pos_emb = Embedding(max_len, d_model, rng)
        self.layers = [
            DecoderLayer(d_model, n_heads, d_ff, rng) for _ in range(n_layers)
        ]
        self.final_norm = LayerNorm(d_model)
        self.out_proj = Linear(d_model, len(vocab), rng)
        self.ent_proj = Linear(d_ent, d_model, rng)
        self.copy_query = Linear(d_model, d_model, rng)
        self.copy_gate = Linear(d_model, 1, rng)

    def project_knowledge(self, knowledge: KnowledgeMatrices):
        """Map entity-width rows to decoder width; empties stay empty."""

        def proj(rows):
            if rows.shape[0] == 0:
                return Tensor(np.zeros((0, self.d_model)))
            return self.ent_proj(rows)

        return proj(knowledge.head_rows), proj(knowledge.tail_rows)

    def step_distributions(
        self,
        input_ids,
        knowledge: KnowledgeMatrices,
        x_ctx,
        source_ids,
        gate_override=None,
    ) -> Tensor:
        """Teacher-forced per-position output distributions, shape (T, vocab).

        ``input_ids[j]`` is the token fed at position j; row j is the
        distribution over the token at position j+1 of the response.
        """
        ids = np.asarray(input_ids, dtype=np.int64)
        if ids.size == 0 or ids.size > self.max_len:
            raise ValueError(f"prefix length {ids.size} outside (0, {self.max_len}]")
        h = ad.add(self.tok_emb(ids), self.pos_emb(np.arange(ids.size)))
        n_h, n_t = self.project_knowledge(knowledge)
        mask = causal_mask(ids.size)
        for layer in self.layers:
            h = layer(h, n_h, n_t, x_ctx, mask)
        h = self.final_norm(h)
        gen = ad.softmax(self.out_proj(h), axis=-1)

        source_ids = np.asarray(source_ids, dtype=np.int64)
        if source_ids.size == 0:
            return gen
        src_repr = self.tok_emb(source_ids)  # (S, d_model)
        scores = ad.mul(
            ad.matmul(self.copy_query(h), ad.transpose(src_repr, (1, 0))),
            1.0 / np.sqrt(self.d_model),
        )
        weights = ad.softmax(scores, axis=-1)  # (T, S)
        if gate_override is None:
            gate = ad.sigmoid(self.copy_gate(h))  # (T, 1)
        else:
            gate = float(gate_override)
        return copy_mix(gen, weights, source_ids, gate, len(self.vocab))

    def generate(
        self,
        knowledge: KnowledgeMatrices,
        x_ctx,
        source_ids,
        max_len: int,
        mode: str = "greedy",
        beam_width: int = 1,
    ) -> list[int]:
        """Autoregressive decoding; returns response token ids without the
        start/end markers. Greedy is exactly beam search of width 1."""
        if mode == "greedy":
            beam_width = 1
        elif mode != "beam":
            raise ValueError(f"unknown decode mode: {mode!r}")
        if beam_width < 1:
            raise ValueError("beam width must be at least 1")
        max_len = min(max_len, self.max_len - 1)

        beams = [([Vocabulary.BOS], 0.0, False)]
        for _ in range(max_len):
            candidates = []
            for seq, logp, done in beams:
                if done:
                    candidates.append((seq, logp, True))
                    continue
                dist = self.step_distributions(seq, knowledge, x_ctx, source_ids)
                row = np.log(np.clip(dist.data[-1], _EPS, None))
                top = np.argsort(-row, kind="stable")[:beam_width]
                for tok in top.tolist():
                    candidates.append(
                        (seq + [tok], logp + float(row[tok]), tok == Vocabulary.EOS)
                    )
            candidates.sort(key=lambda c: (-c[1], c[0]))
            beams = candidates[:beam_width]
            if all(done for _, _, done in beams):
                break
        best = beams[0][0][1:]  # strip the start marker
        if best and best[-1] == Vocabulary.EOS:
            best = best[:-1]
        return best


def gen_loss(dists: Tensor, gold_ids, eps: float = _EPS) -> Tensor:
    """Mean negative log-likelihood of the gold tokens under the per-step
    distributions."""
    gold = np.asarray(gold_ids, dtype=np.int64)
    if gold.size == 0 or gold.size != dists.shape[0]:
        raise ValueError("one gold token required per distribution row")
    onehot = np.zeros((gold.size, dists.shape[1]))
    onehot[np.arange(gold.size), gold] = 1.0
    picked = ad.sum_(ad.mul(dists, Tensor(onehot)), axis=1)
    return ad.mul(ad.sum_(ad.log(ad.clamp_min(picked, eps))), -1.0 / gold.size)
