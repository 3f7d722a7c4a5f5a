"""Dialogue-context encoding.

A small trainable transformer encoder produces three things: the prior
condition vector (context alone), the posterior condition vector (context
plus the target item's surface words behind a separator), and the per-token
matrix the response decoder cross-attends to. The first-position hidden
state is the pooled sentence vector, so pooling is consistent with the token
matrix by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import KnowledgeGraph, Vocabulary, normalize_name, tokenize
from .nn import (
    Embedding,
    LayerNorm,
    Module,
    Tensor,
    TransformerEncoderLayer,
    autodiff as ad,
)


class OfflineEncoderError(RuntimeError):
    """Raised when a pretrained text encoder is requested in an offline build."""


@dataclass
class TokenMatrix:
    values: Tensor  # (L, d_ctx)
    mask: np.ndarray  # (L,) bool; False rows are zero padding


def make_context_encoder(cfg, vocab: Vocabulary, rng) -> "TinyContextEncoder":
    if cfg.encoder == "tiny":
        return TinyContextEncoder(
            vocab,
            d_model=cfg.ctx_dim,
            n_layers=cfg.enc_layers,
            n_heads=cfg.n_heads,
            d_ff=cfg.ffn_dim,
            max_len=cfg.max_ctx_len,
            rng=rng,
        )
    if cfg.encoder == "pretrained":
        raise OfflineEncoderError(
            "pretrained context encoders require model downloads; "
            "set encoder='tiny' for a self-contained run"
        )
    raise ValueError(f"unknown encoder flavour: {cfg.encoder!r}")


class TinyContextEncoder(Module):
    def __init__(self, vocab, d_model, n_layers, n_heads, d_ff, max_len, rng):
        self.vocab = vocab
        self.max_len = max_len
        self.tok_emb = Embedding(len(vocab), d_model, rng)
        self.pos_emb = Embedding(max_len, d_model, rng)
        self.layers = [
            TransformerEncoderLayer(d_model, n_heads, d_ff, rng)
            for _ in range(n_layers)
        ]
        self.final_norm = LayerNorm(d_model)

    # -- sequence construction ------------------------------------------------

    def context_token_ids(self, context) -> list[int]:
        """Utterance tokens joined by separators, newest-suffix truncated.

        The leading start token is always kept; truncation drops the oldest
        context tokens first.
        """
        flat: list[int] = []
        for i, utt in enumerate(context):
            if i:
                flat.append(Vocabulary.SEP)
            flat.extend(self.vocab.encode(utt.tokens))
        budget = self.max_len - 1
        return [Vocabulary.BOS] + flat[-budget:]

    def context_with_target_token_ids(self, context, item: int, kg: KnowledgeGraph):
        """Context tokens, a separator, then the item's surface words."""
        if not 0 <= item < kg.n_entities:
            raise KeyError(f"unknown item index: {item}")
        name_tokens = tokenize(normalize_name(kg.entity_names[item]))
        suffix = [Vocabulary.SEP] + self.vocab.encode(name_tokens)
        flat: list[int] = []
        for i, utt in enumerate(context):
            if i:
                flat.append(Vocabulary.SEP)
            flat.extend(self.vocab.encode(utt.tokens))
        budget = max(self.max_len - 1 - len(suffix), 0)
        if budget == 0:
            return [Vocabulary.BOS] + suffix[: self.max_len - 1]
        return [Vocabulary.BOS] + flat[-budget:] + suffix

    # -- encoding ---------------------------------------------------------------

    def encode_ids(self, token_ids) -> Tensor:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.size == 0 or ids.size > self.max_len:
            raise ValueError(f"sequence length {ids.size} outside (0, {self.max_len}]")
        x = ad.add(self.tok_emb(ids), self.pos_emb(np.arange(ids.size)))
        for layer in self.layers:
            x = layer(x)
        return self.final_norm(x)

    def encode_tokens(self, context, pad_to: int | None = None) -> TokenMatrix:
        """Per-token representations of the assembled context sequence."""
        ids = self.context_token_ids(context)
        values = self.encode_ids(ids)
        mask = np.ones(len(ids), dtype=bool)
        if pad_to is not None:
            if pad_to < len(ids):
                raise ValueError("pad_to shorter than the sequence")
            pad = pad_to - len(ids)
            if pad:
                zeros = Tensor(np.zeros((pad, values.shape[1])))
                values = ad.concat([values, zeros], axis=0)
                mask = np.concatenate([mask, np.zeros(pad, dtype=bool)])
        return TokenMatrix(values, mask)

    def encode_context(self, context) -> Tensor:
        """Prior condition vector: first-position state of the token matrix."""
        return self.encode_ids(self.context_token_ids(context))[0]

    def encode_context_with_target(self, context, item: int, kg) -> Tensor:
        """Posterior condition vector; sees the target item's words, never its
        graph embedding."""
        return self.encode_ids(self.context_with_target_token_ids(context, item, kg))[0]
