"""Entity representations from relational graph convolution.

One convolution layer computes, for every entity, a self-loop transform of
its base embedding plus, per relation type, the mean of its neighbors'
transformed embeddings (edges treated as undirected). A self-attentive
pooling of the mentioned entities then drives the pre-recommendation
pretraining objective.
"""

from __future__ import annotations

import numpy as np

from .corpus import KnowledgeGraph
from .nn import Embedding, Linear, Module, Tensor, autodiff as ad


def _matvec(mat, vec):
    """(N, d) @ (d,) -> (N,) through the autodiff graph."""
    out = ad.matmul(mat, ad.reshape(vec, (-1, 1)))
    return ad.reshape(out, (-1,))


class RelationalConvLayer(Module):
    """Per-relation mean aggregation plus a self-loop transform."""

    def __init__(self, d: int, n_relations: int, rng):
        self.self_loop = Linear(d, d, rng, bias=False)
        self.relation_transforms = [
            Linear(d, d, rng, bias=False) for _ in range(n_relations)
        ]

    def __call__(self, x: Tensor, structure) -> Tensor:
        out = self.self_loop(x)
        for r, (src, dst, coef) in enumerate(structure):
            if src.size == 0:
                continue
            messages = self.relation_transforms[r](x)
            out = ad.add(out, ad.edge_aggregate(messages, src, dst, coef, x.shape[0]))
        return out


def graph_structure(kg: KnowledgeGraph):
    """Per-relation (src, dst, 1/deg(dst)) arrays with edges mirrored."""
    structure = []
    for r in range(kg.n_relations):
        heads, tails = kg.relation_edges(r)
        directed = set()
        for h, t in zip(heads.tolist(), tails.tolist()):
            directed.add((h, t))
            directed.add((t, h))
        if not directed:
            structure.append(
                (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))
            )
            continue
        pairs = sorted(directed)
        src = np.asarray([s for s, _ in pairs], dtype=np.int64)
        dst = np.asarray([d for _, d in pairs], dtype=np.int64)
        deg = np.bincount(dst, minlength=kg.n_entities).astype(np.float64)
        coef = 1.0 / deg[dst]
        structure.append((src, dst, coef))
    return structure


class GraphEncoder(Module):
    """Base embeddings plus a stack of relational convolution layers."""

    def __init__(self, kg: KnowledgeGraph, d: int, n_layers: int, rng):
        if n_layers < 1:
            raise ValueError("need at least one convolution layer")
        self.base = Embedding(kg.n_entities, d, rng)
        self.layers = [
            RelationalConvLayer(d, kg.n_relations, rng) for _ in range(n_layers)
        ]
        self._structure = graph_structure(kg)

    def __call__(self) -> Tensor:
        x = self.base.table
        for layer in self.layers:
            x = layer(x, self._structure)
        return x


class SelfAttentivePooling(Module):
    """a = softmax(b . tanh(W_a N)); u = N a over mentioned-entity rows."""

    def __init__(self, d_ent: int, d_att: int, rng):
        scale = 1.0 / np.sqrt(d_ent)
        self.w_a = Tensor(
            rng.uniform(-scale, scale, size=(d_att, d_ent)), requires_grad=True
        )
        self.b = Tensor(rng.uniform(-scale, scale, size=(d_att,)), requires_grad=True)

    def __call__(self, mentioned, emb: Tensor):
        """Returns (u, a). Empty mention lists fall back to u = 0, a = []."""
        if len(mentioned) == 0:
            d_ent = emb.shape[1]
            return Tensor(np.zeros(d_ent)), Tensor(np.zeros(0))
        rows = ad.gather_rows(emb, np.asarray(mentioned, dtype=np.int64))  # (M, d)
        scores = ad.tanh(ad.matmul(rows, ad.transpose(self.w_a, (1, 0))))  # (M, d_att)
        logits = _matvec(scores, self.b)  # (M,)
        a = ad.softmax(logits, axis=-1)
        u = _matvec(ad.transpose(rows, (1, 0)), a)  # (d,)
        return u, a


def pre_rec_distribution(u: Tensor, emb: Tensor, item_ids) -> Tensor:
    """Softmax over u . e_i restricted to item entities."""
    item_ids = np.asarray(item_ids, dtype=np.int64)
    if item_ids.size == 0:
        raise ValueError("item list must be non-empty")
    items = ad.gather_rows(emb, item_ids)
    return ad.softmax(_matvec(items, u), axis=-1)


def pre_rec_loss(dist: Tensor, target_slots, eps: float = 1e-10) -> Tensor:
    """Mean over targets of -log dist[target]; targets index into the item axis."""
    slots = np.asarray(target_slots, dtype=np.int64)
    if slots.size == 0:
        raise ValueError("loss undefined for empty target set")
    picked = ad.clamp_min(ad.gather_rows(ad.reshape(dist, (-1, 1)), slots), eps)
    return ad.mul(ad.sum_(ad.log(picked)), -1.0 / slots.size)
