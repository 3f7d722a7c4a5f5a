"""Item scoring from latent-relation weights and the training objective.

The user representation is a relation-probability-weighted sum of tail
embeddings over all candidate pairs; item scores mix a softmax over
embedding dot products with per-item relation mass. The full objective adds
a KL term between the posterior and prior relation networks and the
original-graph regularizer. Exact and Monte-Carlo evidence-lower-bound
estimates are provided for diagnostics and bound verification.
"""

from __future__ import annotations

import itertools

import numpy as np

from .nn import Tensor, autodiff as ad

_EPS = 1e-10


def user_representation(weights: Tensor, tail_emb: Tensor) -> Tensor:
    """e_u = sum over pairs of weight * tail embedding.

    A tail reached from several heads contributes once per pair. Empty pair
    sets produce the zero vector.
    """
    if tail_emb.shape[0] == 0:
        return Tensor(np.zeros(tail_emb.shape[1]))
    out = ad.matmul(ad.reshape(weights, (1, -1)), tail_emb)
    return ad.reshape(out, (-1,))


def recommend_scores(
    e_u: Tensor,
    item_emb: Tensor,
    weights: Tensor,
    tail_ids: np.ndarray,
    item_ids: np.ndarray,
    alpha: float,
) -> Tensor:
    """score(i) = alpha * softmax(e_u . e_i) + (1-alpha) * relation mass / Z.

    The relation mass of item i sums the connection weights of every pair
    whose tail is i; Z normalizes that mass over items. When no relation
    mass reaches any item (Z = 0) the second term is dropped and the softmax
    term is used alone.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    item_ids = np.asarray(item_ids, dtype=np.int64)
    n_items = item_ids.size
    logits = ad.reshape(ad.matmul(item_emb, ad.reshape(e_u, (-1, 1))), (-1,))
    first = ad.softmax(logits, axis=-1)

    tail_ids = np.asarray(tail_ids, dtype=np.int64)
    if tail_ids.size == 0:
        return first
    slot_of = {int(e): i for i, e in enumerate(item_ids)}
    seg = np.asarray(
        [slot_of.get(int(t), n_items) for t in tail_ids], dtype=np.int64
    )
    mass = ad.segment_sum(weights, seg, n_items + 1)[:n_items]
    z = ad.sum_(mass)
    if z.data <= 0.0:
        return first
    second = ad.div(mass, z)
    return ad.add(ad.mul(first, alpha), ad.mul(second, 1.0 - alpha))


def rec_loss(scores, target_slots, kl, reg, beta, gamma, lam, eps=_EPS):
    """L = beta * mean(-log score(target)) + gamma * KL + lambda * reg."""
    slots = np.asarray(target_slots, dtype=np.int64)
    if slots.size == 0:
        raise ValueError("recommendation loss needs at least one target")
    picked = ad.clamp_min(ad.gather_rows(ad.reshape(scores, (-1, 1)), slots), eps)
    ce = ad.mul(ad.sum_(ad.log(picked)), -1.0 / slots.size)
    total = ad.mul(ce, beta)
    total = ad.add(total, ad.mul(kl, gamma))
    return ad.add(total, ad.mul(reg, lam))


def rank_items(scores, item_ids, m: int) -> list[int]:
    """Top-m item entity ids by score; ties broken by ascending id."""
    if m < 1:
        raise ValueError("m must be at least 1")
    data = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    order = sorted(range(len(item_ids)), key=lambda i: (-data[i], item_ids[i]))
    return [int(item_ids[i]) for i in order[:m]]


# ---------------------------------------------------------------------------
# Evidence lower bound diagnostics
# ---------------------------------------------------------------------------

def _as_probs(dist) -> np.ndarray:
    return dist.data if isinstance(dist, Tensor) else np.asarray(dist, dtype=np.float64)


def assignment_prob(dist: np.ndarray, bits) -> float:
    """Probability of a joint bit assignment under a factorized distribution."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size == 0:
        return 1.0
    return float(np.prod(dist[np.arange(bits.size), bits]))


def enumerate_assignments(n_pairs: int):
    """All 2^n bit vectors in binary counting order."""
    for bits in itertools.product((0, 1), repeat=n_pairs):
        yield np.asarray(bits, dtype=np.int64)


def kl_divergence(q: np.ndarray, p: np.ndarray) -> float:
    """Sum over pairs of KL(q || p); plain NumPy, zero-aware."""
    q = np.clip(q, _EPS, None)
    p = np.clip(p, _EPS, None)
    return float((q * (np.log(q) - np.log(p))).sum())


def exact_elbo(q_dist, p_dist, loglik_fn) -> float:
    """Exact expectation of the bound: E_q[log P(target | bits)] - KL(q || p).

    Feasible only for small pair sets (2^n enumeration); used to verify the
    bound against the enumerated log marginal.
    """
    q = _as_probs(q_dist)
    p = _as_probs(p_dist)
    expect = 0.0
    for bits in enumerate_assignments(q.shape[0]):
        w = assignment_prob(q, bits)
        if w > 0.0:
            expect += w * loglik_fn(bits)
    return expect - kl_divergence(q, p)


def mc_elbo(q_dist, p_dist, loglik_fn, rng, n_samples: int) -> float:
    """Monte-Carlo estimate of the bound with bits drawn from q."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    q = _as_probs(q_dist)
    p = _as_probs(p_dist)
    total = 0.0
    for _ in range(n_samples):
        bits = (rng.uniform(size=q.shape[0]) < q[:, 1]).astype(np.int64)
        total += loglik_fn(bits)
    return total / n_samples - kl_divergence(q, p)


def log_marginal(p_dist, loglik_fn) -> float:
    """log sum over assignments of p(bits) * P(target | bits), enumerated."""
    p = _as_probs(p_dist)
    terms = []
    for bits in enumerate_assignments(p.shape[0]):
        w = assignment_prob(p, bits)
        if w > 0.0:
            terms.append(np.log(w) + loglik_fn(bits))
    terms = np.asarray(terms)
    peak = terms.max()
    return float(peak + np.log(np.exp(terms - peak).sum()))
