"""Relation refactoring: predict, sample, and regularize latent pair relations.

For every candidate (head, tail) pair the fusion of head embedding, tail
embedding, and a context condition vector feeds two small classifiers:

* the prior network sees the dialogue context alone;
* the posterior network sees the context plus the target item's words.

Both emit a two-class distribution over {not connected, connected}. Training
regularizes both toward the edges actually present in the incomplete graph
and pulls the posterior toward the prior through a KL term; subgraph
realizations are drawn with Gumbel sampling so gradients can flow through
the discrete choice.

Distribution arrays have shape (n_pairs, 2); column ``NOT_CONNECTED = 0``,
column ``CONNECTED = 1``.
"""

from __future__ import annotations

import numpy as np

from .nn import Linear, Module, Tensor, autodiff as ad, xavier_param

NOT_CONNECTED = 0
CONNECTED = 1


def _broadcast_rows(vec: Tensor, n: int) -> Tensor:
    """(d,) -> (n, d) through the graph (gradient sums over rows)."""
    return ad.mul(Tensor(np.ones((n, 1))), ad.reshape(vec, (1, -1)))


class FusionModule(Module):
    """m = [f1; f2; f3] W_o per pair, with the context projected to d_ent.

    f1 = [e_h; e_t; d], f2 = [e_h*e_t; e_t*d; e_h*d], f3 = e_h*e_t*d, where *
    is the elementwise product; W_o is square (7 d_ent) and has no bias.
    """

    def __init__(self, d_ent: int, ctx_dim: int, rng):
        self.ctx_proj = Linear(ctx_dim, d_ent, rng)
        self.w_o = xavier_param(rng, 7 * d_ent, 7 * d_ent)

    def project_context(self, d_vec: Tensor) -> Tensor:
        return self.ctx_proj(d_vec)

    def __call__(self, e_h: Tensor, e_t: Tensor, d: Tensor) -> Tensor:
        n = e_h.shape[0]
        if d.ndim == 1:
            d = _broadcast_rows(d, n)
        f1 = ad.concat([e_h, e_t, d], axis=1)
        ht = ad.mul(e_h, e_t)
        f2 = ad.concat([ht, ad.mul(e_t, d), ad.mul(e_h, d)], axis=1)
        f3 = ad.mul(ht, d)
        return ad.matmul(ad.concat([f1, f2, f3], axis=1), self.w_o)


class RelationClassifier(Module):
    """Two-layer perceptron with tanh hidden layer and a 2-way softmax."""

    def __init__(self, d_ent: int, hidden: int, rng):
        self.lin1 = Linear(7 * d_ent, hidden, rng)
        self.lin2 = Linear(hidden, 2, rng)

    def __call__(self, m: Tensor) -> Tensor:
        return ad.softmax(self.lin2(ad.tanh(self.lin1(m))), axis=-1)


class RefactorNetworks(Module):
    """Shared fusion plus separate prior/posterior classifier parameters."""

    def __init__(self, d_ent: int, ctx_dim: int, hidden: int, rng):
        self.fusion = FusionModule(d_ent, ctx_dim, rng)
        self.prior_mlp = RelationClassifier(d_ent, hidden, rng)
        self.posterior_mlp = RelationClassifier(d_ent, hidden, rng)

    def prior_dist(self, e_h: Tensor, e_t: Tensor, ctx_vec: Tensor) -> Tensor:
        d = self.fusion.project_context(ctx_vec)
        return self.prior_mlp(self.fusion(e_h, e_t, d))

    def posterior_dist(self, e_h: Tensor, e_t: Tensor, ctx_target_vec: Tensor) -> Tensor:
        d = self.fusion.project_context(ctx_target_vec)
        return self.posterior_mlp(self.fusion(e_h, e_t, d))

    def tie_posterior_to_prior(self) -> None:
        """Copy prior classifier parameters into the posterior classifier."""
        state = self.prior_mlp.state_dict()
        self.posterior_mlp.load_state_dict(state)


def sample_gumbel(dist: Tensor, temperature: float, hard: bool, rng, eps=1e-10):
    """Gumbel-softmax relaxation of the per-pair categorical.

    Relaxed mode returns softmax((log p + g) / tau) rows; hard mode emits the
    argmax one-hot while gradients follow the relaxed sample
    (straight-through). The argmax of the relaxed sample equals the argmax of
    log p + g, so hard-sample frequencies match the categorical exactly at
    any temperature.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    noise = rng.uniform(size=dist.shape)
    gumbel = -np.log(-np.log(noise))
    logits = ad.add(ad.log(ad.clamp_min(dist, eps)), Tensor(gumbel))
    relaxed = ad.softmax(ad.mul(logits, 1.0 / temperature), axis=-1)
    if not hard:
        return relaxed
    hard_bits = np.zeros_like(relaxed.data)
    hard_bits[np.arange(dist.shape[0]), relaxed.data.argmax(axis=-1)] = 1.0
    return ad.add(Tensor(hard_bits), ad.sub(relaxed, relaxed.detach()))


def argmax_sample(dist) -> np.ndarray:
    """Deterministic bits: connected wherever p_connect >= p_not."""
    data = dist.data if isinstance(dist, Tensor) else np.asarray(dist)
    return (data[:, CONNECTED] >= data[:, NOT_CONNECTED]).astype(np.int64)


def kl_term(q: Tensor, p: Tensor, eps: float = 1e-10) -> Tensor:
    """Sum over pairs of KL(q || p) between two-class distributions."""
    lq = ad.log(ad.clamp_min(q, eps))
    lp = ad.log(ad.clamp_min(p, eps))
    return ad.sum_(ad.mul(q, ad.sub(lq, lp)))


def org_bits(kg, pairs) -> np.ndarray:
    """Ground bits of the incomplete graph: 1 where a triple connects the pair."""
    return np.asarray(
        [1 if kg.has_edge(h, t) else 0 for h, t in pairs.pairs], dtype=np.int64
    )


def reg_loss(prior: Tensor, posterior: Tensor, bits: np.ndarray, eps=1e-10) -> Tensor:
    """Cross-entropy of both networks against the original-graph one-hots.

    With one-hot targets, KL(p_org || network) reduces to -log of the
    indicated class probability, clamped to avoid infinities.
    """
    if bits.size == 0:
        return Tensor(0.0)
    onehot = np.zeros((bits.size, 2))
    onehot[np.arange(bits.size), bits] = 1.0
    mask = Tensor(onehot)
    loss_p = ad.sum_(ad.mul(mask, ad.log(ad.clamp_min(prior, eps))))
    loss_q = ad.sum_(ad.mul(mask, ad.log(ad.clamp_min(posterior, eps))))
    return ad.mul(ad.add(loss_p, loss_q), -1.0)


def subgraph_log_prob(dist, bits) -> float:
    """Joint log-probability of a bit assignment: sum of per-pair log-probs."""
    data = dist.data if isinstance(dist, Tensor) else np.asarray(dist)
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size == 0:
        return 0.0
    return float(np.log(data[np.arange(bits.size), bits]).sum())
