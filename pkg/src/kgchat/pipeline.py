"""End-to-end assembly: corpus statistics, encoders, latent-relation
networks, recommendation scoring, and response generation behind one object.

The pipeline owns every trainable component and exposes per-example forward
passes for the three training stages plus deterministic inference for
evaluation and the chat service.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import recommender as rec
from .config import Config
from .context_encoder import make_context_encoder
from .corpus import (
    KnowledgeGraph,
    Utterance,
    Vocabulary,
    count_cooccurrence,
    mentioned_entities,
    build_examples,
)
from .generator import Generator, KnowledgeMatrices, gen_loss
from .graph_encoder import GraphEncoder, SelfAttentivePooling, pre_rec_distribution, pre_rec_loss
from .nn import Module, Tensor, autodiff as ad
from .refactor import (
    CONNECTED,
    RefactorNetworks,
    argmax_sample,
    kl_term,
    org_bits,
    reg_loss,
    sample_gumbel,
)
from .subgraph_select import CandidatePairs, build_pairs, mi_scores


@dataclass
class TurnInference:
    """Everything the service and evaluator need from one dialogue turn."""

    pairs: CandidatePairs
    prior: np.ndarray  # (P, 2) connection distributions
    bits: np.ndarray  # (P,) argmax realization
    scores: np.ndarray  # (I,) item distribution
    ranking: list[int]  # item entity indices, best first
    response_ids: list[int]

    def subgraph_payload(self, kg: KnowledgeGraph) -> list[dict]:
        edges = []
        for k, (h, t) in enumerate(self.pairs.pairs):
            edges.append(
                {
                    "head": kg.entity_ids[h],
                    "tail": kg.entity_ids[t],
                    "p_connect": float(self.prior[k, CONNECTED]),
                    "connected": bool(self.bits[k]),
                }
            )
        return edges


class Pipeline(Module):
    def __init__(self, cfg: Config, kg: KnowledgeGraph, dialogues, vocab=None):
        cfg.validate()
        self.cfg = cfg
        self.kg = kg
        self.examples = build_examples(dialogues, kg)
        self.vocab = vocab or Vocabulary.build(dialogues, kg, cfg.vocab_size)

        self.stats = count_cooccurrence(self.examples, kg.n_entities)
        if self.stats.unit_count > 0:
            self.mi = mi_scores(self.stats)
        else:
            self.mi = np.zeros(kg.n_entities)
        self.occurred = self.stats.entity_count > 0

        self.item_ids = kg.item_indices
        self._item_slot = {int(e): i for i, e in enumerate(self.item_ids)}

        rng = np.random.default_rng(cfg.seed)
        self.graph_encoder = GraphEncoder(kg, cfg.ent_dim, cfg.rgcn_layers, rng)
        self.pooling = SelfAttentivePooling(cfg.ent_dim, cfg.att_dim, rng)
        self.ctx_encoder = make_context_encoder(cfg, self.vocab, rng)
        self.refactor = RefactorNetworks(cfg.ent_dim, cfg.ctx_dim, cfg.mlp_hidden, rng)
        self.generator = Generator(
            self.vocab,
            d_model=cfg.ctx_dim,
            d_ent=cfg.ent_dim,
            n_layers=cfg.dec_layers,
            n_heads=cfg.n_heads,
            d_ff=cfg.ffn_dim,
            max_len=cfg.max_ctx_len,
            rng=rng,
        )
        self._ctx_cache: dict = {}

    # -- shared plumbing -------------------------------------------------------

    def pairs_for_context(self, context) -> CandidatePairs:
        mentions = mentioned_entities(context)
        return build_pairs(mentions, self.mi, self.occurred, self.kg, self.cfg.k_tail)

    def target_slots(self, example) -> list[int]:
        return [self._item_slot[int(i)] for i in example.target_items]

    def item_slot(self, entity: int) -> int:
        """Position of an item entity within the item-score axis."""
        return self._item_slot[int(entity)]

    def entity_rows(self, emb: Tensor, ids) -> Tensor:
        return ad.gather_rows(emb, np.asarray(ids, dtype=np.int64))

    def _ctx_vec(self, example, cache: bool):
        key = ("ctx", example.example_id)
        if cache and key in self._ctx_cache:
            return Tensor(self._ctx_cache[key])
        vec = self.ctx_encoder.encode_context(example.context)
        if cache:
            self._ctx_cache[key] = vec.data
            return Tensor(vec.data)
        return vec

    def _ctx_target_vec(self, example, target: int, cache: bool):
        key = ("ctx*", example.example_id, int(target))
        if cache and key in self._ctx_cache:
            return Tensor(self._ctx_cache[key])
        vec = self.ctx_encoder.encode_context_with_target(
            example.context, int(target), self.kg
        )
        if cache:
            self._ctx_cache[key] = vec.data
            return Tensor(vec.data)
        return vec

    def clear_context_cache(self) -> None:
        self._ctx_cache.clear()

    # -- stage A: pre-recommendation + graph regularization ---------------------

    def pretrain_loss(self, example, emb: Tensor, cache_ctx=True):
        """L_pre (self-attentive item cross-entropy) + L_reg on the candidate
        pairs; None when the example has no target items."""
        slots = self.target_slots(example)
        if not slots:
            return None
        mentioned = mentioned_entities(example.context)
        u, _ = self.pooling(mentioned, emb)
        dist = pre_rec_distribution(u, emb, self.item_ids)
        loss = pre_rec_loss(dist, slots)

        pairs = self.pairs_for_context(example.context)
        if len(pairs):
            e_h = self.entity_rows(emb, pairs.head_ids)
            e_t = self.entity_rows(emb, pairs.tail_ids)
            prior = self.refactor.prior_dist(e_h, e_t, self._ctx_vec(example, cache_ctx))
            post_terms = []
            for target in example.target_items:
                d_star = self._ctx_target_vec(example, target, cache_ctx)
                post_terms.append(self.refactor.posterior_dist(e_h, e_t, d_star))
            bits = org_bits(self.kg, pairs)
            regs = [reg_loss(prior, q, bits, self.cfg.clamp_eps) for q in post_terms]
            loss = ad.add(loss, ad.mul(_sum_tensors(regs), 1.0 / len(regs)))
        return loss

    # -- stage B: recommendation objective --------------------------------------

    def rec_forward(self, example, emb: Tensor, rng, train: bool, cache_ctx=False):
        """Full recommendation loss for one example (averaged over targets)."""
        slots = self.target_slots(example)
        if not slots:
            return None
        pairs = self.pairs_for_context(example.context)
        item_rows = self.entity_rows(emb, self.item_ids)
        ctx_vec = self._ctx_vec(example, cache_ctx)

        if not len(pairs):
            # no latent support: pure softmax scoring, no KL / regularizer
            e_u = Tensor(np.zeros(self.cfg.ent_dim))
            scores = rec.recommend_scores(
                e_u, item_rows, Tensor(np.zeros(0)), np.zeros(0, np.int64),
                self.item_ids, self.cfg.alpha,
            )
            return rec.rec_loss(
                scores, slots, Tensor(0.0), Tensor(0.0),
                self.cfg.beta, self.cfg.gamma, self.cfg.lambda_,
            )

        e_h = self.entity_rows(emb, pairs.head_ids)
        e_t = self.entity_rows(emb, pairs.tail_ids)
        prior = self.refactor.prior_dist(e_h, e_t, ctx_vec)
        bits = org_bits(self.kg, pairs)

        per_target = []
        for slot, target in zip(slots, example.target_items):
            d_star = self._ctx_target_vec(example, target, cache_ctx)
            posterior = self.refactor.posterior_dist(e_h, e_t, d_star)
            kl = kl_term(posterior, prior, self.cfg.clamp_eps)
            reg = reg_loss(prior, posterior, bits, self.cfg.clamp_eps)
            if train:
                sample = sample_gumbel(posterior, self.cfg.tau, hard=True, rng=rng)
                weights = sample[:, CONNECTED]
            else:
                weights = posterior[:, CONNECTED]
            e_u = rec.user_representation(weights, e_t)
            scores = rec.recommend_scores(
                e_u, item_rows, weights, pairs.tail_ids, self.item_ids, self.cfg.alpha
            )
            per_target.append(
                rec.rec_loss(
                    scores, [slot], kl, reg,
                    self.cfg.beta, self.cfg.gamma, self.cfg.lambda_,
                )
            )
        return ad.mul(_sum_tensors(per_target), 1.0 / len(per_target))

    def eval_scores(self, context, emb: Tensor):
        """Deterministic test-time scoring: prior connection probabilities."""
        pairs = self.pairs_for_context(context)
        item_rows = self.entity_rows(emb, self.item_ids)
        if not len(pairs):
            e_u = Tensor(np.zeros(self.cfg.ent_dim))
            scores = rec.recommend_scores(
                e_u, item_rows, Tensor(np.zeros(0)), np.zeros(0, np.int64),
                self.item_ids, self.cfg.alpha,
            )
            return pairs, np.zeros((0, 2)), scores.data
        e_h = self.entity_rows(emb, pairs.head_ids)
        e_t = self.entity_rows(emb, pairs.tail_ids)
        ctx_vec = self.ctx_encoder.encode_context(context)
        prior = self.refactor.prior_dist(e_h, e_t, ctx_vec)
        weights = prior[:, CONNECTED]
        e_u = rec.user_representation(weights, e_t)
        scores = rec.recommend_scores(
            e_u, item_rows, weights, pairs.tail_ids, self.item_ids, self.cfg.alpha
        )
        return pairs, prior.data, scores.data

    def example_loglik(self, example, target: int):
        """Closure mapping a pair-bit assignment to log P(target | bits);
        used by the evidence-bound diagnostics."""
        pairs = self.pairs_for_context(example.context)
        emb = self.graph_encoder()
        item_rows = self.entity_rows(emb, self.item_ids)
        e_t = self.entity_rows(emb, pairs.tail_ids)
        slot = self._item_slot[int(target)]

        def loglik(bits) -> float:
            weights = Tensor(np.asarray(bits, dtype=np.float64))
            e_u = rec.user_representation(weights, e_t)
            scores = rec.recommend_scores(
                e_u, item_rows, weights, pairs.tail_ids, self.item_ids, self.cfg.alpha
            )
            return float(np.log(max(scores.data[slot], 1e-300)))

        return pairs, loglik

    def elbo_estimate(self, example, target: int, rng=None, n_samples=None):
        """Monte-Carlo (or exact, when n_samples is None) bound estimate."""
        pairs, loglik = self.example_loglik(example, target)
        emb = self.graph_encoder()
        e_h = self.entity_rows(emb, pairs.head_ids)
        e_t = self.entity_rows(emb, pairs.tail_ids)
        prior = self.refactor.prior_dist(e_h, e_t, self._ctx_vec(example, False))
        d_star = self._ctx_target_vec(example, target, False)
        posterior = self.refactor.posterior_dist(e_h, e_t, d_star)
        if n_samples is None:
            return rec.exact_elbo(posterior, prior, loglik)
        return rec.mc_elbo(posterior, prior, loglik, rng, n_samples)

    # -- stage C: generation -----------------------------------------------------

    def knowledge_for_context(self, context, emb: Tensor):
        """Head rows plus rows of tails the prior connects (argmax bits)."""
        pairs = self.pairs_for_context(context)
        if not len(pairs):
            return KnowledgeMatrices.empty(self.cfg.ent_dim), pairs, np.zeros(0, np.int64)
        e_h_rows = self.entity_rows(emb, np.asarray(pairs.heads, dtype=np.int64))
        e_h = self.entity_rows(emb, pairs.head_ids)
        e_t = self.entity_rows(emb, pairs.tail_ids)
        ctx_vec = self.ctx_encoder.encode_context(context)
        prior = self.refactor.prior_dist(e_h, e_t, ctx_vec)
        bits = argmax_sample(prior)
        connected_tails = []
        for (h, t), bit in zip(pairs.pairs, bits.tolist()):
            if bit and t not in connected_tails:
                connected_tails.append(t)
        if connected_tails:
            tail_rows = self.entity_rows(emb, np.asarray(connected_tails, np.int64))
        else:
            tail_rows = Tensor(np.zeros((0, self.cfg.ent_dim)))
        knowledge = KnowledgeMatrices(e_h_rows, tail_rows, tuple(connected_tails))
        return knowledge, pairs, bits

    def copy_source_ids(self, context, knowledge: KnowledgeMatrices) -> np.ndarray:
        """Context tokens plus the surface-name tokens of connected tails."""
        from .corpus import normalize_name, tokenize

        ids = self.ctx_encoder.context_token_ids(context)[1:]  # drop start marker
        for ent in knowledge.tail_entities:
            name_tokens = tokenize(normalize_name(self.kg.entity_names[ent]))
            ids.extend(self.vocab.encode(name_tokens))
        return np.asarray(ids, dtype=np.int64)

    def gen_teacher_forcing(self, example, emb: Tensor, gate_override=None):
        """Per-step output distributions and gold ids under teacher forcing."""
        knowledge, _, _ = self.knowledge_for_context(example.context, emb)
        x_ctx = self.ctx_encoder.encode_tokens(example.context).values
        source_ids = self.copy_source_ids(example.context, knowledge)
        gold = self.vocab.encode(example.gold_response.tokens) + [Vocabulary.EOS]
        gold = gold[: self.generator.max_len - 1]
        input_ids = [Vocabulary.BOS] + gold[:-1]
        dists = self.generator.step_distributions(
            input_ids, knowledge, x_ctx, source_ids, gate_override=gate_override
        )
        return dists, np.asarray(gold, dtype=np.int64)

    def gen_loss_for_example(self, example, emb: Tensor):
        dists, gold = self.gen_teacher_forcing(example, emb)
        return gen_loss(dists, gold, self.cfg.clamp_eps)

    def respond(self, context, emb=None, mode="greedy", beam_width=None, max_len=None):
        emb = emb if emb is not None else self.graph_encoder()
        knowledge, _, _ = self.knowledge_for_context(context, emb)
        x_ctx = self.ctx_encoder.encode_tokens(context).values
        source_ids = self.copy_source_ids(context, knowledge)
        return self.generator.generate(
            knowledge,
            x_ctx,
            source_ids,
            max_len=max_len or self.cfg.max_gen_len,
            mode=mode,
            beam_width=beam_width or self.cfg.beam_width,
        )

    # -- full-turn inference -------------------------------------------------------

    def infer_turn(self, context, top_m=10, mode="greedy") -> TurnInference:
        emb = self.graph_encoder()
        pairs, prior, scores = self.eval_scores(context, emb)
        bits = argmax_sample(prior) if len(pairs) else np.zeros(0, np.int64)
        ranking = rec.rank_items(scores, self.item_ids, max(top_m, 1))
        response = self.respond(context, emb=emb, mode=mode)
        return TurnInference(pairs, np.asarray(prior), bits, scores, ranking, response)

    def make_utterance(self, speaker: str, text: str) -> Utterance:
        from .corpus import EntityLinker, tokenize

        tokens = tuple(tokenize(text)) or ("...",)
        if not hasattr(self, "_linker"):
            self._linker = EntityLinker(self.kg)
        return Utterance(speaker, tokens, self._linker.link(tokens))


def _sum_tensors(tensors):
    total = tensors[0]
    for t in tensors[1:]:
        total = ad.add(total, t)
    return total
