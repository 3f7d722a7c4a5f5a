"""Item scoring, ranking, objective arithmetic, and bound diagnostics."""

import numpy as np
import pytest

from kgchat.nn import Tensor, autodiff as ad
from kgchat.recommender import (
    assignment_prob,
    enumerate_assignments,
    exact_elbo,
    kl_divergence,
    log_marginal,
    mc_elbo,
    rank_items,
    rec_loss,
    recommend_scores,
    user_representation,
)


def random_two_class(rng, n):
    p = rng.uniform(0.05, 0.95, size=(n, 1))
    return np.concatenate([1 - p, p], axis=1)


class TestUserRepresentation:
    def test_weighted_sum_closed_form(self):
        rng = np.random.default_rng(0)
        w = rng.uniform(size=5)
        tails = rng.normal(size=(5, 3))
        got = user_representation(Tensor(w), Tensor(tails))
        np.testing.assert_allclose(got.data, w @ tails, atol=1e-12)

    def test_tail_used_by_two_pairs_counts_twice(self):
        tails = np.array([[1.0, 0.0], [1.0, 0.0]])  # same embedding twice
        w = np.array([0.5, 0.25])
        got = user_representation(Tensor(w), Tensor(tails))
        np.testing.assert_allclose(got.data, [0.75, 0.0])

    def test_empty_pairs_give_zero_vector(self):
        got = user_representation(Tensor(np.zeros(0)), Tensor(np.zeros((0, 4))))
        assert np.array_equal(got.data, np.zeros(4))

    def test_all_off_weights_give_zero_vector(self):
        rng = np.random.default_rng(1)
        got = user_representation(Tensor(np.zeros(3)), Tensor(rng.normal(size=(3, 4))))
        np.testing.assert_allclose(got.data, np.zeros(4), atol=1e-15)


class TestRecommendScores:
    def test_alpha_mixing_hand_check(self):
        e_u = np.array([1.0, 0.0])
        item_emb = np.array([[2.0, 0.0], [0.0, 2.0]])  # logits [2, 0]
        weights = np.array([0.2, 0.6])  # tails: item1, item0
        tail_ids = np.array([8, 5])
        item_ids = np.array([5, 8])
        alpha = 0.4
        got = recommend_scores(
            Tensor(e_u), Tensor(item_emb), Tensor(weights), tail_ids, item_ids, alpha
        )
        soft = np.exp([2.0, 0.0])
        soft = soft / soft.sum()
        mass = np.array([0.6, 0.2]) / 0.8
        want = alpha * soft + (1 - alpha) * mass
        np.testing.assert_allclose(got.data, want, atol=1e-12)

    def test_scores_sum_to_one(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n_items, n_pairs = 6, 9
            e_u = Tensor(rng.normal(size=3))
            item_emb = Tensor(rng.normal(size=(n_items, 3)))
            weights = Tensor(rng.uniform(size=n_pairs))
            item_ids = np.arange(10, 10 + n_items)
            tail_ids = rng.choice(np.arange(8, 18), size=n_pairs)
            got = recommend_scores(
                e_u, item_emb, weights, tail_ids, item_ids, alpha=float(rng.uniform())
            )
            np.testing.assert_allclose(got.data.sum(), 1.0, atol=1e-10)
            assert np.all(got.data >= 0)

    def test_zero_relation_mass_falls_back_to_softmax(self):
        # Tails miss every item, so Z = 0 and only the embedding route scores.
        e_u = Tensor(np.array([1.0, -1.0]))
        item_emb = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
        weights = Tensor(np.array([0.9]))
        got = recommend_scores(
            e_u, item_emb, weights, np.array([99]), np.array([0, 1]), alpha=0.3
        )
        logits = item_emb.data @ e_u.data
        soft = np.exp(logits - logits.max())
        soft /= soft.sum()
        np.testing.assert_allclose(got.data, soft, atol=1e-12)

    def test_all_weights_zero_also_falls_back(self):
        e_u = Tensor(np.zeros(2))
        item_emb = Tensor(np.eye(2))
        got = recommend_scores(
            e_u, item_emb, Tensor(np.zeros(2)), np.array([0, 1]), np.array([0, 1]), 0.5
        )
        np.testing.assert_allclose(got.data, [0.5, 0.5], atol=1e-12)

    def test_empty_pair_set_uses_softmax_route(self):
        e_u = Tensor(np.array([2.0]))
        item_emb = Tensor(np.array([[1.0], [0.0]]))
        got = recommend_scores(
            e_u, item_emb, Tensor(np.zeros(0)), np.zeros(0, np.int64), np.array([0, 1]), 0.1
        )
        np.testing.assert_allclose(got.data.sum(), 1.0, atol=1e-12)

    def test_alpha_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            recommend_scores(
                Tensor(np.zeros(2)),
                Tensor(np.zeros((2, 2))),
                Tensor(np.zeros(1)),
                np.array([0]),
                np.array([0, 1]),
                alpha=1.5,
            )

    def test_gradient_reaches_weights_through_both_routes(self):
        rng = np.random.default_rng(3)
        weights = Tensor(rng.uniform(size=4), requires_grad=True)
        tail_emb = Tensor(rng.normal(size=(4, 3)))
        e_u = user_representation(weights, tail_emb)
        item_emb = Tensor(rng.normal(size=(3, 3)))
        scores = recommend_scores(
            e_u, item_emb, weights, np.array([0, 1, 2, 5]), np.array([0, 1, 2]), 0.5
        )
        ad.log(ad.clamp_min(ad.gather_rows(ad.reshape(scores, (-1, 1)), [1]), 1e-10)).backward()
        assert weights.grad is not None and np.all(np.isfinite(weights.grad))
        assert np.any(weights.grad != 0)


class TestRecLoss:
    def test_arithmetic_composition(self):
        scores = Tensor(np.array([0.2, 0.5, 0.3]))
        kl = Tensor(0.7)
        reg = Tensor(1.1)
        got = rec_loss(scores, [1], kl, reg, beta=2.0, gamma=0.05, lam=0.01).item()
        want = 2.0 * -np.log(0.5) + 0.05 * 0.7 + 0.01 * 1.1
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_multiple_targets_average(self):
        scores = Tensor(np.array([0.25, 0.5, 0.25]))
        got = rec_loss(scores, [0, 1], Tensor(0.0), Tensor(0.0), 1.0, 1.0, 1.0).item()
        want = -(np.log(0.25) + np.log(0.5)) / 2
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_no_targets_rejected(self):
        with pytest.raises(ValueError):
            rec_loss(Tensor(np.array([1.0])), [], Tensor(0.0), Tensor(0.0), 1, 1, 1)

    def test_zero_score_clamped_finite(self):
        scores = Tensor(np.array([0.0, 1.0]))
        got = rec_loss(scores, [0], Tensor(0.0), Tensor(0.0), 1.0, 0.0, 0.0).item()
        assert np.isfinite(got)


class TestRankItems:
    def test_descending_scores(self):
        out = rank_items(np.array([0.1, 0.7, 0.2]), np.array([10, 20, 30]), m=2)
        assert out == [20, 30]

    def test_ties_broken_by_ascending_entity_id(self):
        out = rank_items(np.array([0.4, 0.4, 0.2]), np.array([31, 7, 5]), m=3)
        assert out == [7, 31, 5]

    def test_m_larger_than_items(self):
        out = rank_items(np.array([0.9, 0.1]), np.array([3, 4]), m=10)
        assert out == [3, 4]

    def test_tensor_input_and_bad_m(self):
        assert rank_items(Tensor(np.array([0.2, 0.8])), np.array([1, 2]), 1) == [2]
        with pytest.raises(ValueError):
            rank_items(np.array([1.0]), np.array([1]), 0)


class TestEnumerationHelpers:
    def test_assignments_cover_hypercube_in_binary_order(self):
        got = [a.tolist() for a in enumerate_assignments(2)]
        assert got == [[0, 0], [0, 1], [1, 0], [1, 1]]

    def test_assignment_probs_sum_to_one(self):
        rng = np.random.default_rng(4)
        dist = random_two_class(rng, 3)
        total = sum(assignment_prob(dist, b) for b in enumerate_assignments(3))
        np.testing.assert_allclose(total, 1.0, atol=1e-12)

    def test_empty_assignment_has_probability_one(self):
        assert assignment_prob(np.zeros((0, 2)), []) == 1.0

    def test_kl_divergence_reference_value(self):
        q = np.array([[0.75, 0.25]])
        p = np.array([[0.5, 0.5]])
        want = 0.75 * np.log(1.5) + 0.25 * np.log(0.5)
        np.testing.assert_allclose(kl_divergence(q, p), want, atol=1e-12)


class TestBoundDiagnostics:
    def loglik(self, table):
        return lambda bits: float(table[tuple(bits)])

    def random_setup(self, rng, n_pairs):
        q = random_two_class(rng, n_pairs)
        p = random_two_class(rng, n_pairs)
        table = np.log(rng.uniform(0.05, 1.0, size=(2,) * n_pairs))
        return q, p, self.loglik(table)

    def test_bound_never_exceeds_log_marginal(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            n = int(rng.integers(1, 4))
            q, p, fn = self.random_setup(rng, n)
            elbo = exact_elbo(q, p, fn)
            lm = log_marginal(p, fn)
            assert elbo <= lm + 1e-9

    def test_gap_equals_kl_to_true_posterior(self):
        rng = np.random.default_rng(6)
        n = 3
        q, p, fn = self.random_setup(rng, n)
        lm = log_marginal(p, fn)
        # Enumerate the exact posterior over assignments, then compute the
        # assignment-level KL(q || posterior); the bound gap must equal it.
        gap = lm - exact_elbo(q, p, fn)
        kl = 0.0
        for bits in enumerate_assignments(n):
            qw = assignment_prob(q, bits)
            post = np.exp(np.log(assignment_prob(p, bits)) + fn(bits) - lm)
            if qw > 0:
                kl += qw * (np.log(qw) - np.log(post))
        np.testing.assert_allclose(gap, kl, atol=1e-9)

    def test_bound_tight_when_q_equals_posterior(self):
        rng = np.random.default_rng(7)
        # One pair: the posterior stays factorized, so q can match it exactly.
        p = random_two_class(rng, 1)
        table = np.log(rng.uniform(0.1, 1.0, size=(2,)))
        fn = self.loglik(table)
        lm = log_marginal(p, fn)
        post1 = np.exp(np.log(p[0, 1]) + fn(np.array([1])) - lm)
        q = np.array([[1 - post1, post1]])
        np.testing.assert_allclose(exact_elbo(q, p, fn), lm, atol=1e-9)

    def test_mc_estimate_approaches_exact_value(self):
        rng = np.random.default_rng(8)
        q, p, fn = self.random_setup(rng, 2)
        exact = exact_elbo(q, p, fn)
        mc = mc_elbo(q, p, fn, np.random.default_rng(9), n_samples=4000)
        assert abs(mc - exact) < 0.05

    def test_mc_requires_samples(self):
        with pytest.raises(ValueError):
            mc_elbo(np.zeros((1, 2)), np.zeros((1, 2)), lambda b: 0.0, np.random.default_rng(0), 0)
