from __future__ import annotations

import numpy as np
import pytest
from scipy.stats import multivariate_t

from actowl.model import (
    AnswerLabel,
    AttributeVector,
    Hyperparameters,
    SufficientStats,
    answer_predictive,
    assignment_posterior,
    attribute_predictive_loglik,
    position_predictive_logdensity,
)
from conftest import make_observation, one_hot, random_stats

USERS = ["anna", "ben", "carol"]


def empty_stats(h, attr_dim=21, vocab=4):
    return SufficientStats.empty(h, attr_dim, vocab)


class TestHyperparameters:
    def test_defaults_valid(self):
        h = Hyperparameters()
        assert h.n_concepts == 4 and h.n_components == 4

    @pytest.mark.parametrize("bad", [
        {"alpha": 0.0}, {"beta": -1.0}, {"gamma": 0.0}, {"kappa0": 0.0},
        {"nu0": 3.0}, {"m0": [0, 0, 0, 0]}, {"v0": [[0.1, 0.2], [0.0, 0.1]]},
        {"v0": [[-0.1, 0.0], [0.0, 0.1]]}, {"w_answer": -1.0},
    ])
    def test_invalid_rejected(self, bad):
        with pytest.raises(ValueError):
            Hyperparameters(**bad)


class TestAnswerLabel:
    def test_vocab_indices(self):
        assert AnswerLabel.owner("ben").vocab_index(USERS) == 1
        assert AnswerLabel.shared().vocab_index(USERS) == 3

    def test_unknown_has_no_index(self):
        with pytest.raises(ValueError):
            AnswerLabel.unknown().vocab_index(USERS)

    def test_unknown_user_rejected(self):
        with pytest.raises(ValueError):
            AnswerLabel.owner("dora").vocab_index(USERS)


class TestPositionPredictive:
    def test_prior_matches_direct_student_t(self, default_h):
        # NIW prior predictive: St(m0, V0(k0+1)/(k0(nu0-1)), nu0-1)
        h = default_h
        dof = h.nu0 - 2 + 1
        shape = h.v0 * (h.kappa0 + 1) / (h.kappa0 * dof)
        expected = multivariate_t(loc=h.m0, shape=shape, df=dof).logpdf(np.zeros(2))
        got = position_predictive_logdensity(empty_stats(h), h, 0, np.zeros(2))
        assert got == pytest.approx(expected, abs=1e-12)

    def test_prior_symmetry_about_m0(self, default_h):
        stats = empty_stats(default_h)
        for delta in (np.array([0.3, -0.7]), np.array([2.0, 0.0])):
            up = position_predictive_logdensity(stats, default_h, 1, default_h.m0 + delta)
            down = position_predictive_logdensity(stats, default_h, 1, default_h.m0 - delta)
            assert up == pytest.approx(down, abs=1e-12)

    def test_posterior_location_is_conjugate_mean(self, default_h):
        # one observation at (2,0), kappa0=1 -> location (1,0)
        stats = empty_stats(default_h)
        stats.add(make_observation(position=(2.0, 0.0), dim=21), USERS, 0, 0)
        left = position_predictive_logdensity(stats, default_h, 0, np.array([0.6, 0.0]))
        right = position_predictive_logdensity(stats, default_h, 0, np.array([1.4, 0.0]))
        assert left == pytest.approx(right, abs=1e-12)

    def test_posterior_matches_scipy_construction(self, default_h):
        h = default_h
        rng = np.random.default_rng(3)
        points = rng.normal(size=(5, 2))
        stats = empty_stats(h)
        for i, p in enumerate(points):
            stats.add(make_observation(object_id=i, position=p, dim=21), USERS, 0, 2)
        n = len(points)
        mean = points.mean(axis=0)
        scatter = (points - mean).T @ (points - mean)
        kappa_n = h.kappa0 + n
        nu_n = h.nu0 + n
        m_n = (h.kappa0 * h.m0 + n * mean) / kappa_n
        v_n = h.v0 + scatter + (h.kappa0 * n / kappa_n) * np.outer(mean - h.m0, mean - h.m0)
        dof = nu_n - 2 + 1
        shape = v_n * (kappa_n + 1) / (kappa_n * dof)
        x = np.array([0.4, -1.2])
        expected = multivariate_t(loc=m_n, shape=shape, df=dof).logpdf(x)
        assert position_predictive_logdensity(stats, h, 2, x) == pytest.approx(expected, abs=1e-10)

    def test_rejects_bad_inputs(self, default_h):
        stats = empty_stats(default_h)
        with pytest.raises(ValueError):
            position_predictive_logdensity(stats, default_h, 9, np.zeros(2))
        with pytest.raises(ValueError):
            position_predictive_logdensity(stats, default_h, 0, np.array([np.nan, 0.0]))


class TestAttributePredictive:
    def test_single_one_hot_under_empty_stats(self, default_h):
        stats = empty_stats(default_h)
        got = attribute_predictive_loglik(stats, default_h, 0, one_hot(5, 21))
        assert np.exp(got) == pytest.approx(1 / 21, rel=1e-12)

    def test_counted_dimension(self, default_h):
        # 3 counts on dim j, alpha=1, D=21 -> (3+1)/(3+21) = 1/6
        stats = empty_stats(default_h)
        stats.attribute_counts[2, 7] = 3
        got = attribute_predictive_loglik(stats, default_h, 2, one_hot(7, 21))
        assert np.exp(got) == pytest.approx(1 / 6, rel=1e-12)

    def test_empty_draw_has_probability_one(self, default_h):
        stats = empty_stats(default_h)
        zero = AttributeVector(np.zeros(21, dtype=np.int64))
        assert attribute_predictive_loglik(stats, default_h, 0, zero) == 0.0

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            AttributeVector(np.array([1, -1, 0]))

    def test_multi_count_vector_matches_manual_dirichlet_multinomial(self, default_h):
        # counts (2,1,0,...) with some prior mass, computed by hand
        from scipy.special import gammaln
        h = default_h
        stats = empty_stats(h)
        stats.attribute_counts[1, 0] = 2
        stats.attribute_counts[1, 4] = 1
        o = np.zeros(21, dtype=np.int64)
        o[0], o[1] = 2, 1
        prior = stats.attribute_counts[1] + h.alpha
        A = prior.sum()
        manual = (
            gammaln(A) - gammaln(A + 3)
            + (gammaln(prior[0] + 2) - gammaln(prior[0]))
            + (gammaln(prior[1] + 1) - gammaln(prior[1]))
            + gammaln(4) - gammaln(3) - gammaln(2)  # 3!/2!/1!
        )
        got = attribute_predictive_loglik(stats, h, 1, AttributeVector(o))
        assert got == pytest.approx(manual, abs=1e-12)


class TestAnswerPredictive:
    def test_uniform_prior(self, default_h):
        stats = empty_stats(default_h)
        assert answer_predictive(stats, default_h, 0) == pytest.approx([0.25] * 4)

    def test_counted(self, default_h):
        stats = empty_stats(default_h)
        stats.answer_counts[1] = [3, 0, 0, 0]
        p = answer_predictive(stats, default_h, 1)
        assert p[0] == pytest.approx(3.01 / 3.04, rel=1e-12)

    def test_normalization_fuzz(self, default_h):
        rng = np.random.default_rng(11)
        for _ in range(50):
            stats = random_stats(rng, default_h, attr_dim=21, vocab=4)
            for l in range(default_h.n_concepts):
                p = answer_predictive(stats, default_h, l)
                assert np.all(p >= 0)
                assert p.sum() == pytest.approx(1.0, abs=1e-12)

    def test_monotone_in_counts(self, default_h):
        stats = empty_stats(default_h)
        previous = answer_predictive(stats, default_h, 0)[2]
        for _ in range(5):
            stats.answer_counts[0, 2] += 1
            current = answer_predictive(stats, default_h, 0)[2]
            assert current > previous
            previous = current


class TestSufficientStats:
    def test_add_remove_roundtrip_exact(self, default_h):
        rng = np.random.default_rng(7)
        stats = random_stats(rng, default_h, attr_dim=21, vocab=4)
        snapshot = stats.copy()
        obs = make_observation(object_id=99, position=(1.3, -0.2), hot=4, dim=21,
                               answer=AnswerLabel.owner("ben"))
        stats.add(obs, USERS, 1, 3)
        stats.remove(obs, USERS, 1, 3)
        assert np.array_equal(stats.concept_counts, snapshot.concept_counts)
        assert np.array_equal(stats.concept_component_counts, snapshot.concept_component_counts)
        assert np.array_equal(stats.attribute_counts, snapshot.attribute_counts)
        assert np.array_equal(stats.answer_counts, snapshot.answer_counts)
        assert np.array_equal(stats.position_counts, snapshot.position_counts)
        assert np.allclose(stats.position_sum, snapshot.position_sum, atol=1e-10)
        assert np.allclose(stats.position_scatter, snapshot.position_scatter, atol=1e-10)

    def test_remove_never_added_raises(self, default_h):
        stats = empty_stats(default_h)
        with pytest.raises(ValueError):
            stats.remove(make_observation(dim=21), USERS, 0, 0)


class TestAssignmentPosterior:
    def test_empty_model_is_uniform(self, default_h):
        stats = empty_stats(default_h)
        table = assignment_posterior(stats, default_h, make_observation(dim=21), USERS)
        assert table.shape == (4, 4)
        assert np.allclose(table, 1 / 16, atol=1e-12)

    def test_clamped_component_zeroes_others(self, default_h):
        stats = empty_stats(default_h)
        obs = make_observation(dim=21, component=2)
        table = assignment_posterior(stats, default_h, obs, USERS)
        assert table[:, [0, 1, 3]].sum() == 0.0
        assert table[:, 2].sum() == pytest.approx(1.0, abs=1e-12)

    def test_answer_factor_dominates_argmax(self):
        # prior observation in concept 0 answered by anna; a strongly
        # answer-weighted query with the same answer lands on concept 0
        h = Hyperparameters(n_concepts=2, n_components=2, w_answer=5.0)
        stats = SufficientStats.empty(h, 4, 4)
        prior_obs = make_observation(object_id=0, position=(0.1, 0.0), hot=0,
                                     answer=AnswerLabel.owner("anna"))
        stats.add(prior_obs, USERS, 0, 0)
        query = make_observation(object_id=1, position=(0.0, 0.1), hot=1,
                                 answer=AnswerLabel.owner("anna"))
        table = assignment_posterior(stats, h, query, USERS)
        l, k = np.unravel_index(np.argmax(table), table.shape)
        assert l == 0
        # manual factor check: the answer ratio alone exceeds the CRP pull
        same = (1 + h.beta) / (1 + 4 * h.beta)
        fresh = h.beta / (4 * h.beta)
        assert (same / fresh) ** 5 == pytest.approx(884.59, rel=1e-3)
        assert table[0].sum() > 0.99

    def test_zero_weights_reduce_to_crp_prior(self, default_h):
        rng = np.random.default_rng(13)
        h = Hyperparameters(w_answer=0.0, w_attribute=0.0, w_position=0.0)
        stats = random_stats(rng, h, attr_dim=21, vocab=4)
        obs = make_observation(object_id=50, position=(0.4, 0.4), hot=2, dim=21,
                               answer=AnswerLabel.shared())
        table = assignment_posterior(stats, h, obs, USERS)
        cc = stats.concept_counts.astype(float)
        expected = ((cc + h.gamma)[:, None]
                    * (stats.concept_component_counts + h.lambda_ / h.n_components)
                    / (cc + h.lambda_)[:, None])
        expected /= expected.sum()
        assert np.allclose(table, expected, atol=1e-12)

    def test_extreme_answer_weight_concentrates(self):
        # two concepts with disjoint deterministic answer histories
        h = Hyperparameters(n_concepts=2, n_components=2, w_answer=200.0)
        stats = SufficientStats.empty(h, 4, 4)
        for i in range(3):
            stats.add(make_observation(object_id=i, position=(0.0, 0.0), hot=0,
                                       answer=AnswerLabel.owner("anna")), USERS, 0, 0)
            stats.add(make_observation(object_id=10 + i, position=(1.0, 1.0), hot=1,
                                       answer=AnswerLabel.owner("ben")), USERS, 1, 1)
        query = make_observation(object_id=99, position=(0.5, 0.5), hot=2,
                                 answer=AnswerLabel.owner("ben"))
        table = assignment_posterior(stats, h, query, USERS)
        assert table[1].sum() >= 1 - 1e-6

    def test_proper_distribution_fuzz(self, default_h):
        rng = np.random.default_rng(29)
        for trial in range(40):
            stats = random_stats(rng, default_h, attr_dim=21, vocab=4)
            answer = [AnswerLabel.unknown(), AnswerLabel.shared(),
                      AnswerLabel.owner("carol")][trial % 3]
            obs = make_observation(object_id=1000, position=tuple(rng.normal(size=2)),
                                   hot=int(rng.integers(21)), dim=21, answer=answer)
            table = assignment_posterior(stats, default_h, obs, USERS)
            assert np.all(table >= 0)
            assert table.sum() == pytest.approx(1.0, abs=1e-9)
