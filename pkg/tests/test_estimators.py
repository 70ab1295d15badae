"""Estimator correctness on exhaustively enumerable instances.

The expected gradient of the stochastic search loss can be computed exactly
when the set of sampleable action sequences is tiny.  Both score-function
estimators must match it: exactly in expectation (weighted sum over
sequences) and statistically under Monte-Carlo sampling.
"""

import numpy as np
import pytest

from estimator_tools import (
    enumerate_sequences,
    estimator_gradient,
    exact_expected_loss_gradient,
    mc_mean_and_se,
    score_gradient,
    sequence_prob,
    tiny_instance,
)
from mctsnet.training import CreditConfig, loss_and_traces


@pytest.fixture(scope="module")
def instance():
    net, example = tiny_instance(seed=0)
    zs = enumerate_sequences(net.model, example.state, M=2)
    return net, example, zs


def no_entropy(estimator, gamma=0.5):
    return CreditConfig(estimator=estimator, gamma=gamma, entropy_coeff=0.0)


class TestEnumeration:
    def test_m2_has_four_sequences(self, instance):
        net, example, zs = instance
        assert len(zs) == 4
        assert all(z[0] == [] and len(z[1]) == 1 for z in zs)

    def test_probabilities_sum_to_one(self, instance):
        net, example, zs = instance
        total = sum(sequence_prob(loss_and_traces(net, example, 2, forced_z=z)) for z in zs)
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_m3_enumeration_structure(self, instance):
        net, example, _ = instance
        zs = enumerate_sequences(net.model, example.state, M=3)
        # sim 3 either stops at a fresh sibling (4*3) or descends through the
        # visited child and samples again (4*4), unless that child is terminal
        assert 16 <= len(zs) <= 28
        total = sum(sequence_prob(loss_and_traces(net, example, 3, forced_z=z)) for z in zs)
        assert total == pytest.approx(1.0, abs=1e-12)


class TestExactUnbiasedness:
    def test_basic_estimator_expectation_equals_exact_gradient(self, instance):
        net, example, zs = instance
        exact, ptotal = exact_expected_loss_gradient(net, example, 2, zs)
        assert ptotal == pytest.approx(1.0, abs=1e-12)

        grads, probs = zip(*(estimator_gradient(net, example, 2, z, no_entropy("basic")) for z in zs))
        expectation = np.asarray(probs) @ np.stack(grads)
        np.testing.assert_allclose(expectation, exact, rtol=0, atol=1e-10)

    @pytest.mark.parametrize("gamma", [0.0, 0.5, 1.0])
    def test_anytime_estimator_expectation(self, instance, gamma):
        # with a single stochastic decision at the final simulation, the
        # anytime estimator is unbiased for every discount
        net, example, zs = instance
        exact, _ = exact_expected_loss_gradient(net, example, 2, zs)
        grads, probs = zip(
            *(estimator_gradient(net, example, 2, z, no_entropy("anytime", gamma)) for z in zs)
        )
        expectation = np.asarray(probs) @ np.stack(grads)
        np.testing.assert_allclose(expectation, exact, rtol=0, atol=1e-10)

    def test_anytime_gamma1_matches_exact_at_m3(self, instance):
        net, example, _ = instance
        zs = enumerate_sequences(net.model, example.state, M=3)
        exact, ptotal = exact_expected_loss_gradient(net, example, 3, zs)
        assert ptotal == pytest.approx(1.0, abs=1e-12)
        for estimator, gamma in (("basic", 1.0), ("anytime", 1.0)):
            grads, probs = zip(
                *(estimator_gradient(net, example, 3, z, no_entropy(estimator, gamma)) for z in zs)
            )
            expectation = np.asarray(probs) @ np.stack(grads)
            np.testing.assert_allclose(expectation, exact, rtol=0, atol=1e-10)


class TestMonteCarlo:
    N = 100_000

    def test_basic_mc_mean_within_three_se(self, instance):
        net, example, zs = instance
        exact, _ = exact_expected_loss_gradient(net, example, 2, zs)
        grads, probs = zip(*(estimator_gradient(net, example, 2, z, no_entropy("basic")) for z in zs))
        mean, se = mc_mean_and_se(list(grads), list(probs), self.N, np.random.default_rng(7))
        assert np.all(np.abs(mean - exact) <= 3 * se + 1e-12)

    def test_anytime_gamma1_mc_mean_within_three_se(self, instance):
        net, example, zs = instance
        exact, _ = exact_expected_loss_gradient(net, example, 2, zs)
        grads, probs = zip(
            *(estimator_gradient(net, example, 2, z, no_entropy("anytime", 1.0)) for z in zs)
        )
        mean, se = mc_mean_and_se(list(grads), list(probs), self.N, np.random.default_rng(8))
        assert np.all(np.abs(mean - exact) <= 3 * se + 1e-12)


class TestScoreFunctionZeroMean:
    def test_exact_zero_mean(self, instance):
        net, example, zs = instance
        grads, probs = zip(*(score_gradient(net, example, 2, z) for z in zs))
        expectation = np.asarray(probs) @ np.stack(grads)
        np.testing.assert_allclose(expectation, 0.0, rtol=0, atol=1e-12)

    def test_mc_zero_mean_within_three_se(self, instance):
        net, example, zs = instance
        grads, probs = zip(*(score_gradient(net, example, 2, z) for z in zs))
        mean, se = mc_mean_and_se(list(grads), list(probs), 100_000, np.random.default_rng(9))
        assert np.all(np.abs(mean) <= 3 * se + 1e-12)

    def test_constant_loss_score_term_zero_mean(self):
        # un-randomized heads: uniform readout, so the loss ignores z and the
        # basic estimator's score term is a pure zero-mean noise term
        net, example = tiny_instance(seed=3, randomize_heads=False)
        net.store.values["simpol.w1"][...] = 0.3
        rng = np.random.default_rng(10)
        net.store.values["simpol.u2.W"][...] = 0.5 * rng.normal(size=net.store.values["simpol.u2.W"].shape)
        zs = enumerate_sequences(net.model, example.state, M=2)
        losses = [loss_and_traces(net, example, 2, forced_z=z).loss for z in zs]
        assert np.ptp(losses) < 1e-12  # loss really is constant in z

        score_parts = []
        probs = []
        for z in zs:
            v, p = score_gradient(net, example, 2, z)
            score_parts.append(losses[0] * v)  # basic coefficient times score
            probs.append(p)
        mean, se = mc_mean_and_se(score_parts, probs, 100_000, np.random.default_rng(11))
        assert np.all(np.abs(mean) <= 3 * se + 1e-12)
