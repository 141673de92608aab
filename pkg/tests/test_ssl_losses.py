import unittest

import numpy as np

from propssl.exceptions import ArgumentError
from propssl.hypergeom import ProportionVector
from propssl.nn import softmax
from propssl.ssl_losses import (
    LossOutput,
    combined_loss,
    consistency_loss,
    proportion_loss,
    supervised_ce,
)
from propssl.utils import make_rng

from . import num_grad, relative_error


def random_target(rng, K: int) -> ProportionVector:
    return ProportionVector.normalized(rng.random(K) + 0.05)


class TestProportionLoss(unittest.TestCase):
    def test_perfect_match(self):
        logits = np.array([[50.0, 0.0, 0.0]] * 4)
        target = ProportionVector([1.0, 0.0, 0.0])
        self.assertAlmostEqual(proportion_loss(logits, target, epsilon=0).value, 0.0)

    def test_uniform(self):
        logits = np.zeros((6, 10))
        target = ProportionVector([0.1] * 10)
        self.assertAlmostEqual(proportion_loss(logits, target).value, np.log(10), 6)

    def test_two_rows(self):
        logits = np.log(np.array([[0.9, 0.1], [0.5, 0.5]]))
        result = proportion_loss(logits, ProportionVector([0.7, 0.3]))
        np.testing.assert_allclose(result.aux["p_hat"], [0.7, 0.3])
        expected = -(0.7 * np.log(0.7) + 0.3 * np.log(0.3))
        self.assertAlmostEqual(result.value, expected, places=6)
        self.assertAlmostEqual(result.value, 0.6109, places=4)

    def test_cross_entropy_above_entropy(self):
        rng = make_rng(0)
        for _ in range(20):
            K = int(rng.integers(2, 6))
            target = random_target(rng, K)
            q = target.probs
            entropy = -np.sum(q * np.log(q + 1e-8))
            logits = rng.standard_normal((8, K)) * 2
            self.assertGreaterEqual(proportion_loss(logits, target).value, entropy)
            # rows predicting q exactly reach the bound
            matched = np.tile(np.log(q), (8, 1))
            value = proportion_loss(matched, target).value
            self.assertAlmostEqual(value, entropy, places=9)

    def test_gradient(self):
        rng = make_rng(1)
        for _ in range(20):
            K, n = int(rng.integers(2, 6)), int(rng.integers(1, 9))
            target = random_target(rng, K)
            if rng.random() < 0.3:
                q = target.probs.copy()
                q[0] = 0.0
                target = ProportionVector.normalized(q)
            logits = rng.standard_normal((n, K))
            analytic = proportion_loss(logits, target).grads["weak"]
            numeric = num_grad(lambda x: proportion_loss(x, target).value, logits)
            self.assertLess(relative_error(analytic, numeric), 1e-4)

    def test_branch(self):
        logits = make_rng(2).standard_normal((3, 2))
        result = proportion_loss(logits, ProportionVector([0.5, 0.5]), branch="strong")
        self.assertEqual(list(result.grads), ["strong"])

    def test_permutation_invariant(self):
        rng = make_rng(3)
        logits = rng.standard_normal((7, 4))
        target = random_target(rng, 4)
        perm = rng.permutation(7)
        first = proportion_loss(logits, target)
        second = proportion_loss(logits[perm], target)
        self.assertAlmostEqual(first.value, second.value, places=12)
        np.testing.assert_allclose(first.grads["weak"][perm], second.grads["weak"])

    def test_invalid(self):
        target = ProportionVector([0.5, 0.5])
        self.assertRaises(ArgumentError, proportion_loss, np.zeros((0, 2)), target)
        self.assertRaises(ArgumentError, proportion_loss, np.zeros((3, 3)), target)
        self.assertRaises(ArgumentError, proportion_loss, np.zeros(2), target)


class TestSupervised(unittest.TestCase):
    def test_uniform(self):
        result = supervised_ce(np.zeros((5, 4)), np.array([0, 1, 2, 3, 0]))
        self.assertAlmostEqual(result.value, np.log(4))

    def test_saturated(self):
        logits = np.array([[50.0, 0.0, 0.0], [0.0, 0.0, 50.0]])
        self.assertAlmostEqual(supervised_ce(logits, np.array([0, 2])).value, 0.0)

    def test_two_samples(self):
        logits = np.array([[0.0, np.log(3)], [np.log(2), 0.0]])
        result = supervised_ce(logits, np.array([1, 1]))
        expected = (-np.log(3 / 4) - np.log(1 / 3)) / 2
        self.assertAlmostEqual(result.value, expected)
        self.assertAlmostEqual(result.value, np.log(4) / 2)

    def test_gradient(self):
        rng = make_rng(4)
        for _ in range(20):
            K, n = int(rng.integers(2, 6)), int(rng.integers(1, 9))
            logits = rng.standard_normal((n, K)) * 2
            labels = rng.integers(0, K, size=n)
            analytic = supervised_ce(logits, labels).grads["labeled"]
            numeric = num_grad(lambda x: supervised_ce(x, labels).value, logits)
            self.assertLess(relative_error(analytic, numeric), 1e-4)

    def test_invalid(self):
        self.assertRaises(ArgumentError, supervised_ce, np.zeros((2, 3)), [0, 3])
        self.assertRaises(ArgumentError, supervised_ce, np.zeros((2, 3)), [0])
        self.assertRaises(ArgumentError, supervised_ce, np.zeros((0, 3)), [])


class TestConsistency(unittest.TestCase):
    def test_threshold_above_one(self):
        rng = make_rng(5)
        weak, strong = rng.standard_normal((6, 3)) * 5, rng.standard_normal((6, 3))
        result = consistency_loss(weak, strong, tau=1.01)
        self.assertEqual(result.value, 0.0)
        self.assertEqual(result.aux["mask_rate"], 0.0)
        np.testing.assert_array_equal(result.grads["strong"], np.zeros((6, 3)))

    def test_self_consistency_penalizes_soft_predictions(self):
        logits = np.array([[3.0, 0.0]])
        result = consistency_loss(logits, logits, tau=0.9)
        confidence = softmax(logits)[0, 0]
        self.assertGreater(result.value, 0.0)
        self.assertAlmostEqual(result.value, -np.log(confidence))

    def test_two_samples_divides_by_batch_size(self):
        weak = np.array([[np.log(9), 0.0], [0.0, 0.0]])
        strong = np.array([[0.0, 0.0], [5.0, 0.0]])
        result = consistency_loss(weak, strong, tau=0.8)
        self.assertAlmostEqual(result.value, np.log(2) / 2)
        self.assertEqual(result.aux["mask"].tolist(), [True, False])
        self.assertEqual(result.aux["mask_rate"], 0.5)
        self.assertEqual(result.aux["pseudo_counts"].tolist(), [1, 0])
        # ties go to the lowest class index
        self.assertEqual(result.aux["pseudo_labels"].tolist(), [0, 0])
        np.testing.assert_array_equal(result.grads["strong"][1], [0.0, 0.0])

    def test_gradient(self):
        rng = make_rng(6)
        for _ in range(20):
            K, n = int(rng.integers(2, 6)), int(rng.integers(1, 9))
            weak = rng.standard_normal((n, K)) * 3
            strong = rng.standard_normal((n, K))
            result = consistency_loss(weak, strong, tau=0.6)
            np.testing.assert_array_equal(result.grads["weak"], np.zeros((n, K)))
            numeric = num_grad(lambda x: consistency_loss(weak, x, 0.6).value, strong)
            self.assertLess(relative_error(result.grads["strong"], numeric), 1e-4)

    def test_permutation_invariant(self):
        rng = make_rng(7)
        weak = rng.standard_normal((9, 3)) * 4
        strong = rng.standard_normal((9, 3))
        perm = rng.permutation(9)
        first = consistency_loss(weak, strong, 0.7)
        second = consistency_loss(weak[perm], strong[perm], 0.7)
        self.assertAlmostEqual(first.value, second.value, places=12)
        np.testing.assert_allclose(first.grads["strong"][perm], second.grads["strong"])

    def test_empty_batch(self):
        result = consistency_loss(np.zeros((0, 3)), np.zeros((0, 3)), 0.95)
        self.assertEqual(result.value, 0.0)
        self.assertEqual(result.aux["pseudo_counts"].tolist(), [0, 0, 0])

    def test_shape_mismatch(self):
        self.assertRaises(
            ArgumentError, consistency_loss, np.zeros((2, 3)), np.zeros((3, 3)), 0.9
        )


class TestCombined(unittest.TestCase):
    def setUp(self):
        rng = make_rng(8)
        self.sup = supervised_ce(rng.standard_normal((4, 3)), np.array([0, 1, 2, 0]))
        weak = rng.standard_normal((6, 3)) * 4
        self.cons = consistency_loss(weak, rng.standard_normal((6, 3)), 0.5)
        self.prop = proportion_loss(weak, ProportionVector([0.5, 0.3, 0.2]))

    def test_arithmetic(self):
        ones = [LossOutput(1.0, {}), LossOutput(1.0, {}), LossOutput(1.0, {})]
        result = combined_loss(*ones, lambda_u=1.0, lambda_prop=0.5)
        self.assertEqual(result.value, 2.5)
        self.assertEqual(result.aux, {"sup": 1.0, "cons": 1.0, "prop": 1.0})

    def test_baseline_recovered(self):
        result = combined_loss(self.sup, self.cons, self.prop, 1.0, 0.0)
        baseline = combined_loss(self.sup, self.cons, None, 1.0, 0.0)
        self.assertEqual(result.value, baseline.value)
        np.testing.assert_array_equal(result.grads["weak"], np.zeros((6, 3)))
        np.testing.assert_array_equal(
            result.grads["strong"], baseline.grads["strong"]
        )

    def test_supervised_only(self):
        result = combined_loss(self.sup, self.cons, self.prop, 0.0, 0.0)
        self.assertEqual(result.value, self.sup.value)
        np.testing.assert_array_equal(
            result.grads["labeled"], self.sup.grads["labeled"]
        )

    def test_linear_in_lambda_prop(self):
        once = combined_loss(self.sup, self.cons, self.prop, 1.0, 1.0)
        three = combined_loss(self.sup, self.cons, self.prop, 1.0, 3.0)
        np.testing.assert_allclose(three.grads["weak"], 3 * once.grads["weak"])
        np.testing.assert_allclose(
            three.grads["weak"], 3 * self.prop.grads["weak"], rtol=1e-12
        )
        self.assertAlmostEqual(
            three.value - once.value, 2 * self.prop.value, places=12
        )

    def test_shape_mismatch(self):
        other = proportion_loss(np.zeros((2, 3)), ProportionVector([0.5, 0.3, 0.2]))
        self.assertRaises(
            ArgumentError, combined_loss, self.sup, self.cons, other, 1.0, 1.0
        )
