import unittest
from unittest import mock

import numpy as np

from propssl.constants import STREAM_INIT, SUMMARY_METRICS
from propssl.exceptions import ArgumentError, ConfigError, DataError, NumericalError
from propssl.hypergeom import ProportionVector
from propssl.ltdata import DatasetSplit, Partition, SplitSpec, UnlabeledPartition
from propssl.nn import ModelParams, init_params
from propssl.ssl_losses import LossOutput, supervised_ce
from propssl.trainer import (
    CyclingSampler,
    RunJob,
    TrainConfig,
    aggregate,
    augment_strong,
    augment_weak,
    evaluate,
    evaluate_arrays,
    execute_job,
    iteration_columns,
    method_config,
    metrics_columns,
    proportion_target,
    pseudo_label_recall,
    run_seeds,
    seed_jobs,
    train,
)
from propssl.utils import make_rng

from . import objects_equal, small_split

SPEC = SplitSpec(
    n_classes=3, n_max=40, gamma=4, beta=0.25, val_per_class=5, test_per_class=5
)
SOURCE_OPTIONS = {"n_features": 4, "separation": 3.0}


def fast_config(**kwargs) -> TrainConfig:
    options = dict(
        epochs=2, iters_per_epoch=3, labeled_batch=4, mu=2, hidden_units=8, tau=0.7
    )
    options.update(kwargs)
    return TrainConfig(**options)


def identity_params(K: int = 2) -> ModelParams:
    """Logits equal the (non-negative) inputs."""
    return ModelParams(
        {"W1": np.eye(K), "b1": np.zeros(K), "W2": np.eye(K), "b2": np.zeros(K)}
    )


def nan_supervised(logits, labels):
    result = supervised_ce(logits, labels)
    return LossOutput(float("nan"), result.grads)


class TestConfig(unittest.TestCase):
    def test_defaults(self):
        config = TrainConfig().validate()
        self.assertEqual(config.unlabeled_batch, 112)
        self.assertEqual(config.as_dict()["tau"], 0.95)

    def test_invalid(self):
        for kwargs in (
            {"tau": 1.5},
            {"mu": 0},
            {"lr0": -0.1},
            {"strong_dropout_rate": 1.0},
            {"proportion_branch": "both"},
            {"epochs": -1},
        ):
            self.assertRaises(ConfigError, TrainConfig(**kwargs).validate)

    def test_method_config(self):
        config = TrainConfig(lambda_prop=0.3)
        baseline = method_config(config, "baseline", 0.5)
        self.assertEqual(baseline.lambda_prop, 0.0)
        prop = method_config(config, "prop", 0.5)
        self.assertEqual((prop.lambda_prop, prop.perturb_proportions), (0.5, False))
        prop_hg = method_config(config, "prop_hg", 0.5)
        self.assertEqual(prop_hg.lambda_prop, 0.5)
        self.assertTrue(prop_hg.perturb_proportions)
        self.assertRaises(ConfigError, method_config, config, "fixmatch", 0.5)


class TestAugment(unittest.TestCase):
    def test_zero_noise(self):
        batch = make_rng(0).standard_normal((5, 3))
        np.testing.assert_array_equal(augment_weak(batch, 0.0, make_rng(1)), batch)
        strong = augment_strong(batch, 0.0, 0.0, make_rng(1))
        np.testing.assert_array_equal(strong, batch)

    def test_noise_level(self):
        batch = np.zeros((2000, 10))
        noisy = augment_weak(batch, 0.5, make_rng(2))
        self.assertAlmostEqual(noisy.std(), 0.5, delta=0.01)

    def test_dropout_rate(self):
        batch = np.ones((2000, 10))
        strong = augment_strong(batch, 0.0, 0.25, make_rng(3))
        self.assertAlmostEqual(np.mean(strong == 0), 0.25, delta=0.01)

    def test_reproducible(self):
        batch = make_rng(0).standard_normal((4, 3))
        first = augment_strong(batch, 0.5, 0.2, make_rng(9))
        second = augment_strong(batch, 0.5, 0.2, make_rng(9))
        np.testing.assert_array_equal(first, second)

    def test_invalid(self):
        batch = np.zeros((2, 2))
        self.assertRaises(ArgumentError, augment_weak, batch, -1.0, make_rng(0))
        self.assertRaises(ArgumentError, augment_strong, batch, 0.1, 1.0, make_rng(0))


class TestProportionTarget(unittest.TestCase):
    def test_unperturbed(self):
        q = ProportionVector([0.6, 0.3, 0.1])
        self.assertIs(proportion_target(q, 100, 10, False, make_rng(0)), q)

    def test_full_draw_is_population(self):
        q = ProportionVector([0.5, 0.3, 0.2])
        target = proportion_target(q, 20, 20, True, make_rng(0))
        np.testing.assert_allclose(target.probs, [0.5, 0.3, 0.2])

    def test_perturbed_mean(self):
        q = ProportionVector([0.7, 0.2, 0.1])
        rng = make_rng(4)
        targets = np.array(
            [proportion_target(q, 100, 20, True, rng).probs for _ in range(4000)]
        )
        np.testing.assert_allclose(targets * 20, np.round(targets * 20), atol=1e-9)
        np.testing.assert_allclose(targets.mean(axis=0), q.probs, atol=0.01)
        self.assertGreater(targets[:, 0].std(), 0)

    def test_invalid_batch(self):
        q = ProportionVector([0.5, 0.5])
        for batch_size in (0, 11):
            self.assertRaises(
                ArgumentError, proportion_target, q, 10, batch_size, True, make_rng(0)
            )


class TestCyclingSampler(unittest.TestCase):
    def test_passes_are_permutations(self):
        sampler = CyclingSampler(5, make_rng(0))
        indices = sampler.next(15)
        for start in (0, 5, 10):
            self.assertEqual(sorted(indices[start : start + 5]), list(range(5)))
        self.assertEqual(len(sampler.next(0)), 0)

    def test_chunks_continue_the_pass(self):
        first = CyclingSampler(7, make_rng(1)).next(10)
        sampler = CyclingSampler(7, make_rng(1))
        second = np.concatenate([sampler.next(3), sampler.next(4), sampler.next(3)])
        np.testing.assert_array_equal(first, second)

    def test_empty(self):
        self.assertRaises(ArgumentError, CyclingSampler, 0, make_rng(0))


class TestEvaluate(unittest.TestCase):
    def test_balanced_accuracy(self):
        features = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        labels = np.array([0, 0, 1, 1])
        balanced, recall, mean_softmax, argmax_share = evaluate_arrays(
            identity_params(), features, labels
        )
        self.assertAlmostEqual(balanced, 0.75)
        np.testing.assert_allclose(recall, [1.0, 0.5])
        np.testing.assert_allclose(argmax_share.probs, [0.75, 0.25])
        self.assertAlmostEqual(mean_softmax.probs.sum(), 1.0)

    def test_absent_class(self):
        features = np.array([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
        balanced, recall, _m, _a = evaluate_arrays(
            identity_params(3), features, np.array([0, 1])
        )
        self.assertEqual(balanced, 1.0)
        self.assertEqual(recall.tolist(), [1.0, 1.0, 0.0])

    def test_samples(self):
        split = small_split()
        params = init_params((4, 8, 3), make_rng(0))
        from_samples = evaluate(params, split.test.samples())
        from_arrays = evaluate_arrays(params, split.test.features, split.test.labels)
        self.assertEqual(from_samples[0], from_arrays[0])
        self.assertRaises(ArgumentError, evaluate, params, split.unlabeled.samples())
        self.assertRaises(ArgumentError, evaluate, params, [])

    def test_pseudo_label_recall(self):
        truth = Partition(np.array([[3.0, 0.0], [0.2, 0.0], [0.0, 3.0]]), [0, 0, 1])
        recall = pseudo_label_recall(identity_params(), truth, tau=0.9)
        np.testing.assert_allclose(recall, [0.5, 1.0])
        recall = pseudo_label_recall(identity_params(), truth, tau=1.01)
        np.testing.assert_allclose(recall, [0.0, 0.0])
        empty = Partition(np.zeros((0, 2)), np.zeros(0))
        recall = pseudo_label_recall(identity_params(), empty, 0.9)
        self.assertTrue(np.all(np.isnan(recall)))


class TestTrain(unittest.TestCase):
    def test_zero_epochs(self):
        result = train(small_split(), fast_config(epochs=0))
        self.assertEqual(len(result.metrics), 1)
        self.assertEqual(result.best_epoch, 0)
        self.assertEqual(result.iterations, [])
        record = result.metrics[0]
        self.assertTrue(np.isnan(record.loss_sup))
        self.assertEqual(record.lr, 0.03)

    def test_shapes(self):
        config = fast_config(lambda_prop=1.0)
        result = train(small_split(), config)
        self.assertEqual(len(result.metrics), config.epochs + 1)
        self.assertEqual(len(result.iterations), config.epochs * config.iters_per_epoch)
        self.assertEqual(list(result.iterations[0]), iteration_columns(3))
        self.assertEqual(list(result.metrics[1].as_row()), metrics_columns(3))
        self.assertEqual(result.final_step, 6)
        self.assertTrue(all(np.isfinite(row["loss_prop"]) for row in result.iterations))

    def test_deterministic(self):
        config = fast_config(lambda_prop=0.5, perturb_proportions=True)
        first, second = train(small_split(), config), train(small_split(), config)
        self.assertTrue(objects_equal(first.iterations, second.iterations))
        for key in ("W1", "b1", "W2", "b2"):
            np.testing.assert_array_equal(
                first.final_params[key], second.final_params[key]
            )

    def test_zero_lr_keeps_init(self):
        config = fast_config(lr0=0.0, seed=5)
        result = train(small_split(), config)
        init = init_params((4, 8, 3), make_rng(5, STREAM_INIT))
        for key in ("W1", "b1", "W2", "b2"):
            np.testing.assert_array_equal(result.final_params[key], init[key])

    def test_baseline_never_touches_proportions(self):
        config = fast_config()
        reference = train(small_split(), method_config(config, "prop_hg", 0.0))
        with mock.patch(
            "propssl.trainer.proportion_loss", side_effect=AssertionError
        ), mock.patch("propssl.hypergeom.sample", side_effect=AssertionError):
            baseline = train(small_split(), method_config(config, "baseline", 0.7))
        self.assertTrue(objects_equal(baseline.iterations, reference.iterations))
        self.assertTrue(all(np.isnan(row["target_1"]) for row in baseline.iterations))
        for key in ("W1", "b1", "W2", "b2"):
            np.testing.assert_array_equal(
                baseline.final_params[key], reference.final_params[key]
            )

    def test_fixed_target_is_labeled_proportions(self):
        split = small_split()
        result = train(split, method_config(fast_config(), "prop", 1.0))
        q = split.labeled_proportions().probs
        for row in result.iterations:
            self.assertEqual([row[f"target_{k + 1}"] for k in range(3)], q.tolist())

    def test_perturbed_targets_vary(self):
        result = train(small_split(), method_config(fast_config(), "prop_hg", 1.0))
        targets = {
            tuple(row[f"target_{k + 1}"] for k in range(3)) for row in result.iterations
        }
        self.assertGreater(len(targets), 1)
        for target in targets:
            self.assertAlmostEqual(sum(target), 1.0)

    def test_hidden_labels_do_not_reach_the_loss(self):
        split = small_split()
        truth = split.unlabeled.ground_truth()
        corrupted = DatasetSplit(
            spec=split.spec,
            labeled=split.labeled,
            unlabeled=UnlabeledPartition(
                truth.features, (truth.labels + 1) % 3, truth.origins
            ),
            validation=split.validation,
            test=split.test,
        )
        config = method_config(fast_config(), "prop_hg", 1.0)
        first, second = train(split, config), train(corrupted, config)
        self.assertTrue(objects_equal(first.iterations, second.iterations))
        for key in ("W1", "b1", "W2", "b2"):
            np.testing.assert_array_equal(
                first.final_params[key], second.final_params[key]
            )

    def test_best_epoch(self):
        result = train(small_split(), fast_config(epochs=4))
        scores = [m.val_bal_acc for m in result.metrics]
        self.assertEqual(result.best_epoch, scores.index(max(scores)))
        self.assertEqual(result.best_validation_accuracy, max(scores))
        summary = result.summary()
        for key in SUMMARY_METRICS:
            self.assertIn(key, summary)
        self.assertEqual((summary["major_class"], summary["minor_class"]), (1, 3))
        np.testing.assert_allclose(
            result.deviation(),
            result.best.est_prop.probs - result.true_unlabeled.probs,
        )

    def test_no_validation(self):
        with self.assertLogs(level="WARNING"):
            result = train(small_split(val_per_class=0), fast_config())
        self.assertEqual(result.best_epoch, 2)
        self.assertTrue(np.isnan(result.best_validation_accuracy))

    def test_supervised_only(self):
        split = small_split(beta=1.0)
        self.assertEqual(len(split.unlabeled), 0)
        result = train(split, method_config(fast_config(), "prop_hg", 1.0))
        self.assertEqual(len(result.metrics), 3)
        row = result.metrics[-1].as_row()
        self.assertTrue(np.isfinite(row["loss_sup"]))
        for key in ("loss_cons", "loss_prop", "mask_rate", "est_prop_1", "pl_recall_3"):
            self.assertTrue(np.isnan(row[key]), key)
        self.assertTrue(np.isfinite(row["test_bal_acc"]))
        for row in result.iterations:
            self.assertTrue(np.isnan(row["loss_cons"]))
            self.assertTrue(np.isnan(row["target_1"]))
        self.assertTrue(np.all(np.isnan(result.deviation())))
        self.assertTrue(np.isnan(result.summary()["pl_recall_minor"]))

    def test_degenerate_split(self):
        split = small_split()
        keep = split.labeled.labels != 2
        labeled = Partition(split.labeled.features[keep], split.labeled.labels[keep])
        split = DatasetSplit(
            split.spec, labeled, split.unlabeled, split.validation, split.test
        )
        self.assertRaises(DataError, train, split, fast_config())

    def test_perturbation_batch_too_large(self):
        config = method_config(fast_config(mu=30), "prop_hg", 1.0)
        self.assertRaises(ConfigError, train, small_split(), config)

    def test_non_finite_loss(self):
        with mock.patch("propssl.trainer.supervised_ce", side_effect=nan_supervised):
            with self.assertRaises(NumericalError) as ctx:
                train(small_split(), fast_config())
        state = ctx.exception.state
        self.assertEqual((state["epoch"], state["step"]), (1, 0))
        self.assertEqual(len(state["labeled_indices"]), 4)
        self.assertEqual(ctx.exception.exit_code, 4)


class TestRunSeeds(unittest.TestCase):
    def test_repeated_seed_has_zero_spread(self):
        results, summary = run_seeds(
            SPEC,
            fast_config(),
            [3, 3],
            source_options=SOURCE_OPTIONS,
        )
        self.assertTrue(objects_equal(results[0].iterations, results[1].iterations))
        for key in SUMMARY_METRICS:
            _mean, std = summary[key]
            self.assertEqual(std, 0.0, key)

    def test_workers_keep_order(self):
        seeds = [1, 2, 3]
        serial, _ = run_seeds(SPEC, fast_config(), seeds, source_options=SOURCE_OPTIONS)
        parallel, _ = run_seeds(
            SPEC, fast_config(), seeds, source_options=SOURCE_OPTIONS, workers=2
        )
        self.assertEqual([r.config.seed for r in parallel], seeds)
        for left, right in zip(serial, parallel):
            self.assertTrue(objects_equal(left.iterations, right.iterations))

    def test_aggregate(self):
        results, _ = run_seeds(
            SPEC, fast_config(), [1, 2], source_options=SOURCE_OPTIONS
        )
        summary = aggregate(results)
        values = [r.summary()["test_bal_acc"] for r in results]
        mean, std = summary["test_bal_acc"]
        self.assertAlmostEqual(mean, np.mean(values))
        self.assertAlmostEqual(std, np.std(values, ddof=0))

    def test_no_seeds(self):
        self.assertRaises(ConfigError, seed_jobs, SPEC, fast_config(), [])

    def test_failing_job_names_the_run(self):
        job = seed_jobs(
            SPEC, fast_config(), [1], source_options=SOURCE_OPTIONS, tag="runs/x/seed_1"
        )[0]
        self.assertIsInstance(job, RunJob)
        with mock.patch("propssl.trainer.supervised_ce", side_effect=nan_supervised):
            with self.assertRaises(NumericalError) as ctx:
                execute_job(job)
        self.assertEqual(ctx.exception.state["run"], "runs/x/seed_1")
