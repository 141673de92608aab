"""Semi-supervised training with an optional proportion regularizer.

Every iteration draws a labeled batch and an unlabeled batch ``mu`` times
larger, builds a weak and a strong view of the unlabeled batch and runs a
single forward pass over the three. The objective is supervised
cross-entropy plus the confidence-masked consistency loss plus, when
``lambda_prop > 0``, the proportion loss against the labeled class
proportions (optionally perturbed by a hypergeometric draw).
"""

import logging
import multiprocessing
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import hypergeom
from .constants import (
    ITERATION_COLUMNS,
    ITERATION_TARGET_PREFIX,
    METHODS,
    METRICS_BASE_COLUMNS,
    METRICS_CLASS_PREFIXES,
    PROPORTION_BRANCHES,
    PROPORTION_EPSILON,
    STREAM_AUGMENT,
    STREAM_BATCH,
    STREAM_INIT,
    STREAM_PROPORTION,
    SUMMARY_METRICS,
)
from .exceptions import ArgumentError, ConfigError, DataError, NumericalError
from .hypergeom import ProportionVector
from .ltdata import AbstractDataSource, DatasetSplit, Partition, Sample, SplitSpec
from .nn import (
    ModelParams,
    backward,
    cosine_lr,
    forward,
    init_params,
    sgd_step,
    softmax,
)
from .ssl_losses import combined_loss, consistency_loss, proportion_loss, supervised_ce
from .utils import make_rng, mean_std

BRANCHES = ("labeled", "weak", "strong")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    iters_per_epoch: int = 50
    labeled_batch: int = 16
    mu: int = 7
    lr0: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 5e-4
    tau: float = 0.95
    lambda_u: float = 1.0
    lambda_prop: float = 0.0
    perturb_proportions: bool = False
    proportion_branch: str = "weak"
    epsilon: float = PROPORTION_EPSILON
    hidden_units: int = 64
    weak_noise_sigma: float = 0.1
    strong_noise_sigma: float = 0.5
    strong_dropout_rate: float = 0.2
    seed: int = 0

    @property
    def unlabeled_batch(self) -> int:
        return self.mu * self.labeled_batch

    def validate(self) -> "TrainConfig":
        for key in ("epochs", "iters_per_epoch"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0, got {getattr(self, key)}")
        for key in ("labeled_batch", "mu", "hidden_units"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        for key in (
            "lr0",
            "momentum",
            "weight_decay",
            "lambda_u",
            "lambda_prop",
            "epsilon",
            "weak_noise_sigma",
            "strong_noise_sigma",
        ):
            if not getattr(self, key) >= 0:
                raise ConfigError(f"{key} must be >= 0, got {getattr(self, key)}")
        if not 0 <= self.tau <= 1:
            raise ConfigError(f"tau must be in [0, 1], got {self.tau}")
        if not 0 <= self.strong_dropout_rate < 1:
            raise ConfigError(
                f"strong_dropout_rate must be in [0, 1), got {self.strong_dropout_rate}"
            )
        if self.proportion_branch not in PROPORTION_BRANCHES:
            raise ConfigError(
                f"proportion_branch must be one of {PROPORTION_BRANCHES}, "
                f"got {self.proportion_branch!r}"
            )
        return self

    def as_dict(self) -> dict:
        return asdict(self)


def method_config(config: TrainConfig, method: str, lambda_prop: float) -> TrainConfig:
    """``config`` set up for one method variant.

    >>> method_config(TrainConfig(), "baseline", 0.5).lambda_prop
    0.0
    >>> method_config(TrainConfig(), "prop_hg", 0.5).perturb_proportions
    True
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}, expected one of {list(METHODS)}")
    uses_prop, perturb = METHODS[method]
    return replace(
        config,
        lambda_prop=float(lambda_prop) if uses_prop else 0.0,
        perturb_proportions=perturb,
    )


def augment_weak(
    batch: np.ndarray, sigma: float, rng: np.random.Generator
) -> np.ndarray:
    """Additive Gaussian noise."""
    batch = np.asarray(batch, dtype=np.float64)
    if sigma < 0:
        raise ArgumentError(f"sigma must be >= 0, got {sigma}")
    return batch + sigma * rng.standard_normal(batch.shape)


def augment_strong(
    batch: np.ndarray, sigma: float, dropout_rate: float, rng: np.random.Generator
) -> np.ndarray:
    """Additive Gaussian noise, then each feature zeroed with ``dropout_rate``."""
    if not 0 <= dropout_rate < 1:
        raise ArgumentError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
    noisy = augment_weak(batch, sigma, rng)
    keep = rng.random(noisy.shape) >= dropout_rate
    return noisy * keep


def proportion_target(
    q_hat: ProportionVector,
    M: int,
    batch_size: int,
    perturb: bool,
    rng: np.random.Generator,
) -> ProportionVector:
    """Target of the proportion loss for one iteration.

    Without perturbation this is ``q_hat``. With it, ``batch_size`` items are
    drawn without replacement from a population of ``M`` items composed
    like ``q_hat`` and their class shares are returned.
    """
    if not perturb:
        return q_hat
    if batch_size < 1 or batch_size > M:
        raise ArgumentError(
            f"batch size {batch_size} must be in [1, {M}] to perturb proportions"
        )
    population = hypergeom.population_from_proportions(q_hat, M)
    counts = hypergeom.sample(population, batch_size, rng)
    return ProportionVector(counts.counts / batch_size)


class CyclingSampler:
    """Endless stream of indices, reshuffled after every full pass."""

    def __init__(self, n: int, rng: np.random.Generator) -> None:
        if n < 1:
            raise ArgumentError("cannot sample from an empty partition")
        self.n = n
        self.rng = rng
        self._order = np.zeros(0, dtype=np.int64)
        self._pos = 0

    def next(self, size: int) -> np.ndarray:
        chunks = []
        while size > 0:
            if self._pos == len(self._order):
                self._order = self.rng.permutation(self.n)
                self._pos = 0
            take = min(size, len(self._order) - self._pos)
            chunks.append(self._order[self._pos : self._pos + take])
            self._pos += take
            size -= take
        return np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)


def _predict(params: ModelParams, features: np.ndarray) -> np.ndarray:
    logits, _cache = forward(params, features)
    return softmax(logits)


def _proportions(
    probs: np.ndarray, K: int
) -> Tuple[ProportionVector, ProportionVector]:
    mean_softmax = ProportionVector.normalized(probs.mean(axis=0))
    hist = np.bincount(np.argmax(probs, axis=1), minlength=K)
    return mean_softmax, ProportionVector.normalized(hist)


def _recalls(
    predicted: np.ndarray, labels: np.ndarray, K: int
) -> Tuple[float, np.ndarray]:
    support = np.bincount(labels, minlength=K)
    hits = np.bincount(labels[predicted == labels], minlength=K)
    recall = np.divide(
        hits, support, out=np.zeros(K, dtype=np.float64), where=support > 0
    )
    return float(recall[support > 0].mean()), recall


def evaluate_arrays(
    params: ModelParams, features: np.ndarray, labels: np.ndarray
) -> Tuple[float, np.ndarray, ProportionVector, ProportionVector]:
    """Balanced accuracy, per-class recall, mean softmax and argmax shares.

    Classes missing from ``labels`` get recall 0 and do not enter the
    balanced accuracy.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if not len(labels):
        raise ArgumentError("cannot evaluate on an empty set")
    K = params.layer_sizes[2]
    probs = _predict(params, features)
    balanced, recall = _recalls(np.argmax(probs, axis=1), labels, K)
    mean_softmax, argmax_share = _proportions(probs, K)
    return balanced, recall, mean_softmax, argmax_share


def evaluate(
    params: ModelParams, samples: Iterable[Sample]
) -> Tuple[float, np.ndarray, ProportionVector, ProportionVector]:
    samples = list(samples)
    if not samples:
        raise ArgumentError("cannot evaluate on an empty set")
    if any(s.label is None for s in samples):
        raise ArgumentError("evaluation needs labeled samples")
    features = np.stack([s.features for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return evaluate_arrays(params, features, labels)


def pseudo_label_recall(
    params: ModelParams, truth: Partition, tau: float
) -> np.ndarray:
    """Per class: confident and correct pseudo-labels / all samples of the class."""
    K = params.layer_sizes[2]
    if not len(truth):
        return np.full(K, np.nan)
    probs = _predict(params, truth.features)
    confident = probs.max(axis=1) >= tau
    predicted = np.where(confident, np.argmax(probs, axis=1), -1)
    _balanced, recall = _recalls(predicted, truth.labels, K)
    return recall


def metrics_columns(K: int) -> List[str]:
    columns = list(METRICS_BASE_COLUMNS)
    for prefix in METRICS_CLASS_PREFIXES:
        columns += [f"{prefix}_{k + 1}" for k in range(K)]
    return columns


def iteration_columns(K: int) -> List[str]:
    return list(ITERATION_COLUMNS) + [
        f"{ITERATION_TARGET_PREFIX}_{k + 1}" for k in range(K)
    ]


@dataclass
class MetricsRecord:
    epoch: int
    loss_sup: float
    loss_cons: float
    loss_prop: float
    mask_rate: float
    lr: float
    val_bal_acc: float
    test_bal_acc: float
    est_prop: Union[ProportionVector, np.ndarray]
    pl_recall: np.ndarray
    argmax_prop: Union[ProportionVector, np.ndarray]
    test_recall: np.ndarray

    def as_row(self) -> dict:
        row = {key: getattr(self, key) for key in METRICS_BASE_COLUMNS}
        for prefix in METRICS_CLASS_PREFIXES:
            for k, value in enumerate(probs_of(getattr(self, prefix))):
                row[f"{prefix}_{k + 1}"] = float(value)
        return row


def probs_of(values: Union[ProportionVector, np.ndarray]) -> np.ndarray:
    """Array form of a proportion vector or of its NaN placeholder."""
    if isinstance(values, ProportionVector):
        return values.probs
    return np.asarray(values, dtype=np.float64)


def _major_minor(counts: hypergeom.ClassCounts) -> Tuple[int, int]:
    """Most frequent class (lowest index on ties) and least frequent (highest index)."""
    c = counts.counts
    return int(np.argmax(c)), int(len(c) - 1 - np.argmin(c[::-1]))


@dataclass
class RunResult:
    config: TrainConfig
    split_spec: SplitSpec
    metrics: List[MetricsRecord]
    iterations: List[dict]
    best_epoch: int
    best_params: ModelParams
    final_params: ModelParams
    true_unlabeled: Union[ProportionVector, np.ndarray]
    class_counts: hypergeom.ClassCounts
    final_step: int = 0
    state: Dict[str, object] = field(default_factory=dict)

    @property
    def best(self) -> MetricsRecord:
        return self.metrics[self.best_epoch]

    @property
    def best_validation_accuracy(self) -> float:
        return self.best.val_bal_acc

    @property
    def test_accuracy_at_best(self) -> float:
        return self.best.test_bal_acc

    def deviation(self) -> np.ndarray:
        """Estimated minus true unlabeled proportions at the best epoch."""
        return probs_of(self.best.est_prop) - probs_of(self.true_unlabeled)

    def summary(self) -> dict:
        major, minor = _major_minor(self.class_counts)
        deviation = self.deviation()
        return {
            "best_epoch": self.best_epoch,
            "best_val_bal_acc": self.best_validation_accuracy,
            "test_bal_acc": self.test_accuracy_at_best,
            "final_test_bal_acc": self.metrics[-1].test_bal_acc,
            "deviation_l1": float(np.abs(deviation).sum()),
            "deviation_minor": float(deviation[minor]),
            "pl_recall_major": float(self.best.pl_recall[major]),
            "pl_recall_minor": float(self.best.pl_recall[minor]),
            "major_class": major + 1,
            "minor_class": minor + 1,
            "true_unlabeled_prop": probs_of(self.true_unlabeled),
            "est_prop_at_best": probs_of(self.best.est_prop),
        }


def _check_split(split: DatasetSplit) -> None:
    missing = [k + 1 for k, n in enumerate(split.class_counts_labeled) if n < 1]
    if missing:
        raise DataError(f"degenerate split: no labeled samples for classes {missing}")


def _select_best(metrics: Sequence[MetricsRecord]) -> int:
    """Epoch of the highest validation accuracy, earliest on ties.

    Falls back to the last epoch when there is no validation data.
    """
    scores = np.array([m.val_bal_acc for m in metrics], dtype=np.float64)
    if np.all(np.isnan(scores)):
        return len(metrics) - 1
    return int(np.nanargmax(scores))


def _column_means(values: np.ndarray) -> np.ndarray:
    """Per-column mean over the finite entries, NaN for columns without any."""
    means = np.full(values.shape[1], np.nan)
    for j in range(values.shape[1]):
        column = values[:, j]
        column = column[np.isfinite(column)]
        if column.size:
            means[j] = column.mean()
    return means


def _epoch_record(
    params: ModelParams,
    split: DatasetSplit,
    config: TrainConfig,
    epoch: int,
    lr: float,
    losses: np.ndarray,
) -> MetricsRecord:
    K = split.n_classes
    nan = float("nan")
    val_acc = nan
    if len(split.validation):
        val_acc = evaluate_arrays(
            params, split.validation.features, split.validation.labels
        )[0]
    test_acc, test_recall = nan, np.full(K, nan)
    if len(split.test):
        test_acc, test_recall = evaluate_arrays(
            params, split.test.features, split.test.labels
        )[:2]
    est_prop = argmax_prop = pl_recall = np.full(K, nan)
    if len(split.unlabeled):
        probs = _predict(params, split.unlabeled.features)
        est_prop, argmax_prop = _proportions(probs, K)
        # diagnostics only: the hidden labels never reach the losses
        pl_recall = pseudo_label_recall(
            params, split.unlabeled.ground_truth(), config.tau
        )
    means = _column_means(losses)
    return MetricsRecord(
        epoch=epoch,
        loss_sup=float(means[0]),
        loss_cons=float(means[1]),
        loss_prop=float(means[2]),
        mask_rate=float(means[3]),
        lr=float(lr),
        val_bal_acc=float(val_acc),
        test_bal_acc=float(test_acc),
        est_prop=est_prop,
        pl_recall=pl_recall,
        argmax_prop=argmax_prop,
        test_recall=test_recall,
    )


def train(split: DatasetSplit, config: TrainConfig) -> RunResult:
    config.validate()
    _check_split(split)
    K = split.n_classes
    seed = config.seed
    M = len(split.unlabeled)
    # without unlabeled samples the run is supervised only
    semi = M > 0
    use_prop = semi and config.lambda_prop > 0
    if use_prop and config.perturb_proportions and config.unlabeled_batch > M:
        raise ConfigError(
            f"unlabeled batch {config.unlabeled_batch} exceeds the {M} unlabeled "
            "samples the proportion target is drawn from"
        )

    params = init_params(
        (split.n_features, config.hidden_units, K), make_rng(seed, STREAM_INIT)
    )
    labeled_sampler = CyclingSampler(
        len(split.labeled), make_rng(seed, STREAM_BATCH, 0)
    )
    unlabeled_sampler = None
    if semi:
        unlabeled_sampler = CyclingSampler(M, make_rng(seed, STREAM_BATCH, 1))
    augment_rng = make_rng(seed, STREAM_AUGMENT)
    proportion_rng = make_rng(seed, STREAM_PROPORTION)
    q_hat = split.labeled_proportions()
    # loss path sees features only
    unlabeled_features = split.unlabeled.features
    labeled = split.labeled

    total_steps = config.epochs * config.iters_per_epoch
    empty = np.zeros((0, 4))
    metrics = [_epoch_record(params, split, config, 0, config.lr0, empty)]
    best_epoch, best_params = 0, params.copy()
    iterations = []
    step = 0
    lr = config.lr0
    logging.info(
        "training: K=%d labeled=%d unlabeled=%d lambda_prop=%s perturb=%s seed=%d",
        K,
        len(labeled),
        M,
        config.lambda_prop,
        config.perturb_proportions,
        seed,
    )

    for epoch in range(1, config.epochs + 1):
        losses = np.zeros((config.iters_per_epoch, 4))
        for it in range(config.iters_per_epoch):
            lab_idx = labeled_sampler.next(config.labeled_batch)
            batches = [
                augment_weak(
                    labeled.features[lab_idx], config.weak_noise_sigma, augment_rng
                )
            ]
            unl_idx = np.zeros(0, dtype=np.int64)
            if semi:
                unl_idx = unlabeled_sampler.next(config.unlabeled_batch)
                raw = unlabeled_features[unl_idx]
                batches.append(augment_weak(raw, config.weak_noise_sigma, augment_rng))
                batches.append(
                    augment_strong(
                        raw,
                        config.strong_noise_sigma,
                        config.strong_dropout_rate,
                        augment_rng,
                    )
                )
            branches = BRANCHES[: len(batches)]
            sizes = [len(b) for b in batches]
            logits, cache = forward(params, np.concatenate(batches))
            logits_by_branch = dict(
                zip(branches, np.split(logits, np.cumsum(sizes)[:-1]))
            )

            sup = supervised_ce(logits_by_branch["labeled"], labeled.labels[lab_idx])
            cons, prop, target = None, None, None
            if semi:
                cons = consistency_loss(
                    logits_by_branch["weak"], logits_by_branch["strong"], config.tau
                )
            if use_prop:
                target = proportion_target(
                    q_hat,
                    M,
                    config.unlabeled_batch,
                    config.perturb_proportions,
                    proportion_rng,
                )
                prop = proportion_loss(
                    logits_by_branch[config.proportion_branch],
                    target,
                    config.epsilon,
                    branch=config.proportion_branch,
                )
            total = combined_loss(sup, cons, prop, config.lambda_u, config.lambda_prop)
            lr = cosine_lr(step, total_steps, config.lr0)
            nan = float("nan")
            loss_cons = cons.value if cons is not None else nan
            loss_prop = prop.value if prop is not None else nan
            mask_rate = cons.aux["mask_rate"] if cons is not None else nan

            if not np.isfinite(total.value):
                state = {
                    "epoch": epoch,
                    "step": step,
                    "lr": lr,
                    "loss_sup": sup.value,
                    "loss_cons": loss_cons,
                    "loss_prop": loss_prop,
                    "labeled_indices": lab_idx,
                    "unlabeled_indices": unl_idx,
                }
                logging.error("non-finite loss at epoch %d step %d", epoch, step)
                raise NumericalError(
                    f"non-finite loss {total.value} at epoch {epoch}, step {step}",
                    state,
                )

            grad_logits = np.concatenate([total.grads[b] for b in branches])
            sgd_step(
                params,
                backward(params, cache, grad_logits),
                lr,
                config.momentum,
                config.weight_decay,
            )
            losses[it] = (sup.value, loss_cons, loss_prop, mask_rate)
            row = {
                "epoch": epoch,
                "step": step,
                "lr": lr,
                "loss_sup": sup.value,
                "loss_cons": loss_cons,
                "loss_prop": loss_prop,
                "loss_total": total.value,
                "mask_rate": mask_rate,
            }
            for k in range(K):
                row[f"{ITERATION_TARGET_PREFIX}_{k + 1}"] = (
                    float(target.probs[k]) if target is not None else nan
                )
            iterations.append(row)
            step += 1

        record = _epoch_record(params, split, config, epoch, lr, losses)
        metrics.append(record)
        logging.info(
            "epoch %d: sup=%.4f cons=%.4f prop=%.4f mask=%.3f val=%.4f test=%.4f",
            epoch,
            record.loss_sup,
            record.loss_cons,
            record.loss_prop,
            record.mask_rate,
            record.val_bal_acc,
            record.test_bal_acc,
        )
        if _select_best(metrics) == epoch:
            best_epoch, best_params = epoch, params.copy()

    if not len(split.validation):
        logging.warning("no validation samples, reporting the last epoch")
        best_epoch, best_params = len(metrics) - 1, params.copy()

    return RunResult(
        config=config,
        split_spec=split.spec,
        metrics=metrics,
        iterations=iterations,
        best_epoch=best_epoch,
        best_params=best_params,
        final_params=params,
        true_unlabeled=(
            split.true_unlabeled_proportions() if semi else np.full(K, np.nan)
        ),
        class_counts=split.class_counts_total,
        final_step=step,
    )


@dataclass(frozen=True)
class RunJob:
    """One training run, picklable so it can be sent to a worker process."""

    source_kind: str
    source_options: Tuple[Tuple[str, object], ...]
    split_spec: SplitSpec
    config: TrainConfig
    tag: str = ""


def execute_job(job: RunJob) -> RunResult:
    options = dict(job.source_options)
    source = AbstractDataSource.get_instance(job.source_kind, **options)
    split = source.build_split(job.split_spec)
    logging.info("run %s seed=%d", job.tag or "-", job.config.seed)
    try:
        return train(split, job.config)
    except NumericalError as exc:
        exc.state["run"] = job.tag
        raise


def execute_jobs(jobs: Sequence[RunJob], workers: int = 1) -> List[RunResult]:
    """Results in job order, whatever the number of workers."""
    jobs = list(jobs)
    if workers <= 1 or len(jobs) <= 1:
        return [execute_job(job) for job in jobs]
    with multiprocessing.Pool(min(workers, len(jobs))) as pool:
        return pool.map(execute_job, jobs)


def seed_jobs(
    split_spec: SplitSpec,
    config: TrainConfig,
    seeds: Sequence[int],
    source_kind: str = "synthetic",
    source_options: Optional[dict] = None,
    tag: str = "",
) -> List[RunJob]:
    if not seeds:
        raise ConfigError("at least one seed is required")
    options = tuple(sorted((source_options or {}).items()))
    return [
        RunJob(
            source_kind=source_kind,
            source_options=options,
            split_spec=replace(split_spec, seed=int(s)),
            config=replace(config, seed=int(s)),
            tag=tag,
        )
        for s in seeds
    ]


def aggregate(results: Sequence[RunResult]) -> Dict[str, Tuple[float, float]]:
    """Mean and population standard deviation of each summary metric."""
    summaries = [r.summary() for r in results]
    return {key: mean_std(s[key] for s in summaries) for key in SUMMARY_METRICS}


def run_seeds(
    split_spec: SplitSpec,
    config: TrainConfig,
    seeds: Sequence[int],
    source_kind: str = "synthetic",
    source_options: Optional[dict] = None,
    workers: int = 1,
) -> Tuple[List[RunResult], Dict[str, Tuple[float, float]]]:
    """Train once per seed, regenerating the split with that seed."""
    jobs = seed_jobs(split_spec, config, seeds, source_kind, source_options)
    results = execute_jobs(jobs, workers)
    return results, aggregate(results)
