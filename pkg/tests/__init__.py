import logging

import numpy as np

from propssl.hypergeom import ClassCounts
from propssl.ltdata import DatasetSplit, SplitSpec, make_split, synth_gaussian_mixture
from propssl.utils import json_dumps, make_rng

logging.basicConfig(
    format="[%(asctime)s %(levelname)7s] %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
    level=logging.INFO,
)


def objects_equal(left, right):
    left = json_dumps(left, sort_keys=True)
    right = json_dumps(right, sort_keys=True)
    return left == right


def num_grad(func, X, delta=1e-6):
    """Central differences of the scalar ``func`` at ``X``."""
    grad = np.zeros(X.shape)
    X = np.array(X, dtype=np.float64)
    for i in range(X.size):
        old = X.flat[i]
        X.flat[i] = old + delta
        plus = func(X)
        X.flat[i] = old - delta
        minus = func(X)
        X.flat[i] = old
        grad.flat[i] = (plus - minus) / (2 * delta)
    return grad


def relative_error(analytic, numeric) -> float:
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


def small_split(seed=0, **kwargs) -> DatasetSplit:
    """A 3-class split small enough for fast training tests."""
    options = dict(
        n_classes=3,
        n_max=60,
        gamma=4.0,
        beta=0.2,
        val_per_class=10,
        test_per_class=10,
        seed=seed,
    )
    options.update(kwargs)
    spec = SplitSpec(**options)
    pools = synth_gaussian_mixture(3, 4, 3.0, 100, make_rng(seed, 1))
    return make_split(pools, spec, make_rng(seed, 2))


def counts(*values) -> ClassCounts:
    return ClassCounts(values)
