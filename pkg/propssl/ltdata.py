"""Long-tailed datasets and their labeled/unlabeled/validation/test splits.

Classes are indexed from 0 in memory. On disk (CSV label columns, manifests)
they are numbered from 1.
"""

import abc
import logging
import os
from dataclasses import asdict, dataclass
from typing import Iterator, List, Optional, Sequence

import numpy as np
import pandas as pd

from .classes import RegistryAbstractBase
from .constants import (
    ENCODING,
    PARTITIONS,
    SPLIT_MANIFEST_FILE,
    STREAM_POOL,
    STREAM_SPLIT,
    UNLABELED_PROFILES,
)
from .exceptions import ArgumentError, ConfigError, DataError
from .hypergeom import ClassCounts, ProportionVector
from .storage import Storage
from .utils import make_rng, parse_floats, parse_ints, round_half_up

# features of one class, shape (n_k, d)
Pools = List[np.ndarray]


@dataclass(frozen=True)
class SplitSpec:
    n_classes: int = 10
    n_max: int = 90
    gamma: float = 10.0
    beta: float = 0.02
    val_per_class: int = 0
    test_per_class: int = 0
    seed: int = 0
    unlabeled_profile: str = "matched"

    def validate(self) -> "SplitSpec":
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.n_max < 1:
            raise ConfigError(f"n_max must be >= 1, got {self.n_max}")
        if not self.gamma >= 1:
            raise ConfigError(f"gamma must be >= 1, got {self.gamma}")
        if not 0 < self.beta <= 1:
            raise ConfigError(f"beta must be in (0, 1], got {self.beta}")
        if self.val_per_class < 0 or self.test_per_class < 0:
            raise ConfigError("val_per_class and test_per_class must be >= 0")
        if self.unlabeled_profile not in UNLABELED_PROFILES:
            raise ConfigError(
                f"unlabeled_profile must be one of {UNLABELED_PROFILES}, "
                f"got {self.unlabeled_profile!r}"
            )
        return self

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: Optional[int] = None


class Partition:
    """Samples with visible labels."""

    def __init__(
        self, features: np.ndarray, labels: np.ndarray, origins: np.ndarray = None
    ) -> None:
        self.__features = np.asarray(features, dtype=np.float64)
        self.__labels = np.asarray(labels, dtype=np.int64)
        if self.__features.ndim != 2 or len(self.__features) != len(self.__labels):
            raise ArgumentError(
                f"features {self.__features.shape} do not match "
                f"labels {self.__labels.shape}"
            )
        if origins is None:
            origins = np.stack([self.__labels, np.arange(len(self.__labels))], axis=1)
        # (class, index in that class' pool) of every sample
        self.__origins = np.asarray(origins, dtype=np.int64).reshape(-1, 2)

    @property
    def features(self) -> np.ndarray:
        return self.__features

    @property
    def labels(self) -> np.ndarray:
        return self.__labels

    @property
    def origins(self) -> np.ndarray:
        return self.__origins

    def __len__(self) -> int:
        return len(self.__labels)

    def class_counts(self, n_classes: int) -> ClassCounts:
        return ClassCounts(np.bincount(self.__labels, minlength=n_classes))

    def samples(self) -> Iterator[Sample]:
        for x, y in zip(self.__features, self.__labels):
            yield Sample(features=x, label=int(y))


class UnlabeledPartition:
    """Samples whose labels are withheld from training.

    The ground truth is kept for diagnostics only and is reachable through
    :meth:`ground_truth`; the training loss path uses :attr:`features`.
    """

    def __init__(
        self,
        features: np.ndarray,
        hidden_labels: np.ndarray,
        origins: np.ndarray = None,
    ) -> None:
        self.__partition = Partition(features, hidden_labels, origins)

    @property
    def features(self) -> np.ndarray:
        return self.__partition.features

    @property
    def origins(self) -> np.ndarray:
        return self.__partition.origins

    def __len__(self) -> int:
        return len(self.__partition)

    def ground_truth(self) -> Partition:
        return self.__partition

    def samples(self) -> Iterator[Sample]:
        for x in self.features:
            yield Sample(features=x, label=None)


class DatasetSplit:
    def __init__(
        self,
        spec: SplitSpec,
        labeled: Partition,
        unlabeled: UnlabeledPartition,
        validation: Partition,
        test: Partition,
        feature_names: Sequence[str] = None,
    ) -> None:
        self.spec = spec
        self.labeled = labeled
        self.unlabeled = unlabeled
        self.validation = validation
        self.test = test
        K = spec.n_classes
        self.class_counts_labeled = labeled.class_counts(K)
        self.class_counts_unlabeled = unlabeled.ground_truth().class_counts(K)
        self.class_counts_total = ClassCounts(
            self.class_counts_labeled.counts + self.class_counts_unlabeled.counts
        )
        d = labeled.features.shape[1]
        self.feature_names = list(feature_names or [f"f_{i + 1}" for i in range(d)])

    @property
    def n_classes(self) -> int:
        return self.spec.n_classes

    @property
    def n_features(self) -> int:
        return self.labeled.features.shape[1]

    def labeled_proportions(self) -> ProportionVector:
        return ProportionVector.from_counts(self.class_counts_labeled)

    def true_unlabeled_proportions(self) -> ProportionVector:
        return ProportionVector.from_counts(self.class_counts_unlabeled)


def longtail_counts(spec: SplitSpec) -> ClassCounts:
    """Per-class training counts decaying from ``n_max`` to ``n_max / gamma``.

    >>> longtail_counts(SplitSpec(n_classes=10, n_max=90, gamma=10)).as_tuple()[-1]
    9
    """
    spec.validate()
    K = spec.n_classes
    counts = [
        round_half_up(spec.n_max * spec.gamma ** (-k / (K - 1))) for k in range(K)
    ]
    if counts[-1] < 1:
        raise ConfigError(
            f"smallest class is empty: n_max={spec.n_max}, gamma={spec.gamma}"
        )
    return ClassCounts(counts)


def labeled_counts(spec: SplitSpec, counts: ClassCounts = None) -> ClassCounts:
    """Labeled samples per class, ``round(beta * N_k)`` but at least one."""
    counts = counts if counts is not None else longtail_counts(spec)
    return ClassCounts(
        [min(n, max(1, round_half_up(spec.beta * n))) for n in counts]
    )


def unlabeled_counts(
    spec: SplitSpec, counts: ClassCounts = None, labeled: ClassCounts = None
) -> ClassCounts:
    counts = counts if counts is not None else longtail_counts(spec)
    labeled = labeled if labeled is not None else labeled_counts(spec, counts)
    matched = counts.counts - labeled.counts
    if spec.unlabeled_profile == "uniform":
        return ClassCounts(np.full(len(matched), matched.sum() // len(matched)))
    elif spec.unlabeled_profile == "reversed":
        return ClassCounts(matched[::-1])
    return ClassCounts(matched)


def required_pool_sizes(spec: SplitSpec) -> ClassCounts:
    counts = longtail_counts(spec)
    n_lab = labeled_counts(spec, counts)
    n_unl = unlabeled_counts(spec, counts, n_lab)
    return ClassCounts(
        n_lab.counts + n_unl.counts + spec.val_per_class + spec.test_per_class
    )


def _stack(blocks: List[np.ndarray], d: int) -> np.ndarray:
    return np.concatenate(blocks, axis=0) if blocks else np.zeros((0, d))


def make_split(pools: Pools, spec: SplitSpec, rng: np.random.Generator) -> DatasetSplit:
    """Partition per-class pools following the long-tail protocol.

    Per class the pool is permuted once; the leading samples become labeled,
    then unlabeled, validation and test, so partitions never overlap.
    """
    spec.validate()
    K = spec.n_classes
    if len(pools) != K:
        raise ConfigError(f"expected pools for {K} classes, got {len(pools)}")
    dims = {p.shape[1] for p in pools if p.ndim == 2}
    if len(dims) != 1:
        raise DataError(f"inconsistent feature dimensions in pools: {sorted(dims)}")
    d = dims.pop()

    counts = longtail_counts(spec)
    n_lab = labeled_counts(spec, counts)
    n_unl = unlabeled_counts(spec, counts, n_lab)

    parts = {name: ([], [], []) for name in PARTITIONS}
    for k in range(K):
        sizes = {
            "labeled": n_lab[k],
            "unlabeled": n_unl[k],
            "validation": spec.val_per_class,
            "test": spec.test_per_class,
        }
        need = sum(sizes.values())
        available = len(pools[k])
        if available < need:
            raise ConfigError(
                f"class {k + 1}: pool has {available} samples, split needs {need}"
            )
        perm = rng.permutation(available)
        start = 0
        for name in PARTITIONS:
            idx = perm[start : start + sizes[name]]
            start += sizes[name]
            features, labels, origins = parts[name]
            features.append(pools[k][idx])
            labels.append(np.full(len(idx), k, dtype=np.int64))
            origins.append(np.stack([np.full(len(idx), k), idx], axis=1))

    def build(name, cls):
        features, labels, origins = parts[name]
        return cls(
            _stack(features, d),
            np.concatenate(labels),
            np.concatenate(origins, axis=0),
        )

    split = DatasetSplit(
        spec=spec,
        labeled=build("labeled", Partition),
        unlabeled=build("unlabeled", UnlabeledPartition),
        validation=build("validation", Partition),
        test=build("test", Partition),
    )
    logging.debug(
        "split: labeled=%s unlabeled=%s",
        split.class_counts_labeled.as_tuple(),
        split.class_counts_unlabeled.as_tuple(),
    )
    return split


def gaussian_centers(K: int, d: int, separation: float) -> np.ndarray:
    """Class means: scaled unit vectors when ``K <= d`` (a regular simplex),
    otherwise evenly spaced on a circle in the first two coordinates."""
    centers = np.zeros((K, d))
    if K <= d:
        centers[np.arange(K), np.arange(K)] = separation
    else:
        angles = 2 * np.pi * np.arange(K) / K
        centers[:, 0] = separation * np.cos(angles)
        centers[:, 1] = separation * np.sin(angles)
    return centers


def synth_gaussian_mixture(
    K: int, d: int, separation: float, per_class: int, rng: np.random.Generator
) -> Pools:
    """Isotropic unit-variance Gaussian blob per class."""
    if K < 2 or d < 2:
        raise ArgumentError(f"need K >= 2 and d >= 2, got K={K}, d={d}")
    if separation < 0 or per_class < 0:
        raise ArgumentError("separation and per_class must be >= 0")
    centers = gaussian_centers(K, d, separation)
    return [centers[k] + rng.standard_normal((per_class, d)) for k in range(K)]


def load_csv(
    path: str,
    feature_columns: Sequence[str] = None,
    label_column: str = "label",
    n_classes: int = None,
) -> Pools:
    """Read a comma separated UTF-8 file into per-class pools.

    Labels in the file are 1-based integers. Errors name the file line.
    """
    if not os.path.isfile(path):
        raise DataError(f"{path}: file not found")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding=ENCODING)
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: empty file, expected a header row")
    except (UnicodeDecodeError, pd.errors.ParserError) as exc:
        raise DataError(f"{path}: {exc}")

    if label_column not in df.columns:
        raise DataError(f"{path}:1: missing label column {label_column!r}")
    feature_columns = list(
        feature_columns or [c for c in df.columns if c != label_column]
    )
    missing = [c for c in feature_columns if c not in df.columns]
    if missing:
        raise DataError(f"{path}:1: missing feature columns {missing}")
    if not feature_columns:
        raise DataError(f"{path}:1: no feature columns")
    d = len(feature_columns)

    if df.empty:
        logging.warning("%s: header only, no samples", path)
        return [np.zeros((0, d)) for _ in range(n_classes or 0)]

    # header is line 1
    def line(row: int) -> int:
        return row + 2

    values = df[feature_columns].apply(pd.to_numeric, errors="coerce")
    bad = ~np.isfinite(values.to_numpy(dtype=np.float64))
    if bad.any():
        row, col = map(int, np.argwhere(bad)[0])
        column = feature_columns[col]
        raise DataError(
            f"{path}:{line(row)}: column {column!r}: "
            f"not a number: {df[column].iloc[row]!r}"
        )

    raw_labels = df[label_column]
    labels = pd.to_numeric(raw_labels, errors="coerce").to_numpy(dtype=np.float64)
    invalid = ~np.isfinite(labels) | (labels != np.round(labels)) | (labels < 1)
    if n_classes is not None:
        invalid |= labels > n_classes
    if invalid.any():
        row = int(np.argmax(invalid))
        raise DataError(f"{path}:{line(row)}: unknown label {raw_labels.iloc[row]!r}")

    labels = labels.astype(np.int64) - 1
    K = n_classes or int(labels.max()) + 1
    X = values.to_numpy(dtype=np.float64)
    pools = [X[labels == k] for k in range(K)]
    for k, pool in enumerate(pools):
        if not len(pool):
            logging.warning("%s: no samples of class %d", path, k + 1)
    logging.info("%s: %d samples, %d classes, %d features", path, len(X), K, d)
    return pools


def split_manifest(split: DatasetSplit) -> dict:
    K = split.n_classes
    manifest = split.spec.as_dict()
    manifest.update(
        {
            "n_features": split.n_features,
            "feature_names": split.feature_names,
            "counts_total": split.class_counts_total.as_tuple(),
            "counts_labeled": split.class_counts_labeled.as_tuple(),
            "counts_unlabeled": split.class_counts_unlabeled.as_tuple(),
            "counts_validation": split.validation.class_counts(K).as_tuple(),
            "counts_test": split.test.class_counts(K).as_tuple(),
        }
    )
    return manifest


def _partition_frame(name: str, partition, feature_names: List[str]) -> pd.DataFrame:
    truth = partition.ground_truth() if name == "unlabeled" else partition
    df = pd.DataFrame(truth.features, columns=feature_names)
    df.insert(0, "true_label", truth.labels + 1)
    df.insert(0, "label", "" if name == "unlabeled" else truth.labels + 1)
    df.insert(0, "partition", name)
    return df


def export_split(split: DatasetSplit, storage: Storage) -> List[str]:
    """One CSV per partition plus the split manifest."""
    written = []
    for name in PARTITIONS:
        df = _partition_frame(name, getattr(split, name), split.feature_names)
        columns = ["partition", "label", "true_label"] + split.feature_names
        written.append(storage.write_csv(f"{name}.csv", df, columns=columns))
    written.append(storage.write_key_values(SPLIT_MANIFEST_FILE, split_manifest(split)))
    return written


def load_split(storage: Storage) -> DatasetSplit:
    """Read a split written by :func:`export_split`."""
    manifest = storage.read_key_values(SPLIT_MANIFEST_FILE)
    try:
        spec = SplitSpec(
            n_classes=int(manifest["n_classes"]),
            n_max=int(manifest["n_max"]),
            gamma=float(manifest["gamma"]),
            beta=float(manifest["beta"]),
            val_per_class=int(manifest["val_per_class"]),
            test_per_class=int(manifest["test_per_class"]),
            seed=int(manifest["seed"]),
            unlabeled_profile=manifest.get("unlabeled_profile", "matched"),
        )
        feature_names = manifest["feature_names"].split(",")
    except (KeyError, ValueError) as exc:
        raise DataError(f"{storage.path(SPLIT_MANIFEST_FILE)}: {exc}")

    parts = {}
    for name in PARTITIONS:
        df = storage.read_csv(f"{name}.csv", ["true_label"] + feature_names)
        features = df[feature_names].to_numpy(dtype=np.float64)
        features = features.reshape(-1, len(feature_names))
        labels = df["true_label"].to_numpy(dtype=np.int64) - 1
        cls = UnlabeledPartition if name == "unlabeled" else Partition
        parts[name] = cls(features, labels)
    split = DatasetSplit(spec=spec, feature_names=feature_names, **parts)
    expected = parse_ints(manifest.get("counts_labeled", ""))
    if expected and list(split.class_counts_labeled) != expected:
        raise DataError(f"{storage}: labeled counts do not match the manifest")
    return split


class AbstractDataSource(RegistryAbstractBase):
    """Where the samples of an experiment come from."""

    _subclasses = {}  # overwrite from BaseClass
    kind = None

    @classmethod
    def _is_class_for(cls, kind: str) -> bool:
        return cls.kind is not None and cls.kind == kind

    @classmethod
    def get_instance(cls, kind: str, **kwargs) -> "AbstractDataSource":
        subclass = cls._get_class(kind=kind)
        logging.debug("Using class %s for %s", subclass.__name__, kind)
        return subclass(**kwargs)

    @abc.abstractmethod
    def build_split(self, spec: SplitSpec) -> DatasetSplit: ...


class SyntheticSource(AbstractDataSource):
    kind = "synthetic"

    def __init__(self, n_features: int = 20, separation: float = 3.0, **kwargs) -> None:
        self.n_features = n_features
        self.separation = separation

    def build_split(self, spec: SplitSpec) -> DatasetSplit:
        per_class = int(required_pool_sizes(spec).counts.max())
        pools = synth_gaussian_mixture(
            spec.n_classes,
            self.n_features,
            self.separation,
            per_class,
            make_rng(spec.seed, STREAM_POOL),
        )
        return make_split(pools, spec, make_rng(spec.seed, STREAM_SPLIT))


class CsvSource(AbstractDataSource):
    kind = "csv"

    def __init__(
        self,
        path: str,
        label_column: str = "label",
        feature_columns: Sequence[str] = (),
        **kwargs,
    ) -> None:
        self.path = path
        self.label_column = label_column
        self.feature_columns = list(feature_columns)
        self._pools = None

    def build_split(self, spec: SplitSpec) -> DatasetSplit:
        if self._pools is None:
            self._pools = load_csv(
                self.path,
                feature_columns=self.feature_columns or None,
                label_column=self.label_column,
                n_classes=spec.n_classes,
            )
        split = make_split(self._pools, spec, make_rng(spec.seed, STREAM_SPLIT))
        header = pd.read_csv(self.path, nrows=0, encoding=ENCODING).columns
        split.feature_names = self.feature_columns or [
            c for c in header if c != self.label_column
        ]
        return split


class SplitDirSource(AbstractDataSource):
    """A split written earlier by ``propssl split``, used as is."""

    kind = "split"

    def __init__(self, path: str, **kwargs) -> None:
        self.path = path

    def build_split(self, spec: SplitSpec) -> DatasetSplit:
        split = load_split(Storage(self.path))
        if split.n_classes != spec.n_classes:
            raise ConfigError(
                f"{self.path}: split has {split.n_classes} classes, "
                f"config says {spec.n_classes}"
            )
        return split


def parse_cell(text: str, base: SplitSpec) -> SplitSpec:
    """``gamma:beta[:n_max]`` applied on top of ``base``."""
    values = parse_floats(text.replace(":", ","))
    if len(values) not in (2, 3):
        raise ConfigError(f"cell must be gamma:beta[:n_max], got {text!r}")
    changes = {"gamma": values[0], "beta": values[1]}
    if len(values) == 3:
        changes["n_max"] = int(values[2])
    return SplitSpec(**{**base.as_dict(), **changes}).validate()
