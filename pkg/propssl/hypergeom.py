"""Exact multivariate hypergeometric distribution.

A population is a vector of per-class counts. Drawing ``n`` items without
replacement gives per-class counts that follow the multivariate
hypergeometric distribution; :func:`sample` draws them exactly by
conditioning class after class on what is left.
"""

import itertools
from typing import Dict, Iterable, Iterator, Tuple

import numpy as np
from scipy.special import gammaln

from .constants import SIMPLEX_ATOL
from .exceptions import ArgumentError, ValidationError


class ClassCounts:
    """Nonnegative integer count per class.

    >>> ClassCounts([2, 2]).total()
    4
    """

    def __init__(self, counts: Iterable[int]) -> None:
        arr = np.array(list(counts) if not isinstance(counts, np.ndarray) else counts)
        if arr.ndim != 1:
            raise ValidationError(f"counts must be a vector, got shape {arr.shape}")
        if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValidationError(f"counts must be integers: {arr.tolist()}")
        arr = arr.astype(np.int64)
        if np.any(arr < 0):
            raise ValidationError(f"counts must be >= 0: {arr.tolist()}")
        arr.setflags(write=False)
        self.__counts = arr

    @property
    def counts(self) -> np.ndarray:
        return self.__counts

    def total(self) -> int:
        return int(self.__counts.sum())

    def as_tuple(self) -> Tuple[int, ...]:
        return tuple(int(c) for c in self.__counts)

    def __len__(self) -> int:
        return len(self.__counts)

    def __getitem__(self, index):
        return int(self.__counts[index])

    def __iter__(self):
        return iter(self.as_tuple())

    def __eq__(self, other) -> bool:
        if not isinstance(other, ClassCounts):
            return NotImplemented
        return self.as_tuple() == other.as_tuple()

    def __hash__(self) -> int:
        return hash(self.as_tuple())

    def __repr__(self) -> str:
        return f"ClassCounts({list(self.as_tuple())})"


class ProportionVector:
    """Point on the probability simplex.

    >>> ProportionVector.from_counts(ClassCounts([3, 1])).probs.tolist()
    [0.75, 0.25]
    """

    def __init__(self, probs: Iterable[float]) -> None:
        arr = np.array(list(probs) if not isinstance(probs, np.ndarray) else probs)
        arr = arr.astype(np.float64)
        if arr.ndim != 1 or not arr.size:
            raise ValidationError(f"proportions must be a non-empty vector: {arr}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1):
            raise ValidationError(f"proportions must lie in [0, 1]: {arr.tolist()}")
        if abs(arr.sum() - 1.0) > SIMPLEX_ATOL:
            raise ValidationError(
                f"proportions must sum to 1, got {arr.sum()!r}: {arr.tolist()}"
            )
        arr.setflags(write=False)
        self.__probs = arr

    @classmethod
    def from_counts(cls, counts: ClassCounts) -> "ProportionVector":
        total = counts.total()
        if total <= 0:
            raise ValidationError("cannot build proportions from empty counts")
        return cls(counts.counts / total)

    @classmethod
    def normalized(cls, weights: Iterable[float]) -> "ProportionVector":
        """Rescale nonnegative weights onto the simplex."""
        arr = np.asarray(list(weights), dtype=np.float64)
        total = arr.sum()
        if not total > 0:
            raise ValidationError(f"weights do not sum to a positive value: {arr}")
        return cls(arr / total)

    @property
    def probs(self) -> np.ndarray:
        return self.__probs

    def __len__(self) -> int:
        return len(self.__probs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProportionVector):
            return NotImplemented
        return np.array_equal(self.__probs, other.probs)

    def __repr__(self) -> str:
        return f"ProportionVector({self.__probs.tolist()})"


def population_from_proportions(q: ProportionVector, M: int) -> ClassCounts:
    """Integer population of size ``M`` whose composition follows ``q``.

    Largest-remainder rounding of ``M * q``: floor everything, then hand the
    leftover units to the largest fractional parts, lower class index first
    on ties.

    >>> population_from_proportions(ProportionVector([1/3, 1/3, 1/3]), 10)
    ClassCounts([4, 3, 3])
    """
    if not isinstance(q, ProportionVector):
        q = ProportionVector(q)
    if int(M) != M or M < 1:
        raise ArgumentError(f"population size must be a positive integer: {M}")
    M = int(M)
    raw = M * q.probs
    floors = np.floor(raw).astype(np.int64)
    remainder = M - int(floors.sum())
    fractions = raw - floors
    # primary key: larger fraction first, secondary: lower index
    order = np.lexsort((np.arange(len(q)), -fractions))
    counts = floors.copy()
    counts[order[: max(0, remainder)]] += 1
    return ClassCounts(counts)


def log_binom(n, k) -> np.ndarray:
    """log of the binomial coefficient via log-gamma, vectorized over ``k``."""
    n = np.asarray(n, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def _univariate_cdf(good: int, bad: int, n: int) -> Tuple[int, np.ndarray]:
    """Support start and CDF of the univariate hypergeometric distribution."""
    low = max(0, n - bad)
    high = min(n, good)
    k = np.arange(low, high + 1)
    log_pmf = log_binom(good, k) + log_binom(bad, n - k) - log_binom(good + bad, n)
    cdf = np.cumsum(np.exp(log_pmf))
    return low, cdf


def _draw_univariate(
    good: int,
    bad: int,
    n: int,
    rng: np.random.Generator,
    cache: Dict[Tuple[int, int, int], Tuple[int, np.ndarray]] = None,
) -> int:
    low = max(0, n - bad)
    high = min(n, good)
    if low == high:
        return low
    key = (good, bad, n)
    if cache is not None and key in cache:
        low, cdf = cache[key]
    else:
        low, cdf = _univariate_cdf(good, bad, n)
        if cache is not None:
            cache[key] = (low, cdf)
    # inverse CDF; scaling by the last entry absorbs rounding in the PMF sum
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    return low + min(idx, len(cdf) - 1)


def _check_draw_size(population: ClassCounts, n: int) -> int:
    if int(n) != n or n < 0:
        raise ArgumentError(f"draw size must be a nonnegative integer: {n}")
    if n > population.total():
        raise ArgumentError(
            f"cannot draw {n} items from a population of {population.total()}"
        )
    return int(n)


def _sample(
    population: ClassCounts, n: int, rng: np.random.Generator, cache=None
) -> ClassCounts:
    counts = population.counts
    result = np.zeros(len(counts), dtype=np.int64)
    remaining_total = population.total()
    remaining_n = n
    for idx in range(len(counts) - 1):
        if remaining_n == 0:
            break
        good = int(counts[idx])
        bad = remaining_total - good
        drawn = _draw_univariate(good, bad, remaining_n, rng, cache)
        result[idx] = drawn
        remaining_n -= drawn
        remaining_total = bad
    if len(counts):
        result[-1] += remaining_n
    return ClassCounts(result)


def sample(population: ClassCounts, n: int, rng: np.random.Generator) -> ClassCounts:
    """Per-class counts of ``n`` items drawn without replacement."""
    n = _check_draw_size(population, n)
    return _sample(population, n, rng)


def sample_many(
    population: ClassCounts, n: int, draws: int, rng: np.random.Generator
) -> np.ndarray:
    """``draws`` independent samples as a ``(draws, K)`` integer array.

    Consumes ``rng`` exactly like repeated calls of :func:`sample`.
    """
    n = _check_draw_size(population, n)
    cache = {}
    result = np.zeros((int(draws), len(population)), dtype=np.int64)
    for i in range(int(draws)):
        result[i] = _sample(population, n, rng, cache).counts
    return result


def pmf(population: ClassCounts, draw: ClassCounts) -> float:
    """Probability of drawing exactly ``draw`` from ``population``.

    >>> round(pmf(ClassCounts([2, 2]), ClassCounts([1, 1])), 12)
    0.666666666667
    """
    if len(population) != len(draw):
        raise ArgumentError(
            f"population has {len(population)} classes, draw has {len(draw)}"
        )
    if np.any(draw.counts > population.counts):
        raise ArgumentError(f"draw {draw} exceeds population {population}")
    log_p = np.sum(log_binom(population.counts, draw.counts)) - log_binom(
        population.total(), draw.total()
    )
    return float(np.exp(log_p))


def enumerate_draws(population: ClassCounts, n: int) -> Iterator[ClassCounts]:
    """All draws of size ``n`` that are possible from ``population``."""
    n = _check_draw_size(population, n)
    ranges = [range(0, min(c, n) + 1) for c in population]
    for combo in itertools.product(*ranges):
        if sum(combo) == n:
            yield ClassCounts(combo)


def mean_and_covariance(
    population: ClassCounts, n: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Closed-form mean vector and covariance matrix of :func:`sample`."""
    n = _check_draw_size(population, n)
    M = population.total()
    K = len(population)
    if M == 0:
        return np.zeros(K), np.zeros((K, K))
    p = population.counts / M
    mean = n * p
    if M <= 1:
        return mean, np.zeros((K, K))
    cov = n * (np.diag(p) - np.outer(p, p)) * (M - n) / (M - 1)
    return mean, cov
