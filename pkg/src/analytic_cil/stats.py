"""Per-class Gaussian statistics accumulated from labelled feature streams.

Each class keeps the running sums of ``f`` and ``f f^T`` (plus Neumaier
compensation terms), so batches can arrive in any order and the finalized
moments are the biased estimators

    mu    = (1/n) sum f
    Sigma = (1/n) sum f f^T - mu mu^T
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import DimensionError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-9
PSD_TOL = -1e-8


@dataclass
class FeatureMatrix:
    """Dense ``rows x cols`` float64 features with optional class labels."""

    data: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data.reshape(1, -1)
        if data.ndim != 2:
            raise DimensionError(f"feature data must be 2-D, got shape {data.shape}")
        if data.shape[1] < 1:
            raise DimensionError("feature matrix needs at least one column")
        self.data = np.ascontiguousarray(data)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (data.shape[0],):
                raise DimensionError(
                    f"labels length {labels.shape} does not match {data.shape[0]} rows"
                )
            if labels.size and (not np.issubdtype(labels.dtype, np.integer)):
                if not np.all(labels == np.round(labels)):
                    raise ValueError("labels must be integers")
            labels = labels.astype(np.int64)
            if labels.size and labels.min() < 0:
                raise ValueError("labels must be non-negative")
            self.labels = labels

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


@dataclass
class GaussianClassStats:
    class_id: int
    mu: np.ndarray
    sigma: np.ndarray
    count: int

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def degenerate(self) -> bool:
        """True for classes with fewer than two samples (zero covariance)."""
        return self.count < 2

    def check(self) -> None:
        """Validate symmetry and positive semidefiniteness of ``sigma``."""
        d = self.mu.shape[0]
        if self.sigma.shape != (d, d):
            raise DimensionError(f"sigma shape {self.sigma.shape} does not match d={d}")
        if self.count < 1:
            raise ValueError(f"class {self.class_id}: count must be >= 1")
        if np.max(np.abs(self.sigma - self.sigma.T), initial=0.0) > SYMMETRY_TOL:
            raise ValueError(f"class {self.class_id}: covariance not symmetric")
        lo = np.linalg.eigvalsh(self.sigma)[0] if d else 0.0
        if lo < PSD_TOL:
            raise ValueError(
                f"class {self.class_id}: covariance not PSD (min eigenvalue {lo:.3e})"
            )


def _neumaier_add(total: np.ndarray, comp: np.ndarray, value: np.ndarray) -> None:
    t = total + value
    big = np.abs(total) >= np.abs(value)
    comp += np.where(big, (total - t) + value, (value - t) + total)
    total[...] = t


@dataclass
class _ClassSums:
    """Running sums of ``f - shift`` and its outer products.

    ``shift`` is fixed by the first batch (its mean), which keeps the
    second-moment subtraction well conditioned for features with a large
    common offset. The finalized moments are the same biased estimators.
    """

    sum_f: np.ndarray
    sum_ff: np.ndarray
    comp_f: np.ndarray
    comp_ff: np.ndarray
    count: int = 0
    shift: np.ndarray | None = None

    @classmethod
    def zeros(cls, d: int) -> "_ClassSums":
        return cls(np.zeros(d), np.zeros((d, d)), np.zeros(d), np.zeros((d, d)))

    def add(self, X: np.ndarray) -> None:
        if self.shift is None:
            self.shift = X.mean(axis=0)
        Xc = X - self.shift
        _neumaier_add(self.sum_f, self.comp_f, Xc.sum(axis=0))
        _neumaier_add(self.sum_ff, self.comp_ff, Xc.T @ Xc)
        self.count += X.shape[0]

    def finalize(self, class_id: int) -> GaussianClassStats:
        n = self.count
        offset = (self.sum_f + self.comp_f) / n
        second = (self.sum_ff + self.comp_ff) / n
        sigma = second - np.outer(offset, offset)
        sigma = 0.5 * (sigma + sigma.T)
        mu = offset if self.shift is None else self.shift + offset
        return GaussianClassStats(class_id=class_id, mu=mu, sigma=sigma, count=n)

    def copy(self) -> "_ClassSums":
        return _ClassSums(
            self.sum_f.copy(), self.sum_ff.copy(), self.comp_f.copy(), self.comp_ff.copy(),
            self.count, None if self.shift is None else self.shift.copy(),
        )


@dataclass
class StatsRegistry:
    """Collection of per-class statistics sharing one feature dimension."""

    dim: int
    _sums: dict[int, _ClassSums] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise DimensionError(f"dim must be >= 1, got {self.dim}")

    @property
    def class_ids(self) -> list[int]:
        return sorted(self._sums)

    def __len__(self) -> int:
        return len(self._sums)

    def __contains__(self, class_id: int) -> bool:
        return class_id in self._sums

    def __getitem__(self, class_id: int) -> GaussianClassStats:
        return self._sums[class_id].finalize(class_id)

    def counts(self) -> dict[int, int]:
        return {c: self._sums[c].count for c in self.class_ids}

    def iter_stats(self) -> Iterator[GaussianClassStats]:
        for c in self.class_ids:
            yield self[c]

    def update(self, X: np.ndarray, y: np.ndarray) -> "StatsRegistry":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise DimensionError(
                f"batch has {X.shape[-1] if X.ndim else 0} columns, registry dim is {self.dim}"
            )
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (X.shape[0],):
            raise DimensionError(f"{y.shape[0]} labels for {X.shape[0]} rows")
        if X.shape[0] == 0:
            return self
        order = np.argsort(y, kind="stable")
        ys = y[order]
        classes, starts = np.unique(ys, return_index=True)
        bounds = list(starts[1:]) + [len(ys)]
        for c, lo, hi in zip(classes.tolist(), starts.tolist(), bounds):
            sums = self._sums.get(c)
            if sums is None:
                sums = self._sums[c] = _ClassSums.zeros(self.dim)
            sums.add(X[order[lo:hi]])
        for c in classes.tolist():
            if self._sums[c].count == 1:
                logger.warning("class %d has a single sample; covariance is zero", c)
        return self

    def set_stats(self, stats: GaussianClassStats) -> None:
        """Install (or replace) a class from finalized moments."""
        if stats.mu.shape != (self.dim,):
            raise DimensionError(f"stats dim {stats.mu.shape[0]} != registry dim {self.dim}")
        if stats.count < 1:
            raise ValueError("count must be >= 1")
        n = stats.count
        mu = np.asarray(stats.mu, dtype=np.float64)
        sigma = np.asarray(stats.sigma, dtype=np.float64)
        sums = _ClassSums.zeros(self.dim)
        sums.shift = mu.copy()
        sums.sum_ff[:] = n * sigma
        sums.count = n
        self._sums[stats.class_id] = sums

    def remove(self, class_id: int) -> None:
        del self._sums[class_id]

    def average_covariance(self) -> np.ndarray:
        return average_covariance(self)

    def copy(self) -> "StatsRegistry":
        out = StatsRegistry(self.dim)
        for c, s in self._sums.items():
            out._sums[c] = s.copy()
        return out


def accumulate(registry: StatsRegistry, batch: FeatureMatrix) -> StatsRegistry:
    """Fold a labelled batch into ``registry`` (in place) and return it."""
    if batch.labels is None:
        raise ValueError("accumulate requires a labelled batch")
    if batch.cols != registry.dim:
        raise DimensionError(f"batch has {batch.cols} columns, registry dim is {registry.dim}")
    return registry.update(batch.data, batch.labels)


def average_covariance(registry) -> np.ndarray:
    """Mean of the class covariances, summed one class at a time.

    Works with anything exposing ``dim`` and ``iter_stats()``.
    """
    total = np.zeros((registry.dim, registry.dim))
    comp = np.zeros_like(total)
    n = 0
    for st in registry.iter_stats():
        _neumaier_add(total, comp, st.sigma)
        n += 1
    if n == 0:
        raise ValueError("average_covariance of an empty registry")
    avg = (total + comp) / n
    return 0.5 * (avg + avg.T)


def reestimate_from_samples(samples: FeatureMatrix | np.ndarray, class_id: int = 0) -> GaussianClassStats:
    X = samples.data if isinstance(samples, FeatureMatrix) else np.asarray(samples, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"samples must be 2-D, got shape {X.shape}")
    if X.shape[0] < 2:
        raise ValueError(f"need at least 2 samples to re-estimate, got {X.shape[0]}")
    sums = _ClassSums.zeros(X.shape[1])
    sums.add(X)
    return sums.finalize(class_id)
