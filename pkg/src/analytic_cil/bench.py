"""Construction time, storage and scoring throughput across (kind, C, d, r).

Class statistics are synthetic and seeded. Each class covariance is a
low-rank-plus-ridge matrix generated on demand, so the sweep never holds
more than ``max_block_bytes`` of per-class matrices at once. RGDA, whose
precision matrices grow as ``C*d^2``, is built and scored one class block at
a time and the block timings are summed.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
import time
from contextlib import nullcontext
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import rng as rng_mod
from .classifiers import (
    RegularizationParams,
    SgdConfig,
    build_rgda,
    lda_from_shared_covariance,
    train_sgd_baseline,
)
from .formats import storage_layout
from .linalg import FlopCounter
from .lr_rgda import build_base, build_lr_rgda, concat_classifiers
from .stats import GaussianClassStats

logger = logging.getLogger(__name__)

KINDS = ("LDA", "SGD", "RGDA", "LRRGDA")


@dataclass
class BenchResult:
    classifier_kind: str
    C: int
    d: int
    r: int
    construct_ms: float
    per_sample_us: float
    throughput_samples_per_s: float
    param_bytes: int
    flops_per_sample: int | None = None
    skipped: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


class SyntheticStats:
    """Seeded class statistics with ``Sigma_c = G G^T / q + floor * I``.

    Exposes ``dim``, ``class_ids`` and ``iter_stats()`` so the classifier
    builders accept it directly. ``block(lo, hi)`` materializes a slice.
    """

    def __init__(self, n_classes: int, dim: int, seed: int = 0, factor_rank: int = 32, floor: float = 0.1):
        self.dim = dim
        self.seed = seed
        self.factor_rank = min(factor_rank, dim)
        self.floor = floor
        self.class_ids = list(range(n_classes))
        self.means = 3.0 * rng_mod.stream(seed, f"bench-means/{n_classes}x{dim}").standard_normal((n_classes, dim))

    def __len__(self) -> int:
        return len(self.class_ids)

    def class_stats(self, c: int) -> GaussianClassStats:
        gen = rng_mod.stream(self.seed, f"bench-cov/{self.dim}/class-{c}")
        G = gen.standard_normal((self.dim, self.factor_rank))
        sigma = G @ G.T / self.factor_rank
        sigma[np.diag_indices(self.dim)] += self.floor
        return GaussianClassStats(c, self.means[c].copy(), sigma, 100)

    def iter_stats(self):
        for c in self.class_ids:
            yield self.class_stats(c)

    def block(self, lo: int, hi: int) -> "_StatsList":
        return _StatsList(self.dim, [self.class_stats(c) for c in self.class_ids[lo:hi]])

    def average_covariance(self) -> np.ndarray:
        total = np.zeros((self.dim, self.dim))
        for st in self.iter_stats():
            total += st.sigma
        return total / len(self)


class _StatsList:
    def __init__(self, dim: int, stats: list[GaussianClassStats]):
        self.dim = dim
        self._stats = stats
        self.class_ids = [st.class_id for st in stats]

    def __len__(self) -> int:
        return len(self._stats)

    def iter_stats(self):
        return iter(self._stats)


def _timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


def _median_time(fn, warmup: int, iters: int) -> float:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(iters):
        _, dt = _timed(fn)
        samples.append(dt)
    return statistics.median(samples)


def _class_blocks(C: int, d: int, max_block_bytes: int, matrices_per_class: int = 2) -> list[tuple[int, int]]:
    per_class = 8 * d * d * matrices_per_class
    size = max(1, min(C, max_block_bytes // per_class))
    return [(lo, min(lo + size, C)) for lo in range(0, C, size)]


def _bench_one(
    kind: str,
    C: int,
    d: int,
    r: int,
    source: SyntheticStats,
    sigma_avg: np.ndarray,
    queries: np.ndarray,
    *,
    params: RegularizationParams,
    warmup: int,
    iters: int,
    construct_iters: int,
    count_flops: bool,
    max_block_bytes: int,
    sgd_config: SgdConfig,
    seed: int,
) -> BenchResult:
    n = queries.shape[0]
    counter = FlopCounter() if count_flops else None
    one = queries[:1]

    if kind == "LDA":
        ids = np.arange(C)
        shared = 0.9 * sigma_avg + 0.1 * np.eye(d)
        log_prior = params.log_priors(C)
        build = lambda: lda_from_shared_covariance(ids, source.means, shared, log_prior)  # noqa: E731
        construct = _median_time(build, 0, construct_iters)
        clf = build()
        score_t = _median_time(lambda: clf.scores(queries), warmup, iters)
        if counter is not None:
            clf.scores(one, counter)

    elif kind == "SGD":
        full = source.block(0, C)
        clf, construct = _timed(train_sgd_baseline, full, params, sgd_config, sigma_avg)
        del full
        score_t = _median_time(lambda: clf.scores(queries), warmup, iters)
        if counter is not None:
            clf.scores(one, counter)

    elif kind == "RGDA":
        construct = 0.0
        score_t = 0.0
        for lo, hi in _class_blocks(C, d, max_block_bytes):
            stats = source.block(lo, hi)
            construct += _median_time(lambda: build_rgda(stats, params, sigma_avg), 0, construct_iters)
            clf = build_rgda(stats, params, sigma_avg)
            del stats
            score_t += _median_time(lambda: clf.scores(queries), warmup, iters)
            if counter is not None:
                clf.scores(one, counter)
            del clf

    elif kind == "LRRGDA":
        params = replace(params, rank=r)
        base_t = []
        for _ in range(construct_iters):
            base, dt = _timed(build_base, sigma_avg, params)
            base_t.append(dt)
        construct = statistics.median(base_t)
        parts = []
        for lo, hi in _class_blocks(C, d, max_block_bytes, matrices_per_class=1):
            stats = source.block(lo, hi)
            part_t = []
            for _ in range(construct_iters):
                part, dt = _timed(build_lr_rgda, stats, params, randomized=True, seed=seed, base=base)
                part_t.append(dt)
            construct += statistics.median(part_t)
            # block builders assume uniform priors over the block; rescale to all C
            part.bias += math.log(len(stats)) - math.log(C)
            parts.append(part)
            del stats
        clf = concat_classifiers(parts)
        del parts
        score_t = _median_time(lambda: clf.scores(queries), warmup, iters)
        if counter is not None:
            clf.scores(one, counter)
    else:
        raise ValueError(f"unknown classifier kind {kind!r}; expected one of {KINDS}")

    per_sample_us = 1e6 * score_t / n
    return BenchResult(
        classifier_kind=kind,
        C=C,
        d=d,
        r=r if kind == "LRRGDA" else 0,
        construct_ms=1e3 * construct,
        per_sample_us=per_sample_us,
        throughput_samples_per_s=1e6 / per_sample_us if per_sample_us > 0 else math.inf,
        param_bytes=storage_layout(kind, C, d, r if kind == "LRRGDA" else 0)["total_bytes"],
        flops_per_sample=None if counter is None else counter.total,
    )


def run_bench(
    grid,
    warmup: int = 3,
    iters: int = 3,
    seed: int = 0,
    *,
    n_queries: int = 64,
    construct_iters: int | None = None,
    count_flops: bool = False,
    threads: int | None = 1,
    max_block_bytes: int = 512 * 2**20,
    params: RegularizationParams | None = None,
    sgd_config: SgdConfig | None = None,
) -> list[BenchResult]:
    """Time every ``(kind, C, d, r)`` grid point; median over ``iters`` runs.

    Statistics are generated once per ``(C, d)`` and reused across kinds.
    Grid points that run out of memory are reported with ``skipped`` set
    instead of aborting the sweep. ``threads=None`` leaves the BLAS thread
    pool untouched.
    """
    if iters < 3:
        raise ValueError(f"iters must be >= 3, got {iters}")
    if warmup < 0:
        raise ValueError("warmup must be non-negative")
    construct_iters = iters if construct_iters is None else construct_iters
    if construct_iters < 1:
        raise ValueError("construct_iters must be >= 1")
    params = params or RegularizationParams()
    sgd_config = sgd_config or SgdConfig(seed=seed)

    if threads is None:
        limiter = nullcontext()
    else:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=threads)

    grid = [(str(k).upper(), int(C), int(d), int(r)) for k, C, d, r in grid]
    results: list[BenchResult] = []
    cache: dict[tuple[int, int], tuple[SyntheticStats, np.ndarray, np.ndarray]] = {}
    with limiter:
        for kind, C, d, r in grid:
            try:
                if (C, d) not in cache:
                    cache.clear()
                    source = SyntheticStats(C, d, seed)
                    sigma_avg = source.average_covariance()
                    queries = source.means[
                        rng_mod.stream(seed, f"bench-queries/{C}x{d}").integers(0, C, n_queries)
                    ] + rng_mod.stream(seed, f"bench-noise/{C}x{d}").standard_normal((n_queries, d))
                    cache[(C, d)] = (source, sigma_avg, queries)
                source, sigma_avg, queries = cache[(C, d)]
                res = _bench_one(
                    kind, C, d, r, source, sigma_avg, queries,
                    params=params, warmup=warmup, iters=iters, construct_iters=construct_iters,
                    count_flops=count_flops, max_block_bytes=max_block_bytes,
                    sgd_config=sgd_config, seed=seed,
                )
            except MemoryError as exc:
                cache.clear()
                logger.warning("skipping %s C=%d d=%d r=%d: out of memory", kind, C, d, r)
                res = BenchResult(kind, C, d, r, 0.0, 0.0, 0.0,
                                  storage_layout(kind, C, d, r)["total_bytes"],
                                  skipped=f"allocation failed: {exc or 'MemoryError'}")
            results.append(res)
    return results


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])


_COLUMNS = [f.name for f in fields(BenchResult)]


def results_csv(results: list[BenchResult]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for res in results:
        writer.writerow({k: ("" if v is None else v) for k, v in res.to_dict().items()})
    return buf.getvalue()


def results_json(results: list[BenchResult]) -> str:
    return json.dumps([r.to_dict() for r in results], indent=2)


def results_gnuplot(results: list[BenchResult]) -> str:
    """Whitespace table of classes vs log10 throughput, one column per (kind, r)."""
    series: dict[str, dict[int, float]] = {}
    for res in results:
        if res.skipped or res.throughput_samples_per_s <= 0:
            continue
        label = f"{res.classifier_kind}_d{res.d}" + (f"_r{res.r}" if res.classifier_kind == "LRRGDA" else "")
        series.setdefault(label, {})[res.C] = math.log10(res.throughput_samples_per_s)
    labels = sorted(series)
    classes = sorted({C for s in series.values() for C in s})
    lines = ["# classes " + " ".join(labels)]
    for C in classes:
        cells = [f"{series[lab][C]:.6f}" if C in series[lab] else "NaN" for lab in labels]
        lines.append(" ".join([str(C)] + cells))
    return "\n".join(lines) + "\n"
