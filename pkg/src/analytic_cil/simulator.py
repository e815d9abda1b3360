"""Synthetic class-incremental streams with known representation drift.

Classes live in a fixed latent space as Gaussians. The "backbone" at task t
is the composition of the drift maps applied at each earlier task boundary,
so features of every input (training samples, test samples, anchors) are
obtained by pushing latent draws through the current map. This stands in for
fine-tuning a feature extractor between tasks.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.stats import norm

from . import rng as rng_mod
from .classifiers import RegularizationParams, SgdConfig, build_lda, build_rgda, train_sgd_baseline
from .hopdc import HopdcConfig, build_anchor_bank, compensate_registry
from .lr_rgda import FactorCache, build_lr_rgda
from .stats import StatsRegistry

DRIFT_KINDS = ("identity", "translation", "linear", "nonlinear")
CLASSIFIER_KINDS = ("lda", "rgda", "lrrgda", "sgd")


@dataclass(frozen=True)
class DriftMap:
    """``x -> A x + v + eps * tanh(W x)`` with declared Lipschitz constants.

    ``lipschitz`` bounds the map itself, ``drift_lipschitz`` bounds the
    displacement ``x -> map(x) - x``.
    """

    kind: str
    A: np.ndarray | None = None
    v: np.ndarray | None = None
    W: np.ndarray | None = None
    eps: float = 0.0

    def __call__(self, X: np.ndarray) -> np.ndarray:
        Y = np.array(X, dtype=np.float64, copy=True)
        if self.A is not None:
            Y = Y @ self.A.T
        if self.v is not None:
            Y = Y + self.v
        if self.W is not None and self.eps:
            Y = Y + self.eps * np.tanh(X @ self.W.T)
        return Y

    def displacement(self, X: np.ndarray) -> np.ndarray:
        return self(X) - X

    @property
    def lipschitz(self) -> float:
        base = np.linalg.norm(self.A, 2) if self.A is not None else 1.0
        extra = self.eps * np.linalg.norm(self.W, 2) if self.W is not None else 0.0
        return float(base + extra)

    @property
    def drift_lipschitz(self) -> float:
        d = None
        for arr in (self.A, self.W):
            if arr is not None:
                d = arr.shape[1]
        if d is None:
            return 0.0
        lin = np.linalg.norm(self.A - np.eye(d), 2) if self.A is not None else 0.0
        extra = self.eps * np.linalg.norm(self.W, 2) if self.W is not None else 0.0
        return float(lin + extra)


def identity_map() -> DriftMap:
    return DriftMap("identity")


@dataclass(frozen=True)
class StreamSpec:
    """Parameters of a synthetic stream (also the schema of the TOML spec file)."""

    n_tasks: int = 10
    classes_per_task: int = 10
    dim: int = 64
    n_train: int = 200
    n_test: int = 500
    # class means: "sphere" (random directions at mean_radius) or "line"
    # (evenly spaced by mean_spacing along the first axis, class j -> task j % n_tasks)
    mean_layout: str = "sphere"
    mean_radius: float = 6.0
    mean_spacing: float = 4.0
    # covariance = R diag(spectrum) R^T, spectrum decays past effective_rank
    effective_rank: int = 8
    cov_scale: float = 1.0
    cov_floor: float = 0.05
    heteroscedastic: bool = True
    drift: str = "identity"
    drift_magnitude: float = 1.0
    drift_eps: float = 0.2
    # anchors: n_anchors unlabeled points; anchor_overlap of them drawn from the
    # class mixture, the rest from a broad background Gaussian
    n_anchors: int = 1024
    anchor_overlap: float = 0.5
    background_scale: float = 6.0
    supplement_anchors: bool = True

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.n_tasks < 1 or self.classes_per_task < 1:
            raise ValueError("need at least one task and one class per task")
        if self.n_train < 2 or self.n_test < 1:
            raise ValueError("n_train must be >= 2 and n_test >= 1")
        if self.mean_layout not in ("sphere", "line"):
            raise ValueError(f"unknown mean_layout {self.mean_layout!r}")
        if self.drift not in DRIFT_KINDS:
            raise ValueError(f"drift must be one of {DRIFT_KINDS}, got {self.drift!r}")
        if not 1 <= self.effective_rank <= self.dim:
            raise ValueError("effective_rank must lie in [1, dim]")
        if not 0.0 <= self.anchor_overlap <= 1.0:
            raise ValueError("anchor_overlap must lie in [0, 1]")
        if self.n_anchors < 1:
            raise ValueError("n_anchors must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "StreamSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown stream spec keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TaskStream:
    spec: StreamSpec
    seed: int
    means: np.ndarray  # (n_classes, d) latent means
    covs: np.ndarray  # (n_classes, d, d) latent covariances
    task_classes: list[list[int]]
    drift_schedule: list[DriftMap]  # map applied entering task t (index 0 is identity)
    bayes_accuracy: float | None = None

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    def feature_map(self, task: int):
        """Composition of the drift maps up to and including ``task`` (0-based)."""
        maps = self.drift_schedule[: task + 1]

        def phi(X):
            for m in maps:
                X = m(X)
            return X

        return phi

    def draw_latent(self, class_id: int, n: int, purpose: str) -> np.ndarray:
        gen = rng_mod.stream(self.seed, f"{purpose}/class-{class_id}")
        L = np.linalg.cholesky(self.covs[class_id])
        return self.means[class_id] + gen.standard_normal((n, self.spec.dim)) @ L.T

    def draw_anchors(self) -> np.ndarray:
        s = self.spec
        gen = rng_mod.stream(self.seed, "anchors")
        n_mix = int(round(s.anchor_overlap * s.n_anchors))
        parts = []
        if n_mix:
            labels = gen.integers(0, self.n_classes, size=n_mix)
            eps = gen.standard_normal((n_mix, s.dim))
            Ls = np.linalg.cholesky(self.covs)
            parts.append(self.means[labels] + np.einsum("nij,nj->ni", Ls[labels], eps))
        if s.n_anchors - n_mix:
            parts.append(gen.standard_normal((s.n_anchors - n_mix, s.dim)) * s.background_scale)
        return np.vstack(parts)


def _rotation(gen: np.random.Generator, d: int) -> np.ndarray:
    Q, R = np.linalg.qr(gen.standard_normal((d, d)))
    return Q * np.sign(np.diag(R))


def _make_drift(spec: StreamSpec, gen: np.random.Generator) -> DriftMap:
    d = spec.dim
    if spec.drift == "identity":
        return identity_map()
    if spec.drift == "translation":
        direction = np.zeros(d)
        if spec.mean_layout == "line":
            direction[0] = 1.0
        else:
            direction = gen.standard_normal(d)
            direction /= np.linalg.norm(direction)
        return DriftMap("translation", v=spec.drift_magnitude * direction)
    if spec.drift == "linear":
        G = gen.standard_normal((d, d)) / math.sqrt(d)
        G *= spec.drift_magnitude * 0.1 / np.linalg.norm(G, 2)
        return DriftMap("linear", A=np.eye(d) + G)
    W = gen.standard_normal((d, d))
    W *= spec.drift_magnitude / np.linalg.norm(W, 2)
    return DriftMap("nonlinear", W=W, eps=spec.drift_eps)


def two_gaussian_bayes_accuracy(separation: float) -> float:
    """Bayes accuracy for two equiprobable Gaussians with identity covariance
    whose means are ``separation`` apart: ``Phi(separation / 2)``."""
    return float(norm.cdf(separation / 2.0))


def generate_stream(spec: StreamSpec, seed: int) -> TaskStream:
    """Deterministic stream of Gaussian classes; label spaces are disjoint across tasks."""
    if not isinstance(spec, StreamSpec):
        raise TypeError("spec must be a StreamSpec")
    d = spec.dim
    n_classes = spec.n_tasks * spec.classes_per_task
    gen = rng_mod.stream(seed, "stream-structure")

    if spec.mean_layout == "sphere":
        dirs = gen.standard_normal((n_classes, d))
        means = spec.mean_radius * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        task_classes = [
            list(range(t * spec.classes_per_task, (t + 1) * spec.classes_per_task))
            for t in range(spec.n_tasks)
        ]
    else:
        means = np.zeros((n_classes, d))
        means[:, 0] = spec.mean_spacing * (np.arange(n_classes) - (n_classes - 1) / 2)
        task_classes = [list(range(t, n_classes, spec.n_tasks)) for t in range(spec.n_tasks)]

    covs = np.empty((n_classes, d, d))
    base_R = _rotation(gen, d)
    for c in range(n_classes):
        R = _rotation(gen, d) if spec.heteroscedastic else base_R
        k = np.arange(d)
        spectrum = np.where(k < spec.effective_rank, 1.0, np.exp(-(k - spec.effective_rank + 1)))
        if spec.heteroscedastic:
            spectrum = spectrum * gen.uniform(0.5, 1.5, size=d)
        spectrum = spec.cov_scale * np.maximum(spectrum, spec.cov_floor)
        S = (R * spectrum) @ R.T
        covs[c] = 0.5 * (S + S.T)

    schedule = [identity_map()] + [_make_drift(spec, gen) for _ in range(spec.n_tasks - 1)]

    bayes = None
    if n_classes == 2 and all(np.allclose(C_, np.eye(d)) for C_ in covs):
        bayes = two_gaussian_bayes_accuracy(float(np.linalg.norm(means[0] - means[1])))
    return TaskStream(spec, seed, means, covs, task_classes, schedule, bayes)


@dataclass(frozen=True)
class PipelineConfig:
    params: RegularizationParams = field(default_factory=RegularizationParams)
    hopdc: HopdcConfig = field(default_factory=HopdcConfig)
    sgd: SgdConfig = field(default_factory=SgdConfig)
    lda_gamma: float = 0.1
    randomized_svd: bool = False


@dataclass
class RunReport:
    classifier: str
    hopdc: bool
    seed: int
    task_accuracy: list[float]
    last_accuracy: float
    inc_accuracy: float
    timing_s: dict[str, float] = field(default_factory=dict)

    def to_dict(self, include_timing: bool = False) -> dict:
        out = asdict(self)
        if not include_timing:
            out.pop("timing_s")
        return out


def build_classifier(kind: str, registry: StatsRegistry, cfg: PipelineConfig, cache: FactorCache | None = None):
    kind = kind.lower()
    if kind == "lda":
        return build_lda(registry, cfg.params, gamma=cfg.lda_gamma)
    if kind == "rgda":
        return build_rgda(registry, cfg.params)
    if kind == "lrrgda":
        return build_lr_rgda(registry, cfg.params, randomized=cfg.randomized_svd, cache=cache)
    if kind == "sgd":
        return train_sgd_baseline(registry, cfg.params, cfg.sgd)
    raise ValueError(f"classifier must be one of {CLASSIFIER_KINDS}, got {kind!r}")


def run_pipeline(
    stream: TaskStream,
    classifier_kind: str = "lrrgda",
    use_hopdc: bool = True,
    cfg: PipelineConfig | None = None,
) -> RunReport:
    """Run the two-stage loop over every task and evaluate on all seen classes.

    Per task: move to the new representation, compensate old statistics
    (if enabled), add statistics of the new classes, refresh the anchor
    embeddings, rebuild the classifier and score the test sets of all
    classes seen so far.
    """
    cfg = cfg or PipelineConfig()
    if classifier_kind.lower() not in CLASSIFIER_KINDS:
        raise ValueError(f"classifier must be one of {CLASSIFIER_KINDS}, got {classifier_kind!r}")
    spec = stream.spec
    registry = StatsRegistry(spec.dim)
    anchors = stream.draw_anchors()
    F_old = anchors.copy()
    cache = FactorCache()
    seen: list[int] = []
    accs: list[float] = []
    timing = {"compensate": 0.0, "build": 0.0, "evaluate": 0.0}

    for t in range(spec.n_tasks):
        phi = stream.feature_map(t)
        phi_prev = stream.feature_map(t - 1) if t > 0 else None
        new_classes = stream.task_classes[t]
        train_latent = {c: stream.draw_latent(c, spec.n_train, "train") for c in new_classes}

        if t > 0 and use_hopdc and len(registry):
            t0 = time.perf_counter()
            sup_old = sup_new = None
            if spec.supplement_anchors:
                lat = np.vstack([train_latent[c] for c in new_classes])
                sup_old, sup_new = phi_prev(lat), phi(lat)
            bank = build_anchor_bank(F_old, phi(anchors), sup_old, sup_new)
            hcfg = HopdcConfig(
                tau=cfg.hopdc.tau,
                top_k=cfg.hopdc.top_k,
                m_samples=cfg.hopdc.m_samples,
                seed=(stream.seed * 1_000_003 + cfg.hopdc.seed + t) % 2**64,
            )
            registry = compensate_registry(registry, bank, hcfg)
            timing["compensate"] += time.perf_counter() - t0

        for c in new_classes:
            registry.update(phi(train_latent[c]), np.full(spec.n_train, c))
        seen.extend(new_classes)
        F_old = phi(anchors)

        t0 = time.perf_counter()
        clf = build_classifier(classifier_kind, registry, cfg, cache)
        timing["build"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        correct = 0
        total = 0
        for c in seen:
            X = phi(stream.draw_latent(c, spec.n_test, "test"))
            correct += int(np.sum(clf.predict(X) == c))
            total += X.shape[0]
        timing["evaluate"] += time.perf_counter() - t0
        accs.append(correct / total)

    return RunReport(
        classifier=classifier_kind.lower(),
        hopdc=bool(use_hopdc),
        seed=stream.seed,
        task_accuracy=accs,
        last_accuracy=accs[-1],
        inc_accuracy=float(np.mean(accs)),
        timing_s=timing,
    )


def simulate(
    spec: StreamSpec,
    classifier_kind: str = "lrrgda",
    use_hopdc: bool = True,
    seeds: int | list[int] = 3,
    cfg: PipelineConfig | None = None,
    base_seed: int = 0,
    include_timing: bool = False,
) -> dict:
    """Run the pipeline once per seed and summarize mean and std of Last / Inc."""
    seed_list = list(range(base_seed, base_seed + seeds)) if isinstance(seeds, int) else list(seeds)
    runs = [run_pipeline(generate_stream(spec, s), classifier_kind, use_hopdc, cfg) for s in seed_list]
    last = np.array([r.last_accuracy for r in runs])
    inc = np.array([r.inc_accuracy for r in runs])
    return {
        "spec": asdict(spec),
        "classifier": classifier_kind.lower(),
        "hopdc": bool(use_hopdc),
        "seeds": seed_list,
        "runs": [r.to_dict(include_timing) for r in runs],
        "last_mean": float(last.mean()),
        "last_std": float(last.std()),
        "inc_mean": float(inc.mean()),
        "inc_std": float(inc.std()),
    }


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=False) + "\n"
