"""LDA, full RGDA and an SGD-trained softmax baseline built from class statistics.

All builders accept any statistics source exposing ``dim``, ``class_ids`` and
``iter_stats()`` (a :class:`~analytic_cil.stats.StatsRegistry` or a lazy
generator such as the benchmark's synthetic source).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import rng as rng_mod
from .errors import DimensionError, NumericalError
from .linalg import FlopCounter, cholesky_inverse, psd_factor, spd_inverse
from .stats import GaussianClassStats, average_covariance

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegularizationParams:
    """Shrinkage weights for ``a1*Sigma_c + a2*Sigma_avg + a3*I`` plus rank and priors.

    ``priors`` is ordered like the sorted class ids; ``None`` means uniform.
    """

    alpha1: float = 0.2
    alpha2: float = 2.0
    alpha3: float = 0.5
    rank: int = 64
    priors: tuple[float, ...] | None = None

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "alpha3"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite non-negative number, got {v}")
        if self.alpha1 + self.alpha2 + self.alpha3 <= 0:
            raise ValueError("alpha1 + alpha2 + alpha3 must be positive")
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.priors is not None:
            p = np.asarray(self.priors, dtype=np.float64)
            if np.any(p <= 0):
                raise ValueError("priors must be strictly positive")
            if abs(p.sum() - 1.0) > 1e-12:
                raise ValueError(f"priors must sum to 1, got {p.sum()!r}")
            object.__setattr__(self, "priors", tuple(float(x) for x in p))

    def log_priors(self, n_classes: int) -> np.ndarray:
        if self.priors is None:
            return np.full(n_classes, -math.log(n_classes))
        if len(self.priors) != n_classes:
            raise DimensionError(f"{len(self.priors)} priors for {n_classes} classes")
        return np.log(np.asarray(self.priors))


@dataclass
class LinearClassifier:
    """Affine scores ``X @ W.T + b``; rows of ``W`` follow ``class_ids``.

    For LDA, ``precision`` keeps the shared inverse covariance so later
    incremental rebuilds can reuse it.
    """

    class_ids: np.ndarray
    W: np.ndarray
    b: np.ndarray
    kind: str = "LDA"
    precision: np.ndarray | None = None

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise DimensionError(f"W {self.W.shape} and b {self.b.shape} disagree")

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def scores(self, X: np.ndarray, counter: FlopCounter | None = None) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X2 = np.atleast_2d(X)
        if X2.shape[1] != self.dim:
            raise DimensionError(f"input dim {X2.shape[1]} != classifier dim {self.dim}")
        S = X2 @ self.W.T + self.b
        if counter is not None:
            C, d = self.W.shape
            counter.add("affine", X2.shape[0] * C * (d + 1))
        return S[0] if single else S

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.class_ids[np.argmax(np.atleast_2d(self.scores(X)), axis=1)]


@dataclass
class RgdaClassifier:
    class_ids: np.ndarray
    mu: np.ndarray  # (C, d)
    precision: np.ndarray  # (C, d, d)
    log_det: np.ndarray  # (C,)
    log_prior: np.ndarray  # (C,)

    @property
    def n_classes(self) -> int:
        return self.mu.shape[0]

    @property
    def dim(self) -> int:
        return self.mu.shape[1]

    def scores(self, X: np.ndarray, counter: FlopCounter | None = None) -> np.ndarray:
        return rgda_score(self, X, counter=counter)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.class_ids[np.argmax(np.atleast_2d(self.scores(X)), axis=1)]


def regularize_covariance(
    stats: GaussianClassStats | np.ndarray, sigma_avg: np.ndarray, params: RegularizationParams
) -> np.ndarray:
    sigma = stats.sigma if isinstance(stats, GaussianClassStats) else np.asarray(stats)
    if sigma.shape != sigma_avg.shape or sigma.ndim != 2:
        raise DimensionError(f"covariance shapes {sigma.shape} and {sigma_avg.shape} disagree")
    d = sigma.shape[0]
    out = params.alpha1 * sigma + params.alpha2 * sigma_avg
    out[np.diag_indices(d)] += params.alpha3
    return 0.5 * (out + out.T)


def _collect_means(source) -> tuple[np.ndarray, np.ndarray]:
    ids, mus = [], []
    for st in source.iter_stats():
        ids.append(st.class_id)
        mus.append(st.mu)
    return np.asarray(ids, dtype=np.int64), np.asarray(mus)


def lda_from_shared_covariance(
    class_ids: np.ndarray, mus: np.ndarray, shared: np.ndarray, log_prior: np.ndarray
) -> LinearClassifier:
    """Affine classifier ``w_c = S^-1 mu_c``, ``b_c = -mu_c^T S^-1 mu_c / 2 + log pi_c``."""
    try:
        P, _ = cholesky_inverse(shared)
    except np.linalg.LinAlgError:
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(shared)
        raise NumericalError(
            f"shared covariance is singular after regularization (condition number ~{cond:.3e})"
        ) from None
    W = mus @ P
    b = -0.5 * np.einsum("ij,ij->i", W, mus) + log_prior
    return LinearClassifier(np.asarray(class_ids), W, b, kind="LDA", precision=P)


def build_lda(
    registry,
    params: RegularizationParams | None = None,
    gamma: float = 0.1,
    sigma_avg: np.ndarray | None = None,
) -> LinearClassifier:
    """LDA on the spherically shrunk average covariance ``(1-gamma)*Sigma_avg + gamma*I``."""
    params = params or RegularizationParams()
    if len(registry.class_ids) < 2:
        raise ValueError("LDA needs at least two classes")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    if sigma_avg is None:
        sigma_avg = average_covariance(registry)
    ids, mus = _collect_means(registry)
    shared = (1.0 - gamma) * sigma_avg + gamma * np.eye(registry.dim)
    return lda_from_shared_covariance(ids, mus, shared, params.log_priors(len(ids)))


def build_rgda(
    registry, params: RegularizationParams | None = None, sigma_avg: np.ndarray | None = None
) -> RgdaClassifier:
    params = params or RegularizationParams()
    ids = registry.class_ids
    C, d = len(ids), registry.dim
    if C == 0:
        raise ValueError("cannot build a classifier from an empty registry")
    if sigma_avg is None:
        sigma_avg = average_covariance(registry)
    mu = np.empty((C, d))
    precision = np.empty((C, d, d))
    log_det = np.empty(C)
    for i, st in enumerate(registry.iter_stats()):
        reg = regularize_covariance(st, sigma_avg, params)
        precision[i], log_det[i], fallback = spd_inverse(reg, class_id=st.class_id)
        if fallback:
            logger.warning("class %d: Cholesky failed, used eigen-clipped inverse", st.class_id)
        if not np.isfinite(log_det[i]):
            raise NumericalError("non-finite log-determinant", st.class_id)
        mu[i] = st.mu
    return RgdaClassifier(
        np.asarray(ids, dtype=np.int64), mu, precision, log_det, params.log_priors(C)
    )


def rgda_score(clf: RgdaClassifier, x: np.ndarray, counter: FlopCounter | None = None) -> np.ndarray:
    """``-0.5*(x-mu_c)^T Lambda_c (x-mu_c) - 0.5*log det_c + log pi_c`` per class."""
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    C, d = clf.mu.shape
    if X.shape[1] != d:
        raise DimensionError(f"input dim {X.shape[1]} != classifier dim {d}")
    out = np.empty((X.shape[0], C))
    for c in range(C):
        diff = X - clf.mu[c]
        q = np.einsum("ij,ij->i", diff @ clf.precision[c], diff)
        out[:, c] = -0.5 * q - 0.5 * clf.log_det[c] + clf.log_prior[c]
    if counter is not None:
        counter.add("center", X.shape[0] * C * d)
        counter.add("quadratic", X.shape[0] * C * (d * d + d))
    return out[0] if single else out


@dataclass(frozen=True)
class SgdConfig:
    t_base: int = 5000
    steps_per_class: int = 4
    samples_per_class: int = 256
    batch_size: int = 128
    lr: float = 1e-3
    lr_min: float = 1e-4
    weight_decay: float = 1e-4
    patience: int = 100
    seed: int = 0


def train_sgd_baseline(
    registry,
    params: RegularizationParams | None = None,
    config: SgdConfig | None = None,
    sigma_avg: np.ndarray | None = None,
) -> LinearClassifier:
    """Softmax linear classifier fit to Gaussian pseudo-features with AdamW.

    Pseudo-features are drawn once from ``N(mu_c, Sigma_c^reg)``. The step
    budget is ``t_base + steps_per_class * C`` with cosine decay from ``lr``
    to ``lr_min``; training stops early when an exponential moving average of
    the minibatch loss has not improved for ``patience`` steps.
    """
    params = params or RegularizationParams()
    config = config or SgdConfig()
    ids = registry.class_ids
    C, d = len(ids), registry.dim
    if C < 2:
        raise ValueError("SGD baseline needs at least two classes")
    if sigma_avg is None:
        sigma_avg = average_covariance(registry)

    gen = rng_mod.stream(config.seed, "sgd-pseudo-features")
    m = config.samples_per_class
    X = np.empty((C * m, d))
    for i, st in enumerate(registry.iter_stats()):
        L = psd_factor(regularize_covariance(st, sigma_avg, params))
        X[i * m:(i + 1) * m] = st.mu + gen.standard_normal((m, d)) @ L.T
    y = np.repeat(np.arange(C), m)

    W = np.zeros((C, d))
    b = np.zeros(C)
    mW, vW = np.zeros_like(W), np.zeros_like(W)
    mb, vb = np.zeros_like(b), np.zeros_like(b)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    total_steps = config.t_base + config.steps_per_class * C
    batch = min(config.batch_size, X.shape[0])
    order_gen = rng_mod.stream(config.seed, "sgd-minibatches")
    perm = order_gen.permutation(X.shape[0])
    pos = 0
    ema, best, since_best = None, np.inf, 0

    for step in range(total_steps):
        if pos + batch > perm.size:
            perm = order_gen.permutation(X.shape[0])
            pos = 0
        idx = perm[pos:pos + batch]
        pos += batch
        xb, yb = X[idx], y[idx]

        logits = xb @ W.T + b
        logits -= logits.max(axis=1, keepdims=True)
        expz = np.exp(logits)
        probs = expz / expz.sum(axis=1, keepdims=True)
        loss = -np.mean(np.log(probs[np.arange(batch), yb] + 1e-300))
        if not np.isfinite(loss):
            raise NumericalError(f"SGD baseline: non-finite loss at step {step}")

        grad = probs
        grad[np.arange(batch), yb] -= 1.0
        grad /= batch
        gW = grad.T @ xb
        gb = grad.sum(axis=0)

        lr = config.lr_min + 0.5 * (config.lr - config.lr_min) * (1 + math.cos(math.pi * step / total_steps))
        t = step + 1
        W *= 1.0 - lr * config.weight_decay
        with np.errstate(over="ignore", invalid="ignore"):
            for p, g, mm, vv in ((W, gW, mW, vW), (b, gb, mb, vb)):
                mm *= beta1
                mm += (1 - beta1) * g
                vv *= beta2
                vv += (1 - beta2) * g * g
                p -= lr * (mm / (1 - beta1**t)) / (np.sqrt(vv / (1 - beta2**t)) + eps)
        if not (np.all(np.isfinite(vW)) and np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise NumericalError(f"SGD baseline: non-finite parameters or gradients at step {step}")

        ema = loss if ema is None else 0.9 * ema + 0.1 * loss
        if ema < best - 1e-6:
            best, since_best = ema, 0
        else:
            since_best += 1
            if since_best >= config.patience:
                logger.info("SGD baseline: early stop at step %d (ema loss %.4g)", step, ema)
                break

    return LinearClassifier(np.asarray(ids, dtype=np.int64), W, b, kind="SGD")
