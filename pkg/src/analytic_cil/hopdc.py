"""Training-free drift compensation by associative (Hopfield) retrieval.

Anchors embedded under the old and the new representation give drift samples
``D = F_new - F_old``. For pseudo-features drawn from an old class Gaussian,
the drift is read out as a top-k softmax attention over normalized anchor
keys, added to the samples, and the class moments are re-estimated.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import rng as rng_mod
from .errors import DimensionError
from .linalg import psd_factor
from .stats import FeatureMatrix, GaussianClassStats, StatsRegistry, reestimate_from_samples


@dataclass(frozen=True)
class HopdcConfig:
    tau: float = 0.05
    top_k: int = 400
    m_samples: int = 256
    seed: int = 0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.m_samples < 2:
            raise ValueError(f"m_samples must be >= 2, got {self.m_samples}")


@dataclass
class AnchorBank:
    F_old: np.ndarray
    F_new: np.ndarray
    D: np.ndarray
    K: np.ndarray

    @property
    def n_anchors(self) -> int:
        return self.K.shape[0]

    @property
    def dim(self) -> int:
        return self.K.shape[1]


def _as_array(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, FeatureMatrix) else x, dtype=np.float64)


def l2_normalize_rows(X: np.ndarray, what: str = "row") -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"{what} {int(zero[0])} has zero norm and cannot be normalized")
    return X / norms[:, None]


def build_anchor_bank(F_old, F_new, supplement_old=None, supplement_new=None) -> AnchorBank:
    """Drift matrix and unit-norm keys from paired anchor embeddings.

    Optional supplement anchors (e.g. current-task samples seen through both
    representations) are appended before the keys are normalized.
    """
    F_old, F_new = _as_array(F_old), _as_array(F_new)
    if supplement_old is not None or supplement_new is not None:
        if supplement_old is None or supplement_new is None:
            raise ValueError("supplement anchors need both old and new embeddings")
        F_old = np.vstack([F_old, _as_array(supplement_old)])
        F_new = np.vstack([F_new, _as_array(supplement_new)])
    if F_old.ndim != 2 or F_old.shape != F_new.shape:
        raise DimensionError(f"anchor shapes differ: {F_old.shape} vs {F_new.shape}")
    if F_old.shape[0] == 0:
        raise ValueError("anchor bank needs at least one anchor")
    K = l2_normalize_rows(F_old, "anchor row")
    return AnchorBank(F_old=F_old, F_new=F_new, D=F_new - F_old, K=K)


def topk_softmax(scores: np.ndarray, tau: float, k: int) -> np.ndarray:
    """Row-wise softmax of ``scores / tau`` restricted to the ``k`` largest entries.

    Ties at the cut are resolved in favour of the lower column index. The
    result is dense with exact zeros outside the kept entries.
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    S = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    M, N = S.shape
    k = min(k, N)
    # k-th largest value per row; entries above it are kept, ties at it are
    # filled left to right
    cut = -np.partition(-S, k - 1, axis=1)[:, k - 1:k]
    above = S > cut
    at_cut = S == cut
    room = k - above.sum(axis=1, keepdims=True)
    keep = above | (at_cut & (np.cumsum(at_cut, axis=1) <= room))
    top = np.where(keep, (S - S.max(axis=1, keepdims=True)) / tau, -np.inf)
    e = np.exp(top)
    return e / e.sum(axis=1, keepdims=True)


def estimate_drift(bank: AnchorBank, Z, cfg: HopdcConfig) -> np.ndarray:
    Z = np.atleast_2d(_as_array(Z))
    if Z.shape[1] != bank.dim:
        raise DimensionError(f"pseudo-features have {Z.shape[1]} columns, anchors {bank.dim}")
    Q = l2_normalize_rows(Z, "pseudo-feature row")
    weights = topk_softmax(Q @ bank.K.T, cfg.tau, cfg.top_k)
    return weights @ bank.D


def sample_gaussian(mu: np.ndarray, sigma: np.ndarray, m: int, gen: np.random.Generator) -> np.ndarray:
    L = psd_factor(sigma)
    return mu + gen.standard_normal((m, mu.shape[0])) @ L.T


def compensate_class(
    stats: GaussianClassStats,
    bank: AnchorBank,
    cfg: HopdcConfig,
    gen: np.random.Generator | None = None,
) -> GaussianClassStats:
    """Resample the class, shift the samples by their retrieved drift, re-estimate."""
    if gen is None:
        gen = rng_mod.stream(cfg.seed, f"hopdc/{stats.class_id}")
    Z = sample_gaussian(stats.mu, stats.sigma, cfg.m_samples, gen)
    Z_cal = Z + estimate_drift(bank, Z, cfg)
    out = reestimate_from_samples(Z_cal, class_id=stats.class_id)
    out.count = stats.count
    return out


def compensate_registry(
    registry: StatsRegistry, bank: AnchorBank, cfg: HopdcConfig, class_ids=None
) -> StatsRegistry:
    """Return a copy of ``registry`` with the given (default: all) classes compensated."""
    out = registry.copy()
    for c in registry.class_ids if class_ids is None else class_ids:
        out.set_stats(compensate_class(registry[c], bank, cfg))
    return out


def _lse(v: np.ndarray) -> float:
    m = float(np.max(v))
    return m + math.log(float(np.sum(np.exp(v - m))))


def hopfield_energy(z: np.ndarray, K: np.ndarray, beta: float) -> float:
    """``-lse(beta, K z)/beta + z.z/2 + max_i |k_i|^2 / 2``."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    z = np.asarray(z, dtype=np.float64)
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    return (
        -_lse(beta * (K @ z)) / beta
        + 0.5 * float(z @ z)
        + 0.5 * float(np.max(np.einsum("ij,ij->i", K, K)))
    )


def hopfield_update(z: np.ndarray, K: np.ndarray, beta: float) -> np.ndarray:
    """One retrieval step ``softmax(beta K z)^T K``."""
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    p = topk_softmax((K @ z)[None, :], 1.0 / beta, K.shape[0])[0]
    return p @ K


@dataclass
class BoundReport:
    n_queries: int
    tau: float
    k: int
    lipschitz: float
    max_error: float
    violations_general: int
    violations_temperature: int
    min_slack_general: float
    min_slack_temperature: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.violations_general == 0 and self.violations_temperature == 0

    def to_dict(self) -> dict:
        return asdict(self)


def _pairwise_distances(Z: np.ndarray, K: np.ndarray) -> np.ndarray:
    # explicit differences: the 2 - 2 k.z shortcut loses precision for near-identical pairs
    out = np.empty((Z.shape[0], K.shape[0]))
    step = max(1, 4_000_000 // max(1, K.size))
    for lo in range(0, Z.shape[0], step):
        diff = Z[lo:lo + step, None, :] - K[None, :, :]
        out[lo:lo + step] = np.sqrt(np.einsum("mnd,mnd->mn", diff, diff))
    return out


def verify_error_bound(
    bank: AnchorBank,
    drift_fn: Callable[[np.ndarray], np.ndarray],
    lipschitz: float,
    queries: np.ndarray,
    cfg: HopdcConfig,
    tol: float = 1e-12,
) -> BoundReport:
    """Check the attention-weighted and temperature-dependent error bounds.

    Keys and queries must be unit-norm and the bank must satisfy
    ``D[i] = drift_fn(K[i])``. For every query ``z`` with attention weights
    ``p`` (top-k softmax at temperature tau):

        |est(z) - drift(z)| <= L * sum_i p_i |k_i - z|
        |est(z) - drift(z)| <= L * (min_i |k_i - z| + sqrt(2 tau log k))

    A violation is an excess beyond ``tol * (1 + |drift(z)|)``, which only
    absorbs floating-point rounding.
    """
    if not np.allclose(np.linalg.norm(bank.F_old, axis=1), 1.0, atol=1e-9):
        raise ValueError("error-bound check needs unit-norm anchor features")
    Z = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if not np.allclose(np.linalg.norm(Z, axis=1), 1.0, atol=1e-9):
        raise ValueError("error-bound check needs unit-norm queries")
    k = min(cfg.top_k, bank.n_anchors)
    P = topk_softmax(Z @ bank.K.T, cfg.tau, k)
    est = P @ bank.D
    truth = np.asarray(drift_fn(Z), dtype=np.float64)
    err = np.linalg.norm(est - truth, axis=1)

    dist = _pairwise_distances(Z, bank.K)
    general = lipschitz * np.sum(P * dist, axis=1)
    selected_min = np.where(P > 0, dist, np.inf).min(axis=1)
    temperature = lipschitz * (selected_min + math.sqrt(2 * cfg.tau * math.log(k)))

    allow = tol * (1.0 + np.linalg.norm(truth, axis=1))
    slack_g = general - err
    slack_t = temperature - err
    return BoundReport(
        n_queries=Z.shape[0],
        tau=cfg.tau,
        k=k,
        lipschitz=float(lipschitz),
        max_error=float(err.max()),
        violations_general=int(np.sum(slack_g < -allow)),
        violations_temperature=int(np.sum(slack_t < -allow)),
        min_slack_general=float(slack_g.min()),
        min_slack_temperature=float(slack_t.min()),
        tolerance=tol,
    )


DRIFT_ORACLES = ("constant", "linear", "tanh")


def drift_oracle(family: str, dim: int, seed: int = 0, magnitude: float = 1.0):
    """Synthetic drift function with an exact Lipschitz constant.

    ``constant``: ``z -> v`` (L = 0); ``linear``: ``z -> G z`` (L = |G|_2);
    ``tanh``: ``z -> v + eps * tanh(W z)`` (L = eps * |W|_2). Returns
    ``(fn, L)`` where ``fn`` maps rows to rows.
    """
    if family not in DRIFT_ORACLES:
        raise ValueError(f"drift family must be one of {DRIFT_ORACLES}, got {family!r}")
    gen = rng_mod.stream(seed, f"drift-oracle/{family}/{dim}")
    v = gen.standard_normal(dim)
    v *= magnitude / np.linalg.norm(v)
    if family == "constant":
        return (lambda Z: np.broadcast_to(v, np.atleast_2d(Z).shape).copy()), 0.0
    M = gen.standard_normal((dim, dim)) / math.sqrt(dim)
    if family == "linear":
        G = magnitude * M
        return (lambda Z: np.atleast_2d(Z) @ G.T), float(np.linalg.norm(G, 2))
    eps = 0.5 * magnitude
    return (lambda Z: v + eps * np.tanh(np.atleast_2d(Z) @ M.T)), float(eps * np.linalg.norm(M, 2))


def random_unit_rows(n: int, dim: int, gen: np.random.Generator) -> np.ndarray:
    return l2_normalize_rows(gen.standard_normal((n, dim)))
