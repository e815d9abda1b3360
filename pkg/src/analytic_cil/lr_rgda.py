"""Low-rank factorized RGDA.

Each regularized covariance is modelled as a shared base plus a rank-r
class term,

    Sigma_c^reg ~= B + U_c U_c^T,   B = a2*Sigma_avg + a3*I,   U_c = sqrt(a1) V_c S_c^(1/2)

so ``B^-1`` is inverted once and every class only needs an ``r x r`` core
``M_c = I + U_c^T B^-1 U_c``. Scores are evaluated as an affine term plus a
quadratic correction living in r dimensions:

    g_c(x) = w_c^T x + b_c + 0.5 * u_c^T M_c^-1 u_c,    u_c = P_c (x - mu_c)

with ``w_c = B^-1 mu_c``, ``P_c = U_c^T B^-1`` and
``b_c = -0.5 mu_c^T B^-1 mu_c - 0.5 log det Sigma_c^reg + log pi_c``.
The class-independent ``-0.5 x^T B^-1 x`` is left out.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from . import rng as rng_mod
from .classifiers import RegularizationParams
from .errors import DimensionError, NumericalError
from .linalg import FlopCounter, cholesky_inverse, fix_signs, top_eigenpairs
from .stats import average_covariance

logger = logging.getLogger(__name__)

DEFAULT_BATCH = 12


@dataclass
class LrGlobal:
    B: np.ndarray
    B_inv: np.ndarray
    log_det_B: float


@dataclass
class LrClassParams:
    class_id: int
    mu: np.ndarray
    w: np.ndarray
    b: float
    P: np.ndarray
    M_inv: np.ndarray


@dataclass
class LrRgdaClassifier:
    """Frozen inference parameters, stacked over classes in ``class_ids`` order."""

    global_: LrGlobal
    class_ids: np.ndarray
    mu: np.ndarray  # (C, d)
    W: np.ndarray  # (C, d)
    bias: np.ndarray  # (C,)
    P: np.ndarray  # (C, r, d)
    M_inv: np.ndarray  # (C, r, r)
    params: RegularizationParams

    def __post_init__(self):
        # P_c mu_c, so the correction needs one projection of x per class
        self._P_mu = np.einsum("crd,cd->cr", self.P, self.mu)
        self._P_flat = self.P.reshape(-1, self.P.shape[2])

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    @property
    def rank(self) -> int:
        return self.P.shape[1]

    @property
    def classes(self) -> list[LrClassParams]:
        return [
            LrClassParams(int(c), self.mu[i], self.W[i], float(self.bias[i]), self.P[i], self.M_inv[i])
            for i, c in enumerate(self.class_ids)
        ]

    def scores(self, X: np.ndarray, counter: FlopCounter | None = None) -> np.ndarray:
        return lr_rgda_score(self, X, counter=counter)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.class_ids[np.argmax(np.atleast_2d(self.scores(X)), axis=1)]


def _spectral_factor(sigma, r, randomized, rng):
    w, V, lo = top_eigenpairs(sigma, r, randomized=randomized, rng=rng)
    top = max(float(w[0]), 1.0) if w.size else 1.0
    if lo < -1e-8 * top:
        raise NumericalError(f"covariance is not PSD (eigenvalue {lo:.3e})")
    return np.clip(w, 0.0, None), fix_signs(V)


def low_rank_factor(
    sigma_c: np.ndarray,
    alpha1: float,
    r: int,
    *,
    randomized: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """``sqrt(alpha1) * V_r * sqrt(S_r)`` from the top-r eigenpairs of ``sigma_c``."""
    sigma_c = np.asarray(sigma_c, dtype=np.float64)
    if sigma_c.ndim != 2 or sigma_c.shape[0] != sigma_c.shape[1]:
        raise DimensionError(f"covariance must be square, got {sigma_c.shape}")
    if alpha1 < 0:
        raise ValueError("alpha1 must be non-negative")
    S, V = _spectral_factor(sigma_c, r, randomized, rng)
    return np.sqrt(alpha1) * V * np.sqrt(S)


class FactorCache:
    """Keeps per-class ``(S_c, V_c)`` so unchanged covariances are not refactored.

    Entries are keyed by class id and validated against a digest of the
    covariance bytes and the requested rank; anything depending on ``B`` is
    always rebuilt.
    """

    def __init__(self):
        self._store: dict[int, tuple[bytes, int, bool, np.ndarray, np.ndarray]] = {}
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._store)

    def get(self, class_id, sigma, r, randomized, rng):
        digest = hashlib.blake2b(np.ascontiguousarray(sigma).tobytes(), digest_size=16).digest()
        hit = self._store.get(class_id)
        if hit is not None and hit[0] == digest and hit[1] == r and hit[2] == randomized:
            self.hits += 1
            return hit[3], hit[4]
        self.misses += 1
        S, V = _spectral_factor(sigma, r, randomized, rng)
        self._store[class_id] = (digest, r, randomized, S, V)
        return S, V


def core_matrix(B_inv: np.ndarray, U_tilde: np.ndarray) -> np.ndarray:
    """``M = I_r + U^T B^-1 U``."""
    r = U_tilde.shape[1]
    M = np.eye(r) + U_tilde.T @ B_inv @ U_tilde
    return 0.5 * (M + M.T)


def woodbury_inverse(B_inv: np.ndarray, U_tilde: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of ``B + U U^T`` from ``B^-1``; returns ``(inverse, M^-1)``."""
    B_inv = np.asarray(B_inv, dtype=np.float64)
    U_tilde = np.asarray(U_tilde, dtype=np.float64)
    if U_tilde.ndim != 2 or U_tilde.shape[0] != B_inv.shape[0]:
        raise DimensionError(f"U shape {U_tilde.shape} does not match B^-1 {B_inv.shape}")
    try:
        M_inv, _ = cholesky_inverse(core_matrix(B_inv, U_tilde))
    except np.linalg.LinAlgError:
        raise NumericalError("core matrix I + U^T B^-1 U is not positive definite") from None
    BU = B_inv @ U_tilde
    inv = B_inv - BU @ M_inv @ BU.T
    return 0.5 * (inv + inv.T), M_inv


def log_det_lemma(log_det_B: float, M: np.ndarray) -> float:
    """``log det(B + U U^T) = log det(M) + log det(B)``."""
    try:
        c = np.linalg.cholesky(0.5 * (M + M.T))
    except np.linalg.LinAlgError:
        raise NumericalError("core matrix is not positive definite") from None
    return 2.0 * float(np.sum(np.log(np.diag(c)))) + float(log_det_B)


def build_base(sigma_avg: np.ndarray, params: RegularizationParams) -> LrGlobal:
    """Shared base ``B = a2*Sigma_avg + a3*I`` with its inverse and log-determinant."""
    d = sigma_avg.shape[0]
    B = params.alpha2 * np.asarray(sigma_avg, dtype=np.float64)
    B[np.diag_indices(d)] += params.alpha3
    B = 0.5 * (B + B.T)
    try:
        B_inv, log_det_B = cholesky_inverse(B)
    except np.linalg.LinAlgError:
        raise NumericalError("base matrix a2*Sigma_avg + a3*I is not positive definite") from None
    return LrGlobal(B=B, B_inv=B_inv, log_det_B=log_det_B)


def concat_classifiers(parts: list[LrRgdaClassifier]) -> LrRgdaClassifier:
    """Join classifiers built over disjoint class groups with the same base."""
    first = parts[0]
    return LrRgdaClassifier(
        global_=first.global_,
        class_ids=np.concatenate([p.class_ids for p in parts]),
        mu=np.concatenate([p.mu for p in parts]),
        W=np.concatenate([p.W for p in parts]),
        bias=np.concatenate([p.bias for p in parts]),
        P=np.concatenate([p.P for p in parts]),
        M_inv=np.concatenate([p.M_inv for p in parts]),
        params=first.params,
    )


def build_lr_rgda(
    registry,
    params: RegularizationParams | None = None,
    *,
    batch_size: int = DEFAULT_BATCH,
    randomized: bool = False,
    seed: int = 0,
    sigma_avg: np.ndarray | None = None,
    cache: FactorCache | None = None,
    base: LrGlobal | None = None,
) -> LrRgdaClassifier:
    """Precompute ``(w_c, b_c, P_c, M_c^-1)`` for every class.

    Classes are processed ``batch_size`` at a time so one GEMM against
    ``B^-1`` covers the whole batch. ``rank`` larger than the feature
    dimension is clamped to it. Passing ``base`` (from :func:`build_base`)
    skips recomputing ``B^-1`` when classes are built in several groups.
    """
    params = params or RegularizationParams()
    ids = registry.class_ids
    C, d = len(ids), registry.dim
    if C == 0:
        raise ValueError("cannot build a classifier from an empty registry")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    r = min(params.rank, d)
    if r < params.rank:
        logger.info("rank %d clamped to feature dimension %d", params.rank, d)
    if base is None:
        if sigma_avg is None:
            sigma_avg = average_covariance(registry)
        base = build_base(sigma_avg, params)
    B_inv, log_det_B = base.B_inv, base.log_det_B

    log_prior = params.log_priors(C)
    mu = np.empty((C, d))
    W = np.empty((C, d))
    bias = np.empty(C)
    P = np.empty((C, r, d))
    M_inv = np.empty((C, r, r))
    eye_r = np.eye(r)

    stats_iter = registry.iter_stats()
    for start in range(0, C, batch_size):
        stop = min(start + batch_size, C)
        nb = stop - start
        U = np.zeros((nb, d, r))
        for j in range(nb):
            st = next(stats_iter)
            mu[start + j] = st.mu
            if params.alpha1 == 0:
                continue
            gen = rng_mod.stream(seed, f"low-rank-factor/{st.class_id}") if randomized else None
            try:
                if cache is not None:
                    S, V = cache.get(st.class_id, st.sigma, r, randomized, gen)
                else:
                    S, V = _spectral_factor(st.sigma, r, randomized, gen)
            except NumericalError as exc:
                raise NumericalError(str(exc), st.class_id) from None
            U[j] = np.sqrt(params.alpha1) * V * np.sqrt(S)

        # B^-1 U for the whole batch in one product
        BU = (B_inv @ U.transpose(1, 0, 2).reshape(d, nb * r)).reshape(d, nb, r).transpose(1, 0, 2)
        M = eye_r + np.einsum("bdi,bdj->bij", U, BU)
        logdet_M = np.empty(nb)
        for j in range(nb):
            try:
                M_inv[start + j], logdet_M[j] = cholesky_inverse(0.5 * (M[j] + M[j].T))
            except np.linalg.LinAlgError:
                raise NumericalError("core matrix not positive definite", ids[start + j]) from None
        P[start:stop] = BU.transpose(0, 2, 1)
        mb = mu[start:stop]
        W[start:stop] = mb @ B_inv
        bias[start:stop] = (
            -0.5 * np.einsum("ij,ij->i", W[start:stop], mb)
            - 0.5 * (logdet_M + log_det_B)
            + log_prior[start:stop]
        )

    return LrRgdaClassifier(
        global_=base,
        class_ids=np.asarray(ids, dtype=np.int64),
        mu=mu,
        W=W,
        bias=bias,
        P=P,
        M_inv=M_inv,
        params=params,
    )


# keeps the (rows, C, r) intermediate around 32 MB
_MAX_BLOCK_ELEMS = 4_000_000


def lr_rgda_score(clf: LrRgdaClassifier, X, counter: FlopCounter | None = None) -> np.ndarray:
    """Affine score plus low-rank quadratic correction, shape ``(rows, C)``."""
    data = getattr(X, "data", X)
    data = np.asarray(data, dtype=np.float64)
    single = data.ndim == 1
    data = np.atleast_2d(data)
    C, d = clf.W.shape
    r = clf.rank
    if data.shape[1] != d:
        raise DimensionError(f"input dim {data.shape[1]} != classifier dim {d}")
    n = data.shape[0]
    out = np.empty((n, C))
    step = max(1, _MAX_BLOCK_ELEMS // max(1, C * r))
    for lo in range(0, n, step):
        xb = data[lo:lo + step]
        nb = xb.shape[0]
        s = xb @ clf.W.T + clf.bias
        u = (xb @ clf._P_flat.T).reshape(nb, C, r) - clf._P_mu
        u = u.transpose(1, 0, 2)  # (C, nb, r)
        Mu = u @ clf.M_inv
        s += 0.5 * np.einsum("cnr,cnr->nc", u, Mu)
        out[lo:lo + nb] = s
    if counter is not None:
        counter.add("affine", n * C * (d + 1))
        counter.add("projection", n * C * (r * d + r))
        counter.add("core", n * C * (r * r + r + 1))
    return out[0] if single else out
