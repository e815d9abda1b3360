"""Dense linear-algebra helpers: SPD inversion, PSD square roots, top eigenpairs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from .errors import NumericalError

# eigenvalues below this fraction of the largest are clipped in the fallback inverse
EIG_CLIP = 1e-10
PSD_TOL = 1e-8


@dataclass
class FlopCounter:
    """Tally of multiply-adds, keyed by operation label."""

    counts: dict[str, int] = field(default_factory=dict)

    def add(self, label: str, n: int) -> None:
        self.counts[label] = self.counts.get(label, 0) + int(n)

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def _symmetrize_lower(a: np.ndarray) -> np.ndarray:
    low = np.tril(a)
    return low + np.tril(low, -1).T


def cholesky_inverse(A: np.ndarray) -> tuple[np.ndarray, float]:
    """Inverse and log-determinant of an SPD matrix via its Cholesky factor.

    Raises ``np.linalg.LinAlgError`` if the factorization fails.
    """
    A = np.asarray(A, dtype=np.float64)
    c, info = lapack.dpotrf(A, lower=1, clean=1)
    if info != 0:
        raise np.linalg.LinAlgError(f"Cholesky failed (info={info})")
    diag = np.diag(c)
    if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
        raise np.linalg.LinAlgError("Cholesky factor has non-positive diagonal")
    logdet = 2.0 * float(np.sum(np.log(diag)))
    inv, info = lapack.dpotri(c, lower=1)
    if info != 0:
        raise np.linalg.LinAlgError(f"Cholesky inverse failed (info={info})")
    return _symmetrize_lower(inv), logdet


def eigen_clip_inverse(A: np.ndarray, class_id: int | None = None) -> tuple[np.ndarray, float]:
    """Inverse via eigendecomposition, clipping tiny eigenvalues.

    Eigenvalues below ``EIG_CLIP * max_eigenvalue`` are raised to that floor.
    Matrices that are not PSD, are all-zero, or are non-finite are rejected.
    """
    A = np.asarray(A, dtype=np.float64)
    if not np.all(np.isfinite(A)):
        raise NumericalError("matrix has non-finite entries", class_id)
    w, V = np.linalg.eigh(0.5 * (A + A.T))
    top = w[-1]
    if top <= 0:
        raise NumericalError(
            f"matrix is not positive definite (largest eigenvalue {top:.3e})", class_id
        )
    if w[0] < -PSD_TOL * max(1.0, top):
        raise NumericalError(
            f"matrix is indefinite (smallest eigenvalue {w[0]:.3e})", class_id
        )
    w = np.maximum(w, EIG_CLIP * top)
    inv = (V / w) @ V.T
    return 0.5 * (inv + inv.T), float(np.sum(np.log(w)))


def spd_inverse(A: np.ndarray, class_id: int | None = None) -> tuple[np.ndarray, float, bool]:
    """Cholesky inverse with eigen-clipping fallback.

    Returns ``(inverse, log_det, used_fallback)``.
    """
    try:
        inv, logdet = cholesky_inverse(A)
        return inv, logdet, False
    except np.linalg.LinAlgError:
        inv, logdet = eigen_clip_inverse(A, class_id)
        return inv, logdet, True


def psd_factor(S: np.ndarray) -> np.ndarray:
    """Return ``L`` with ``L @ L.T == S`` using a clipped eigendecomposition."""
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def fix_signs(U: np.ndarray) -> np.ndarray:
    """Flip columns so that each column's largest-magnitude entry is positive."""
    if U.size == 0:
        return U
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def top_eigenpairs(
    S: np.ndarray,
    r: int,
    *,
    randomized: bool = False,
    oversample: int = 8,
    n_iter: int = 2,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Largest ``r`` eigenpairs of a symmetric matrix, in descending order.

    Returns ``(eigenvalues, eigenvectors, smallest_seen)`` where
    ``smallest_seen`` is the smallest eigenvalue of the full spectrum (exact
    path) or of the sketched subspace (randomized path).
    """
    d = S.shape[0]
    if not 1 <= r <= d:
        raise ValueError(f"rank must be in [1, {d}], got {r}")
    S = 0.5 * (S + S.T)
    if not randomized or r + oversample >= d:
        w, V = np.linalg.eigh(S)
        lo = float(w[0])
        w, V = w[::-1][:r], V[:, ::-1][:, :r]
        return w, V, lo

    rng = rng if rng is not None else np.random.default_rng(0)
    omega = rng.standard_normal((d, r + oversample))
    Q, _ = np.linalg.qr(S @ omega)
    for _ in range(n_iter):
        Q, _ = np.linalg.qr(S @ Q)
    small = Q.T @ S @ Q
    w, Vs = np.linalg.eigh(0.5 * (small + small.T))
    lo = float(w[0])
    w, Vs = w[::-1][:r], Vs[:, ::-1][:, :r]
    return w, Q @ Vs, lo
