"""Inverse and log-determinant of a low-rank update from the base inverse only."""
import numpy as np

from analytic_cil.linalg import cholesky_inverse
from analytic_cil.lr_rgda import core_matrix, log_det_lemma, woodbury_inverse

gen = np.random.default_rng(2)
d, r = 200, 8
G = gen.standard_normal((d, d))
B = G @ G.T / d + np.eye(d)
U = gen.standard_normal((d, r))

B_inv, log_det_B = cholesky_inverse(B)
inv, _ = woodbury_inverse(B_inv, U)
full = B + U @ U.T
print("max |inv @ (B + U U^T) - I| =", f"{np.abs(inv @ full - np.eye(d)).max():.2e}")
print("log det via lemma:", log_det_lemma(log_det_B, core_matrix(B_inv, U)))
print("log det dense:    ", np.linalg.slogdet(full)[1])
