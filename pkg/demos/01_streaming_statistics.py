"""Class statistics accumulated batch by batch equal the one-shot estimate."""
import numpy as np

from analytic_cil.stats import FeatureMatrix, StatsRegistry, accumulate, average_covariance

gen = np.random.default_rng(0)
X = gen.standard_normal((600, 5)) * [1, 2, 3, 4, 5] + 1e4  # large offset on purpose
y = gen.integers(0, 3, 600)

# feed the data in uneven batches
streamed = StatsRegistry(5)
for part_X, part_y in zip(np.split(X, [50, 51, 400]), np.split(y, [50, 51, 400])):
    accumulate(streamed, FeatureMatrix(part_X, part_y))

for c in streamed.class_ids:
    ref = np.cov(X[y == c].T, bias=True)
    gap = np.abs(streamed[c].sigma - ref).max()
    print(f"class {c}: n={streamed[c].count:3d}  max |Sigma - np.cov| = {gap:.2e}")

print("average covariance diagonal:", np.round(np.diag(average_covariance(streamed)), 3))
