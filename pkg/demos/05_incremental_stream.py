"""A small class-incremental run with drift between tasks, with and without compensation."""
from analytic_cil.simulator import StreamSpec, simulate

spec = StreamSpec(
    n_tasks=2, classes_per_task=3, dim=8, n_train=300, n_test=1000, mean_layout="line",
    mean_spacing=4.0, effective_rank=8, heteroscedastic=False, cov_floor=1.0,
    drift="translation", drift_magnitude=5.0,
)
for hopdc in (False, True):
    rep = simulate(spec, "lrrgda", use_hopdc=hopdc, seeds=3)
    print(f"compensation {'on ' if hopdc else 'off'}: Last {rep['last_mean']:.4f} +/- {rep['last_std']:.4f}, "
          f"Inc {rep['inc_mean']:.4f}")
