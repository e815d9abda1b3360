"""How inference cost and model size grow with the number of classes."""
from analytic_cil.bench import results_csv, run_bench
from analytic_cil.formats import storage_layout

grid = [(kind, C, 128, 8) for kind in ("LDA", "RGDA", "LRRGDA") for C in (25, 50, 100)]
print(results_csv(run_bench(grid, warmup=1, iters=3, n_queries=32)))

for kind, r in (("RGDA", 0), ("LRRGDA", 64)):
    size = storage_layout(kind, 1000, 768, r)["total_bytes"]
    print(f"{kind} with 1000 classes at d=768: {size / 1e9:.2f} GB")
