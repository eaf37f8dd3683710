# A miniature version of the full experiment: raw pixels, a CNN layer sweep
# and one codebook encoding, each scored by cross-validated linear SVMs.
# Writes a CSV and an SVG chart to ./demo_results/.

from pathlib import Path

from texbench import (
    DenseSamplingSpec, PipelineSpec, SyntheticSpec, TextureSpec, generate_synthetic, layer_sweep, report, run_cv,
    run_trials,
)

data = generate_synthetic(SyntheticSpec(3, 12, (
    TextureSpec("oriented-grating", {"angle": 30, "period": 14}),
    TextureSpec("checker", {"cell": 9, "angle": 30}),
    TextureSpec("blob-noise", {"sigma": 3}),
), size_range=(120, 240), seed=1))
sampling = DenseSamplingSpec(16, (16, 32), 16)

results = [run_cv(PipelineSpec("raw", size=(32, 32)), data, k=4, seed=0)]
results += layer_sweep("smallnet", None, ["data", "conv1", "conv2", "fc1"], data, k=4, seed=0)
results.append(run_trials(PipelineSpec("vlad", k=16, sampling=sampling, kmeans_iter=15), data, trials=3, k=4,
                          base_seed=0))

for r in results:
    print(f"{r.pipeline:<16} {r.mean_accuracy:.3f} +/- {r.std_accuracy:.3f}  dim={r.feature_dim:<6} {r.protocol}")

out = Path("demo_results")
out.mkdir(exist_ok=True)
report(results, out / "demo.csv", out / "demo.svg")
print("wrote", out / "demo.csv", "and", out / "demo.svg")
