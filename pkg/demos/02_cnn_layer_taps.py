# Load a shipped network description, give it seeded random weights and read
# activations from several named layers in a single forward pass.

import numpy as np

from texbench.cli import cmd_inspect
from texbench.cnn import arch_path, forward, load_arch, load_network
from texbench.dataset import PreprocessSpec, SyntheticSpec, TextureSpec, generate_synthetic, preprocess

# %% Layer inventory: name, operator, output shape and flattened size
rows = cmd_inspect("smallnet")

# %% Random weights are reproducible from the seed
graph, weights = load_network(arch_path("smallnet"), seed=0)
_, again = load_network(arch_path("smallnet"), seed=0)
print("same weights for the same seed:", all(np.array_equal(weights[k][0], again[k][0]) for k in weights))

# %% Forward one texture patch and tap a few layers at once
pair = SyntheticSpec(2, 1, (TextureSpec("checker", {"cell": 6}), TextureSpec("blob-noise", {"sigma": 2})), seed=2)
patch = generate_synthetic(pair).patches[0]
c, h, w = graph.input_shape
x = preprocess(patch, PreprocessSpec(w, h, (128.0, 128.0, 128.0)))
acts = forward(graph, weights, x, outputs=["conv1", "conv2", "fc1"])
for name, a in acts.items():
    print(f"{name:<6} shape={a.shape}  dim={a.size}  mean={a.mean():+.3f}")

# %% The bigger shipped graphs only need shape inference to list their taps
for name in ("alexnet", "googlenet"):
    g = load_arch(arch_path(name))
    print(f"{name:<10} nodes={len(g.names):<4} prob dim={g.feature_dim('prob')}")
