# Walk through the codebook side of the benchmark on a handful of synthetic
# texture patches: dense SIFT, a k-means codebook and a GMM, then the three
# fixed-length encodings.  Run with `python demos/01_descriptors_and_encodings.py`.

import numpy as np

from texbench import DenseSamplingSpec, SyntheticSpec, TextureSpec, generate_synthetic
from texbench.codebook import gmm_fit_em, kmeans_fit
from texbench.encode import encode_bovw, encode_fisher, encode_vlad
from texbench.localfeat import extract_dense_sift

# %% A tiny three-class texture set
spec = SyntheticSpec(3, 4, (
    TextureSpec("oriented-grating", {"angle": 30, "period": 12}),
    TextureSpec("checker", {"cell": 9}),
    TextureSpec("blob-noise", {"sigma": 3}),
), size_range=(120, 200), seed=7, class_names=("grating", "checker", "blobs"))
data = generate_synthetic(spec)
for p in data.patches[::4]:
    print(f"{p.id:<16} {p.width}x{p.height}  class={data.class_names[p.label]}")

# %% Dense SIFT: a grid of keypoints at two scales, 128 values each
sampling = DenseSamplingSpec(step=12, patch_sizes=(16, 32), boundary_margin=16)
sets = [extract_dense_sift(p, sampling) for p in data.patches]
print("descriptors per image:", [len(s.vectors) for s in sets])
first = sets[0].vectors
print("unit norm:", np.allclose(np.linalg.norm(first, axis=1), 1, atol=1e-5), " max entry:", first.max().round(3))

# %% Vocabulary and mixture fitted on the pooled descriptors
pooled = np.concatenate([s.vectors for s in sets])
codebook = kmeans_fit(pooled, 32, seed=0, max_iter=30)
gmm = gmm_fit_em(pooled, 8, seed=0, max_iter=30)
print("k-means objective trace:", np.round(codebook.objective_history[:5], 1), "...")
print("GMM mean log-likelihood:", round(gmm.loglik_history[-1], 2))

# %% One vector per image; nearest neighbour (cosine) with the query left out
labels = data.labels
for name, enc, model in (("bovw", encode_bovw, codebook), ("vlad", encode_vlad, codebook),
                         ("fisher", encode_fisher, gmm)):
    feats = np.stack([enc(model, s).values for s in sets])
    sim = feats @ feats.T
    np.fill_diagonal(sim, -np.inf)
    hits = (labels[sim.argmax(1)] == labels).mean()
    print(f"{name:<7} dim={feats.shape[1]:<5} leave-one-out 1-NN accuracy={hits:.2f}")
