"""Fixed-length image encodings of local descriptor sets: BoVW, VLAD, Fisher."""

import struct
from dataclasses import dataclass

import numpy as np

from .codebook import assign_all, cluster_sums, gmm_log_posteriors

_FMT_MAGIC = b"FMT1"


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """One image's feature; ``provenance`` is bovw, vlad, fisher, raw or cnn:<layer>."""

    values: np.ndarray
    provenance: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32).ravel()
        if v.size == 0:
            raise ValueError("feature vector is empty")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"{self.provenance} feature has non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def dim(self):
        return self.values.size


def _matrix(descriptors, d):
    x = getattr(descriptors, "vectors", descriptors)
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return np.zeros((0, d))
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"descriptors of shape {x.shape} do not match model dim {d}")
    return x


def power_normalize(v, alpha=0.5):
    return np.sign(v) * np.abs(v) ** alpha


def l2_normalize(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def encode_bovw(codebook, descriptors):
    """Hard-assignment histogram divided by the descriptor count."""
    x = _matrix(descriptors, codebook.d)
    hist = np.zeros(codebook.k)
    if len(x):
        hist = np.bincount(assign_all(codebook, x), minlength=codebook.k) / len(x)
    return FeatureVector(hist, "bovw")


def vlad_raw(codebook, descriptors):
    """Per-word sums of residuals to the nearest centroid, flattened (k*d)."""
    x = _matrix(descriptors, codebook.d)
    c = np.asarray(codebook.centroids, dtype=np.float64)
    if not len(x):
        return np.zeros(c.size)
    sums, counts = cluster_sums(x, assign_all(codebook, x), codebook.k)
    return (sums - counts[:, None] * c).ravel()


def encode_vlad(codebook, descriptors):
    """VLAD with signed square root and global L2 normalization."""
    return FeatureVector(l2_normalize(power_normalize(vlad_raw(codebook, descriptors))), "vlad")


def fisher_raw(gmm, descriptors):
    """Unnormalized Fisher vector: mean gradients then sigma gradients (2*k*d).

    Gradients of the average log-likelihood with respect to the means and
    standard deviations, each scaled by the inverse square root of the
    diagonal Fisher information.
    """
    x = _matrix(descriptors, gmm.d)
    k, d = gmm.k, gmm.d
    if len(x) == 0:
        return np.zeros(2 * k * d)
    n = len(x)
    gamma = np.exp(gmm_log_posteriors(gmm, x))
    w = np.asarray(gmm.weights, dtype=np.float64)[:, None]
    mu = np.asarray(gmm.means, dtype=np.float64)
    var = np.asarray(gmm.variances, dtype=np.float64)
    s0 = gamma.sum(0)[:, None]
    s1 = gamma.T @ x
    s2 = gamma.T @ (x * x)
    g_mu = (s1 - mu * s0) / np.sqrt(var) / (n * np.sqrt(w))
    g_sig = ((s2 - 2.0 * mu * s1 + mu * mu * s0) / var - s0) / (n * np.sqrt(2.0 * w))
    return np.concatenate([g_mu.ravel(), g_sig.ravel()])


def encode_fisher(gmm, descriptors):
    """Improved Fisher vector: signed square root then global L2."""
    return FeatureVector(l2_normalize(power_normalize(fisher_raw(gmm, descriptors))), "fisher")


def write_features(path, features, labels):
    """``FMT1``: magic, u32 n, u32 dim, n int32 labels, then n*dim float32 (LE, row-major)."""
    f = np.asarray(features, dtype="<f4")
    labels = np.asarray(labels, dtype="<i4")
    if f.ndim != 2 or len(labels) != len(f):
        raise ValueError("features must be (n, dim) with one label per row")
    with open(path, "wb") as fh:
        fh.write(_FMT_MAGIC + struct.pack("<II", *f.shape))
        fh.write(labels.tobytes())
        fh.write(f.tobytes())


def read_features(path):
    """Inverse of :func:`write_features`; returns ``(features, labels)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _FMT_MAGIC:
        raise ValueError(f"{path}: not an FMT1 file")
    n, dim = struct.unpack_from("<II", data, 4)
    labels = np.frombuffer(data, dtype="<i4", count=n, offset=12).astype(np.int64)
    f = np.frombuffer(data, dtype="<f4", offset=12 + 4 * n)
    if f.size != n * dim:
        raise ValueError(f"{path}: truncated feature block")
    return f.reshape(n, dim).astype(np.float32), labels
