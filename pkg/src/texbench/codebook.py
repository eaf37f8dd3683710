"""Visual-word models: k-means codebooks and diagonal-covariance GMMs."""

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from .rng import make_rng

_CBK_MAGIC = b"CBK1"
_GMM_MAGIC = b"GMM1"
_LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True, eq=False)
class Codebook:
    """k-means centroids (``k x d`` float32) plus the fit's objective trace."""

    centroids: np.ndarray
    objective_history: tuple = field(default=(), compare=False)

    @property
    def k(self):
        return self.centroids.shape[0]

    @property
    def d(self):
        return self.centroids.shape[1]

    @property
    def objective(self):
        return self.objective_history[-1] if self.objective_history else float("nan")


@dataclass(frozen=True, eq=False)
class GmmModel:
    """Diagonal Gaussian mixture; ``variances`` holds sigma squared."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    loglik_history: tuple = field(default=(), compare=False)

    @property
    def k(self):
        return self.means.shape[0]

    @property
    def d(self):
        return self.means.shape[1]


def _check_data(x, k):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected an (n, d) descriptor matrix, got shape {x.shape}")
    if k < 1:
        raise ValueError("k must be >= 1")
    if x.shape[0] < k:
        raise ValueError(f"need at least k={k} points, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("descriptors contain non-finite values")
    return x


def sq_distances(x, centroids):
    """Squared Euclidean distances ``(n, k)`` in the inputs' precision (float64 unless both are float32)."""
    dt = np.float32 if x.dtype == np.float32 and centroids.dtype == np.float32 else np.float64
    x = np.asarray(x, dtype=dt)
    c = np.asarray(centroids, dtype=dt)
    d = (x * x).sum(1)[:, None] - 2 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0)


def _kmeanspp(x, k, rng):
    n = x.shape[0]
    xx = (x * x).sum(1)
    first = int(rng.integers(n))
    chosen = [first]
    d2 = np.maximum(xx - 2.0 * x @ x[first] + xx[first], 0.0)
    d2[first] = 0.0
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            raise ValueError(f"fewer than k={k} distinct points")
        # inverse-CDF draw keeps the result a pure function of the uniform stream
        idx = int(np.searchsorted(np.cumsum(d2), rng.uniform(0, total), side="right"))
        idx = min(idx, n - 1)
        while d2[idx] == 0:
            idx -= 1
        chosen.append(idx)
        d2 = np.minimum(d2, np.maximum(xx - 2.0 * x @ x[idx] + xx[idx], 0.0))
        d2[idx] = 0.0
    return x[chosen].copy()


def cluster_sums(x, labels, k):
    """Per-cluster row sums ``(k, d)`` and counts ``(k,)``."""
    n = len(labels)
    onehot = sparse.csr_matrix((np.ones(n), (labels, np.arange(n))), shape=(k, n))
    return np.asarray(onehot @ x), np.bincount(labels, minlength=k)


def kmeans_fit(descriptors, k, seed=0, max_iter=100, rel_tol=1e-5):
    """k-means++ seeding followed by Lloyd iterations.

    Stops when the relative decrease of the within-cluster sum of squares is
    below ``rel_tol``, when assignments no longer change, or after
    ``max_iter`` iterations.  Empty clusters are re-seeded with the points
    farthest from their current centroid.  Rows are put in lexicographic
    order first so the result does not depend on the input row order.
    """
    x = _check_data(descriptors, k)
    x = x[np.lexsort(x.T[::-1])]
    rng = make_rng(seed)
    centroids = _kmeanspp(x, k, rng)
    x32 = x.astype(np.float32)
    history = []
    labels = None
    for _ in range(max_iter):
        # float32 candidates, exact float64 distances for the objective
        new_labels = sq_distances(x32, centroids.astype(np.float32)).argmin(1)
        diff = x - centroids[new_labels]
        dist = np.einsum("ij,ij->i", diff, diff)
        if labels is not None:
            # keep the old label unless the move is an exact improvement
            diff = x - centroids[labels]
            old = np.einsum("ij,ij->i", diff, diff)
            keep = old <= dist
            new_labels = np.where(keep, labels, new_labels)
            dist = np.where(keep, old, dist)
        obj = float(dist.sum())
        history.append(obj)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        if len(history) > 1 and history[-2] > 0 and (history[-2] - obj) / history[-2] < rel_tol:
            break
        if obj == 0.0:
            break
        labels = new_labels
        sums, counts = cluster_sums(x, labels, k)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if len(empty):
            far = np.argsort(-dist, kind="stable")
            for j, i in zip(empty, far):
                centroids[j] = x[i]
    return Codebook(centroids.astype(np.float32), tuple(history))


def assign_nearest(codebook, descriptor):
    """Index of the nearest centroid; ties go to the lowest index."""
    c = np.asarray(codebook.centroids, dtype=np.float64)
    v = np.asarray(descriptor, dtype=np.float64).ravel()
    if v.shape[0] != c.shape[1]:
        raise ValueError(f"descriptor dim {v.shape[0]} != codebook dim {c.shape[1]}")
    return int(((c - v) ** 2).sum(1).argmin())


def assign_all(codebook, descriptors, chunk=8192):
    """Vectorized :func:`assign_nearest` over the rows of ``descriptors``."""
    x = np.asarray(descriptors)
    if x.ndim != 2 or x.shape[1] != codebook.d:
        raise ValueError(f"descriptor matrix {x.shape} does not match codebook dim {codebook.d}")
    out = np.empty(len(x), dtype=np.intp)
    for s in range(0, len(x), chunk):
        out[s:s + chunk] = sq_distances(x[s:s + chunk], codebook.centroids).argmin(1)
    return out


def _log_joint(gmm_w, means, variances, x, xx=None):
    """log(pi_j) + log N(x; mu_j, diag var_j), shape (n, k)."""
    inv = 1.0 / variances
    quad = (x * x if xx is None else xx) @ inv.T - 2.0 * x @ (means * inv).T + ((means * means) * inv).sum(1)[None, :]
    logdet = np.log(variances).sum(1)
    d = x.shape[1]
    with np.errstate(divide="ignore"):
        logw = np.log(gmm_w)
    return logw[None, :] - 0.5 * (d * _LOG_2PI + logdet[None, :] + quad)


def gmm_fit_em(descriptors, k, seed=0, max_iter=100, rel_tol=1e-5, variance_floor=1e-4, init_iter=100):
    """Fit a diagonal GMM by EM, initialized from :func:`kmeans_fit`.

    The recorded log-likelihood is the mean per-sample value; EM stops when
    its relative change drops below ``rel_tol`` or after ``max_iter``
    iterations.  Variances are floored at ``variance_floor`` in every
    M-step.  ``init_iter`` caps the k-means initialization.
    """
    x = _check_data(descriptors, k)
    n, d = x.shape
    cb = kmeans_fit(x, k, seed=seed, max_iter=init_iter)
    means = cb.centroids.astype(np.float64)
    labels = sq_distances(x, means).argmin(1)
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    weights = counts / n
    variances = np.empty((k, d))
    for j in range(k):
        pts = x[labels == j]
        variances[j] = pts.var(0) if len(pts) else x.var(0)
    variances = np.maximum(variances, variance_floor)
    history = []
    xx = x * x
    for _ in range(max_iter):
        lj = _log_joint(weights, means, variances, x, xx)
        lse = logsumexp(lj, axis=1)
        ll = float(lse.mean())
        history.append(ll)
        if len(history) > 1 and abs(history[-1] - history[-2]) <= rel_tol * abs(history[-2]):
            break
        resp = np.exp(lj - lse[:, None])
        nk = resp.sum(0)
        live = nk > 1e-10 * n
        weights = nk / nk.sum()
        m = (resp.T @ x)[live] / nk[live, None]
        sq = (resp.T @ xx)[live] / nk[live, None]
        means[live] = m
        variances[live] = np.maximum(sq - m * m, variance_floor)
    return GmmModel(weights, means, variances, tuple(history))


def gmm_log_posteriors(gmm, descriptors):
    """log responsibilities, ``(n, k)``, via max-subtracted log-sum-exp."""
    x = np.asarray(descriptors, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != gmm.d:
        raise ValueError(f"descriptor dim {x.shape[1]} != model dim {gmm.d}")
    w = np.asarray(gmm.weights, dtype=np.float64)
    lj = _log_joint(w / w.sum(), np.asarray(gmm.means, np.float64), np.asarray(gmm.variances, np.float64), x)
    return lj - logsumexp(lj, axis=1, keepdims=True)


def gmm_posteriors(gmm, descriptor):
    """Responsibilities of each component for one descriptor; sums to 1."""
    return np.exp(gmm_log_posteriors(gmm, descriptor)[0])


def gmm_loglik(gmm, descriptors):
    """Total log-likelihood of ``descriptors`` under ``gmm``."""
    x = np.asarray(descriptors, dtype=np.float64)
    w = np.asarray(gmm.weights, dtype=np.float64)
    return float(logsumexp(_log_joint(w, gmm.means, gmm.variances, x), axis=1).sum())


def write_codebook(path, codebook):
    """``CBK1``: magic, u32 k, u32 d, then k*d float32 centroids row-major (LE)."""
    with open(path, "wb") as f:
        f.write(_CBK_MAGIC + struct.pack("<II", codebook.k, codebook.d))
        f.write(np.asarray(codebook.centroids, dtype="<f4").tobytes())


def read_codebook(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _CBK_MAGIC:
        raise ValueError(f"{path}: not a CBK1 file")
    k, d = struct.unpack_from("<II", data, 4)
    c = np.frombuffer(data, dtype="<f4", offset=12)
    if c.size != k * d:
        raise ValueError(f"{path}: truncated centroid block")
    return Codebook(c.reshape(k, d).astype(np.float32))


def write_gmm(path, gmm):
    """``GMM1``: magic, u32 k, u32 d, then float32 weights (k), means (k*d), variances (k*d), LE."""
    with open(path, "wb") as f:
        f.write(_GMM_MAGIC + struct.pack("<II", gmm.k, gmm.d))
        for a in (gmm.weights, gmm.means, gmm.variances):
            f.write(np.asarray(a, dtype="<f4").tobytes())


def read_gmm(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _GMM_MAGIC:
        raise ValueError(f"{path}: not a GMM1 file")
    k, d = struct.unpack_from("<II", data, 4)
    v = np.frombuffer(data, dtype="<f4", offset=12).astype(np.float64)
    if v.size != k + 2 * k * d:
        raise ValueError(f"{path}: truncated parameter block")
    return GmmModel(v[:k], v[k:k + k * d].reshape(k, d), v[k + k * d:].reshape(k, d))
