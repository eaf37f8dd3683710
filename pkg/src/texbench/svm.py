"""Linear SVM: dual coordinate descent, one-vs-rest, C selection by inner CV.

The binary problem is the L1-hinge SVM with a regularized bias::

    min_{w, b}  1/2 (|w|^2 + b^2) + C sum_i max(0, 1 - y_i (w.x_i + b))

obtained by appending a constant 1 to every feature vector.  Its dual is
solved coordinate by coordinate over a fresh seeded permutation each
epoch, until the largest projected-gradient violation of an epoch falls
below ``tolerance``.  When there are fewer samples than dimensions (the
usual case for CNN features) the solver works on the n x n Gram matrix;
otherwise it keeps the primal weight vector up to date.
"""

import struct
from dataclasses import dataclass, replace

import numba
import numpy as np

from .folds import stratified_kfold
from .rng import make_rng

_SVM_MAGIC = b"SVM1"
_EPOCH_CHUNK = 32
DEFAULT_C_GRID = (1e-2, 1e-1, 1.0, 10.0, 100.0)


@dataclass(frozen=True)
class SvmTrainConfig:
    C: float = 1.0
    tolerance: float = 1e-3
    max_iter: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError(f"C must be positive, got {self.C}")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True, eq=False)
class LinearSvmModel:
    """One weight row and bias per class; ``classes[i]`` is the label of row i."""

    weights: np.ndarray
    biases: np.ndarray
    classes: np.ndarray

    @property
    def num_classes(self):
        return len(self.classes)

    @property
    def dim(self):
        return self.weights.shape[1]

    def decision_function(self, features):
        x = np.asarray(features, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ValueError(f"feature dim {x.shape[-1]} != model dim {self.dim}")
        return x @ self.weights.T + self.biases


@dataclass
class DualTrace:
    """Dual objective after every coordinate update, plus the final duals."""

    objective: np.ndarray
    alpha: np.ndarray
    epochs: int
    converged: bool


@numba.njit(cache=True, nogil=True)
def _cd_gram(K, y, alpha, f, C, perms, tol, trace):
    # f holds (Q alpha)_i = y_i * sum_j alpha_j y_j K_ij; trace[0] carries the dual objective
    n = len(y)
    t = 1
    for e in range(perms.shape[0]):
        worst = 0.0
        for s in range(n):
            i = perms[e, s]
            g = f[i] - 1.0
            a = alpha[i]
            pg = g
            if a <= 0.0:
                pg = min(g, 0.0)
            elif a >= C:
                pg = max(g, 0.0)
            if abs(pg) > worst:
                worst = abs(pg)
            if pg != 0.0:
                qii = K[i, i]
                new = min(max(a - g / qii, 0.0), C)
                d = new - a
                if d != 0.0:
                    alpha[i] = new
                    dy = d * y[i]
                    for j in range(n):
                        f[j] += dy * y[j] * K[i, j]
                    if trace.shape[0] > 1:
                        trace[t] = trace[t - 1] - d * g - 0.5 * d * d * qii
                        t += 1
        if worst < tol:
            return e + 1, True, t
    return perms.shape[0], False, t


@numba.njit(cache=True, nogil=True)
def _cd_primal(X, y, alpha, w, qdiag, C, perms, tol, trace):
    # w has dim + 1 entries; the last multiplies the constant bias feature
    n, dim = X.shape
    t = 1
    for e in range(perms.shape[0]):
        worst = 0.0
        for s in range(n):
            i = perms[e, s]
            dot = w[dim]
            for r in range(dim):
                dot += w[r] * X[i, r]
            g = y[i] * dot - 1.0
            a = alpha[i]
            pg = g
            if a <= 0.0:
                pg = min(g, 0.0)
            elif a >= C:
                pg = max(g, 0.0)
            if abs(pg) > worst:
                worst = abs(pg)
            if pg != 0.0:
                new = min(max(a - g / qdiag[i], 0.0), C)
                d = new - a
                if d != 0.0:
                    alpha[i] = new
                    dy = d * y[i]
                    for r in range(dim):
                        w[r] += dy * X[i, r]
                    w[dim] += dy
                    if trace.shape[0] > 1:
                        trace[t] = trace[t - 1] - d * g - 0.5 * d * d * qdiag[i]
                        t += 1
        if worst < tol:
            return e + 1, True, t
    return perms.shape[0], False, t


def _check_binary(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError(f"features {x.shape} and labels {y.shape} disagree")
    if len(x) < 2:
        raise ValueError("need at least 2 training samples")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("binary labels must be +1 or -1")
    if np.all(y == y[0]):
        raise ValueError("training labels contain a single class")
    if not np.all(np.isfinite(x)):
        raise ValueError("features contain non-finite values")
    return x, y


def _solve(x, y, config, gram=None, trace=False):
    """Run dual CD; returns (w, b, DualTrace)."""
    n, dim = x.shape
    rng = make_rng(config.seed)
    alpha = np.zeros(n)
    cap = config.max_iter * n + 1 if trace else 1
    obj = np.zeros(cap)
    use_gram = gram is not None or n <= dim
    if use_gram:
        K = (x @ x.T + 1.0) if gram is None else np.asarray(gram, dtype=np.float64)
        f = np.zeros(n)
    else:
        w = np.zeros(dim + 1)
        qdiag = (x * x).sum(1) + 1.0
    done, converged, t = 0, False, 1
    while done < config.max_iter and not converged:
        m = min(_EPOCH_CHUNK, config.max_iter - done)
        perms = np.argsort(rng.random((m, n)), axis=1, kind="stable")
        buf = obj[t - 1:] if trace else obj
        if use_gram:
            ep, converged, used = _cd_gram(K, y, alpha, f, config.C, perms, config.tolerance, buf)
        else:
            ep, converged, used = _cd_primal(x, y, alpha, w, qdiag, config.C, perms, config.tolerance, buf)
        if trace:
            t += used - 1
        done += ep
    if use_gram:
        ay = alpha * y
        w_full = np.append(x.T @ ay, ay.sum())
    else:
        w_full = w
    info = DualTrace(obj[:t] if trace else obj[:1], alpha, done, converged)
    return w_full[:-1], float(w_full[-1]), info


def train_binary(features, labels, config=None, return_trace=False):
    """Train a binary linear SVM on labels in {-1, +1}; returns ``(w, b)``."""
    config = config or SvmTrainConfig()
    x, y = _check_binary(features, labels)
    w, b, info = _solve(x, y, config, trace=return_trace)
    if return_trace:
        return w, b, info
    return w, b


def primal_objective(w, b, features, labels, C):
    x = np.asarray(features, dtype=np.float64)
    margins = np.asarray(labels, dtype=np.float64) * (x @ w + b)
    return 0.5 * (float(w @ w) + b * b) + C * float(np.maximum(0.0, 1.0 - margins).sum())


def _train_ovr(x, labels, config, gram=None):
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("one-vs-rest training needs at least 2 classes")
    W = np.empty((len(classes), x.shape[1]))
    B = np.empty(len(classes))
    for ci, c in enumerate(classes):
        y = np.where(labels == c, 1.0, -1.0)
        W[ci], B[ci], _ = _solve(x, y, config, gram=gram)
    return LinearSvmModel(W, B, classes)


def train_ovr(features, labels, config=None):
    """One binary SVM per class (that class vs. the rest), same config and seed."""
    config = config or SvmTrainConfig()
    labels = np.asarray(labels)
    x = np.asarray(features, dtype=np.float64)
    if len(np.unique(labels)) < 2:
        raise ValueError("one-vs-rest training needs at least 2 classes")
    _check_binary(x, np.where(labels == labels[0], 1.0, -1.0))
    gram = x @ x.T + 1.0 if len(x) <= x.shape[1] else None
    return _train_ovr(x, labels, config, gram)


def predict(model, feature):
    """Class with the largest score; ties go to the lowest class index."""
    return model.classes[int(np.argmax(model.decision_function(np.ravel(feature))))]


def predict_batch(model, features):
    return model.classes[np.argmax(model.decision_function(features), axis=1)]


def select_C(features, labels, C_grid=DEFAULT_C_GRID, seed=0, config=None, folds=3):
    """C with the best mean stratified ``folds``-fold accuracy; ties -> smallest C."""
    grid = sorted(float(c) for c in C_grid)
    if not grid:
        raise ValueError("C grid is empty")
    labels = np.asarray(labels)
    x = np.asarray(features, dtype=np.float64)
    if len(grid) == 1:
        return grid[0]
    counts = np.unique(labels, return_counts=True)
    for c, cnt in zip(*counts):
        if cnt < folds:
            raise ValueError(f"class {c} has {cnt} samples; C selection needs at least {folds}")
    base = config or SvmTrainConfig()
    plan = stratified_kfold(labels, folds, seed)
    gram = x @ x.T + 1.0 if len(x) <= x.shape[1] else None
    scores = np.zeros(len(grid))
    for tr, te in plan.splits():
        sub = None if gram is None else gram[np.ix_(tr, tr)]
        for gi, C in enumerate(grid):
            model = _train_ovr(x[tr], labels[tr], replace(base, C=C), sub)
            scores[gi] += np.mean(predict_batch(model, x[te]) == labels[te])
    return grid[int(np.argmax(scores))]


def write_model(path, model):
    """``SVM1``: magic, u32 classes, u32 dim, then per class dim float32 weights and a float32 bias (LE).

    Classes are stored implicitly as 0..classes-1.
    """
    if not np.array_equal(model.classes, np.arange(model.num_classes)):
        raise ValueError("SVM1 files require class labels 0..n-1")
    with open(path, "wb") as f:
        f.write(_SVM_MAGIC + struct.pack("<II", model.num_classes, model.dim))
        for w, b in zip(model.weights, model.biases):
            f.write(np.asarray(w, dtype="<f4").tobytes() + struct.pack("<f", b))


def read_model(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _SVM_MAGIC:
        raise ValueError(f"{path}: not an SVM1 file")
    c, dim = struct.unpack_from("<II", data, 4)
    v = np.frombuffer(data, dtype="<f4", offset=12)
    if v.size != c * (dim + 1):
        raise ValueError(f"{path}: truncated model")
    v = v.reshape(c, dim + 1).astype(np.float64)
    return LinearSvmModel(v[:, :dim].copy(), v[:, dim].copy(), np.arange(c))
