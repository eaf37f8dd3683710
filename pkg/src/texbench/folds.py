"""Stratified k-fold partitions."""

from dataclasses import dataclass

import numpy as np

from .rng import make_rng


@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    assignments: np.ndarray
    seed: int

    def test_indices(self, fold):
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold):
        return np.flatnonzero(self.assignments != fold)

    def splits(self):
        for f in range(self.k):
            yield self.train_indices(f), self.test_indices(f)


def stratified_kfold(labels, k, seed=0, class_names=None):
    """Deal a seeded permutation of each class round-robin into ``k`` folds.

    Classes are processed in increasing label order and each class starts
    dealing where the previous one stopped, so fold sizes also differ by at
    most one overall.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError("need at least 2 folds")
    assignments = np.empty(len(labels), dtype=np.int64)
    rng = make_rng(seed)
    start = 0
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < k:
            name = class_names[c] if class_names is not None else c
            raise ValueError(f"class {name!r} has {len(idx)} samples, fewer than k={k} folds")
        perm = idx[rng.permutation(len(idx))]
        assignments[perm] = (start + np.arange(len(idx))) % k
        start = (start + len(idx)) % k
    return FoldPlan(k, assignments, seed)
