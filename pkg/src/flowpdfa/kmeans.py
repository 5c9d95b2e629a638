"""Lloyd's k-means with k-means++ seeding."""
from __future__ import annotations

import numpy as np


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[i] = X[idx]
        d2 = np.minimum(d2, ((X - centers[i]) ** 2).sum(axis=1))
    return centers


def assign(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return d.argmin(axis=1)


def kmeans(X, k: int, seed: int = 0, max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cluster the rows of ``X`` into ``k`` groups.

    Returns ``(labels, centers)``. An empty cluster is repaired by moving the
    point of the largest cluster farthest from its center into it.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must be in [1, {n}]")
    rng = np.random.default_rng(seed)
    centers = kmeans_plusplus(X, k, rng)
    labels = assign(X, centers)
    for _ in range(max_iter):
        for _repair in range(k):
            sizes = np.bincount(labels, minlength=k)
            empty = np.flatnonzero(sizes == 0)
            if empty.size == 0:
                break
            big = sizes.argmax()
            members = np.flatnonzero(labels == big)
            far = members[((X[members] - centers[big]) ** 2).sum(axis=1).argmax()]
            if sizes[big] < 2 or np.allclose(X[far], centers[big]):
                break  # nothing left to split
            labels[far] = empty[0]
        new = centers.copy()
        for j in range(k):
            m = labels == j
            if m.any():
                new[j] = X[m].mean(axis=0)
        new_labels = assign(X, new)
        converged = np.array_equal(new_labels, labels) and np.allclose(new, centers)
        centers, labels = new, new_labels
        if converged:
            break
    return labels, centers
