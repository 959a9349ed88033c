"""Centroid initialization (k-means++ seeding plus Lloyd refinement) and
optimal cluster-to-label matching for accuracy evaluation.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment


def squared_distances(A, B):
    """Pairwise squared Euclidean distances, (len(A), len(B))."""
    d2 = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d2, 0.0)


def nearest_assign(Z, centroids):
    """Index of the nearest centroid per row; ties go to the lowest index."""
    return np.argmin(squared_distances(Z, centroids), axis=1)


def distortion(Z, centroids, assign):
    return float(np.sum((Z - centroids[assign]) ** 2))


def kmeans_pp_init(Z, K, rng):
    """Standard D^2 seeding: the first center is uniform, each later center
    is sampled proportionally to the squared distance to its nearest chosen
    center. Points already at distance zero carry no selection weight; if
    every remaining point does, the next center is drawn uniformly from the
    unchosen indices.
    """
    Z = np.asarray(Z, dtype=float)
    n = len(Z)
    if K > n:
        raise ValueError(f"K={K} exceeds the number of points {n}")
    chosen = [int(rng.integers(n))]
    d2 = squared_distances(Z, Z[chosen[-1]][None, :])[:, 0]
    while len(chosen) < K:
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            unchosen = np.setdiff1d(np.arange(n), chosen)
            idx = int(unchosen[rng.integers(len(unchosen))])
        chosen.append(idx)
        d2 = np.minimum(d2, squared_distances(Z, Z[idx][None, :])[:, 0])
    return Z[chosen].copy()


def lloyd(Z, init, max_iters=20, tol=1e-4):
    """Alternate nearest-center assignment and mean updates.

    Stops when the largest centroid shift drops below tol or the iteration
    cap is hit. An empty cluster is reseeded to the point farthest from its
    assigned center (deterministic, reused points excluded).
    """
    Z = np.asarray(Z, dtype=float)
    centroids = np.asarray(init, dtype=float).copy()
    K = len(centroids)
    assign = nearest_assign(Z, centroids)
    for _ in range(max_iters):
        new_centroids = centroids.copy()
        empties = []
        for k in range(K):
            members = assign == k
            if members.any():
                new_centroids[k] = Z[members].mean(axis=0)
            else:
                empties.append(k)
        if empties:
            own = np.sqrt(np.sum((Z - new_centroids[assign]) ** 2, axis=1))
            for k in empties:
                far = int(np.argmax(own))
                new_centroids[k] = Z[far]
                own[far] = -1.0
        shift = np.sqrt(np.sum((new_centroids - centroids) ** 2, axis=1)).max()
        centroids = new_centroids
        assign = nearest_assign(Z, centroids)
        if shift < tol:
            break
    return centroids, assign


def hungarian_match(pred, truth):
    """Optimal label mapping over the zero-padded square contingency table.

    Returns (mapping from predicted label to matched true label, matched
    agreement count).
    """
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth must have the same length")
    n_pred = int(pred.max()) + 1
    n_truth = int(truth.max()) + 1
    side = max(n_pred, n_truth)
    table = np.zeros((side, side), dtype=np.int64)
    np.add.at(table, (pred, truth), 1)
    rows, cols = linear_sum_assignment(table, maximize=True)
    mapping = {int(r): int(c) for r, c in zip(rows, cols) if r < n_pred}
    agreement = int(table[rows, cols].sum())
    return mapping, agreement
