"""Lloyd's k-means with k-means++ seeding, used as the agent group divider.

Deterministic given the supplied stream: seeding draws, tie-breaking (always
toward the lowest centroid index), and empty-cluster reseeding (the point
farthest from the emptied centroid) are all fixed.
"""
from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .rng import RngStream

MAX_ITERS = 50
MOVE_TOL = 1e-9


def _sq_dists(points: np.ndarray, centroids: np.ndarray,
              p2: np.ndarray | None = None) -> np.ndarray:
    # (n, m) squared euclidean distances via the expanded form; one GEMM
    # instead of an (n, m, d) temporary
    if p2 is None:
        p2 = np.einsum("nd,nd->n", points, points)
    c2 = np.einsum("md,md->m", centroids, centroids)
    d2 = p2[:, None] + c2[None, :] - 2.0 * (points @ centroids.T)
    return np.maximum(d2, 0.0)


def _seed_plus_plus(points: np.ndarray, m: int, rng: RngStream,
                    p2: np.ndarray | None = None) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(0, n))]
    for _ in range(1, m):
        d2 = _sq_dists(points, points[chosen], p2).min(axis=1)
        total = d2.sum()
        if total <= 0.0:
            # all remaining mass at already-chosen locations: spread uniformly
            idx = int(rng.integers(0, n))
        else:
            u = float(rng.uniform(1)[0]) * total
            idx = int(np.searchsorted(np.cumsum(d2), u, side="right"))
            idx = min(idx, n - 1)
        chosen.append(idx)
    return points[chosen].copy()


def kmeans(points: np.ndarray, m: int, rng: RngStream) -> np.ndarray:
    """Cluster `points` (n x d) into m groups; returns n labels in [0, m).

    Guarantees a true partition: every label in [0, m) appears at least once
    whenever m <= n.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ParameterError(f"points must be 2-d, got shape {points.shape}")
    n = points.shape[0]
    if m < 1 or m > n:
        raise ParameterError(f"group count m={m} outside [1, {n}]")
    if m == 1:
        return np.zeros(n, dtype=np.int64)

    p2 = np.einsum("nd,nd->n", points, points)
    centroids = _seed_plus_plus(points, m, rng, p2)
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(MAX_ITERS):
        d2 = _sq_dists(points, centroids, p2)
        labels = d2.argmin(axis=1)  # argmin takes the lowest index on ties

        new_centroids = centroids.copy()
        for c in range(m):
            members = labels == c
            if members.any():
                new_centroids[c] = points[members].mean(axis=0)
            else:
                # reseed an emptied cluster at the point farthest from it
                far = int(_sq_dists(points, centroids[c:c + 1], p2)[:, 0].argmax())
                new_centroids[c] = points[far]

        move = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        centroids = new_centroids
        if move < MOVE_TOL:
            break

    d2 = _sq_dists(points, centroids, p2)
    labels = d2.argmin(axis=1)

    # Final fix-up: force coverage of [0, m) by moving, for each empty
    # cluster, the farthest point drawn from a cluster that can spare one.
    for c in range(m):
        if (labels == c).any():
            continue
        counts = np.bincount(labels, minlength=m)
        spare = counts[labels] > 1
        cand = np.where(spare)[0]
        dist_c = _sq_dists(points, centroids[c:c + 1], p2)[:, 0]
        pick = int(cand[dist_c[cand].argmax()])
        labels[pick] = c
        centroids[c] = points[pick]
    return labels.astype(np.int64)
