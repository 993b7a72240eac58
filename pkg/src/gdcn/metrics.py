"""K-means clustering and the three partition-agreement metrics (ACC/NMI/PUR)."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .layers import seeded_rng

MAX_LLOYD_ITERS = 300


@dataclass
class ClusteringResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    inertia_history: list  # per-Lloyd-iteration, non-increasing


@dataclass
class MetricsReport:
    acc: float
    nmi: float
    pur: float

    def to_json(self):
        return json.dumps({k: round(getattr(self, k), 6) for k in ("acc", "nmi", "pur")})


def _sq_dists(points, centroids):
    # (n, k) squared euclidean distances
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _plus_plus_seeding(points, k, rng):
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:  # fewer distinct points than centers so far; fall back to uniform
            idx = rng.integers(n)
        centroids[j] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _lloyd(points, centroids):
    n, k = points.shape[0], centroids.shape[0]
    assignments = np.full(n, -1)
    history = []
    for _ in range(MAX_LLOYD_ITERS):
        d2 = _sq_dists(points, centroids)
        new_assignments = d2.argmin(axis=1)  # argmin takes the lowest index on ties
        history.append(float(d2[np.arange(n), new_assignments].sum()))
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for j in range(k):
            members = assignments == j
            if members.any():
                centroids[j] = points[members].mean(axis=0)
            else:
                # deterministic repair: seize the point farthest from its centroid
                d2 = _sq_dists(points, centroids)
                worst = d2[np.arange(n), assignments].argmax()
                centroids[j] = points[worst]
                assignments[worst] = j
    d2 = _sq_dists(points, centroids)
    assignments = d2.argmin(axis=1)
    inertia = float(d2[np.arange(n), assignments].sum())
    history.append(inertia)
    return assignments, centroids, inertia, history


def kmeans(points, k, restarts=10, seed=0):
    """Best-of-restarts Lloyd iterations with distance-weighted seeding.

    Deterministic given the seed: restart r draws from its own stream, ties
    in assignment go to the lowest centroid index, and the lowest-inertia
    restart (first on ties) wins.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"kmeans: need 1 <= k <= n, got k={k}, n={n}")
    best = None
    for r in range(restarts):
        rng = seeded_rng(seed, 0x6B63 + r)
        centroids = _plus_plus_seeding(points, k, rng)
        assignments, centroids, inertia, history = _lloyd(points, centroids)
        if best is None or inertia < best.inertia:
            best = ClusteringResult(assignments=assignments, centroids=centroids,
                                    inertia=inertia, inertia_history=history)
    return best


def _check_pair(pred, truth):
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape or pred.ndim != 1 or pred.size == 0:
        raise ValueError(
            f"metrics: need equal-length non-empty 1-D labelings, "
            f"got {pred.shape} and {truth.shape}")
    return pred, truth


def _contingency(pred, truth):
    kp = int(pred.max()) + 1
    kt = int(truth.max()) + 1
    w = np.zeros((kp, kt), dtype=np.int64)
    np.add.at(w, (pred, truth), 1)
    return w


def accuracy(pred, truth):
    """Fraction matched under the best cluster-to-class assignment."""
    pred, truth = _check_pair(pred, truth)
    w = _contingency(pred, truth)
    rows, cols = linear_sum_assignment(-w)
    return float(w[rows, cols].sum()) / pred.size


def nmi(pred, truth):
    """Mutual information normalized by the arithmetic mean of the entropies.

    Both partitions single-cluster -> 1.0 by convention; exactly one
    single-cluster -> 0.0.
    """
    pred, truth = _check_pair(pred, truth)
    n = pred.size
    w = _contingency(pred, truth) / n
    pp = w.sum(axis=1)
    pt = w.sum(axis=0)
    hp = float(-(pp[pp > 0] * np.log(pp[pp > 0])).sum())
    ht = float(-(pt[pt > 0] * np.log(pt[pt > 0])).sum())
    if hp == 0.0 and ht == 0.0:
        return 1.0
    if hp == 0.0 or ht == 0.0:
        return 0.0
    outer = pp[:, None] * pt[None, :]
    live = w > 0
    info = float((w[live] * np.log(w[live] / outer[live])).sum())
    return info / ((hp + ht) / 2.0)


def purity(pred, truth):
    """Average majority-class fraction over predicted clusters."""
    pred, truth = _check_pair(pred, truth)
    w = _contingency(pred, truth)
    return float(w.max(axis=1).sum()) / pred.size


def evaluate_labels(pred, truth):
    return MetricsReport(acc=accuracy(pred, truth), nmi=nmi(pred, truth),
                         pur=purity(pred, truth))
