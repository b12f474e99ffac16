"""Silhouette-scored K-means over user positions.

Plain Lloyd iterations with k-means++ seeding and a fixed number of restarts
per k; the cluster count is chosen by the mean silhouette over k = 2..k_max.
UAVs are placed at the centroids of the selected clusters; cluster labels are
matched to the previous frame's UAV identities by greedy nearest-centroid
pairing so UAVs track clusters instead of swapping.
"""

from dataclasses import dataclass

import numpy as np

MAX_LLOYD_ITERATIONS = 300
KMEANS_RESTARTS = 5


@dataclass
class ClusterPlan:
    k_star: int
    assignment: np.ndarray       # (n,) cluster index per UE
    centroids: np.ndarray        # (k_star, 2) meters
    silhouette_mean: float
    active_uavs: list[int]       # UAV index serving cluster c is active_uavs[c]


def _kmeanspp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=float)
    centroids[0] = points[rng.integers(n)]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centroids[c] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centroids[c]) ** 2, axis=1))
    return centroids


def _lloyd(points: np.ndarray, centroids: np.ndarray):
    """Lloyd iterations until the assignment is stable; returns labels, centroids, inertia."""
    n, k = points.shape[0], centroids.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    inertia = np.inf
    for _ in range(MAX_LLOYD_ITERATIONS):
        d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(d2, axis=1)
        # Repair empty clusters with the point currently farthest from its centroid.
        for c in range(k):
            if not np.any(new_labels == c):
                worst = int(np.argmax(d2[np.arange(n), new_labels]))
                new_labels[worst] = c
                d2[worst, :] = np.inf
                d2[worst, c] = 0.0
        new_inertia = float(d2[np.arange(n), new_labels].sum())
        if new_inertia > inertia + 1e-9 * max(1.0, inertia):
            raise AssertionError("k-means inertia increased")
        if np.array_equal(new_labels, labels):
            inertia = new_inertia
            break
        labels = new_labels
        inertia = new_inertia
        for c in range(k):
            centroids[c] = points[labels == c].mean(axis=0)
    return labels, centroids, inertia


def kmeans(points, k: int, rng: np.random.Generator, n_init: int = KMEANS_RESTARTS):
    """Best-of-n_init k-means. Returns (labels, centroids, inertia)."""
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise ValueError("empty point list")
    if k < 1:
        raise ValueError("k must be >= 1")
    best = None
    for _ in range(n_init):
        seed_centroids = _kmeanspp_seed(pts, k, rng)
        labels, centroids, inertia = _lloyd(pts, seed_centroids.copy())
        if best is None or inertia < best[2]:
            best = (labels, centroids, inertia)
    return best


def silhouette_samples(points, assignment) -> np.ndarray:
    """Per-sample silhouette values s_i = (b_i - a_i) / max(a_i, b_i).

    a_i is the mean distance to the other members of the own cluster, b_i the
    smallest mean distance to another cluster. Singleton clusters and the
    degenerate a_i = b_i = 0 case score 0 by convention.
    """
    pts = np.asarray(points, dtype=float)
    labels = np.asarray(assignment)
    clusters = np.unique(labels)
    if clusters.size < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    n = pts.shape[0]
    dist = np.sqrt(np.maximum(0.0, np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)))
    sums = np.stack([dist[:, labels == c].sum(axis=1) for c in clusters], axis=1)
    counts = np.array([(labels == c).sum() for c in clusters])
    s = np.zeros(n, dtype=float)
    for i in range(n):
        own = int(np.where(clusters == labels[i])[0][0])
        if counts[own] <= 1:
            continue
        a = sums[i, own] / (counts[own] - 1)
        other = [sums[i, c] / counts[c] for c in range(clusters.size) if c != own]
        b = min(other)
        denom = max(a, b)
        s[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return s


def silhouette_sample(i: int, assignment, points) -> float:
    """Silhouette value of one sample (convenience scalar form)."""
    return float(silhouette_samples(points, assignment)[i])


def select_k(points, k_max: int, rng: np.random.Generator) -> ClusterPlan:
    """Cluster with the silhouette-maximizing k in {2..k_max}, ties to smaller k.

    Fewer than 3 points or fully coincident points fall back to a single
    cluster (silhouette undefined below 2 clusters).
    """
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    degenerate = n < 3 or np.all(np.all(pts == pts[0], axis=1))
    if degenerate:
        return ClusterPlan(
            k_star=1,
            assignment=np.zeros(n, dtype=np.int64),
            centroids=pts.mean(axis=0, keepdims=True),
            silhouette_mean=0.0,
            active_uavs=[0],
        )
    best = None
    for k in range(2, min(k_max, n) + 1):
        labels, centroids, _ = kmeans(pts, k, rng)
        score = float(silhouette_samples(pts, labels).mean())
        if best is None or score > best[0]:
            best = (score, k, labels, centroids)
    score, k_star, labels, centroids = best
    return ClusterPlan(
        k_star=k_star,
        assignment=labels,
        centroids=centroids,
        silhouette_mean=score,
        active_uavs=list(range(k_star)),
    )


def match_to_previous(plan: ClusterPlan, prev_centroids: dict[int, np.ndarray], k_max: int) -> ClusterPlan:
    """Relabel clusters onto UAV indices, greedily pairing closest centroids.

    prev_centroids maps UAV index -> last known horizontal position. Pure
    relabeling: assignments and centroid coordinates are unchanged, only
    which UAV serves which cluster. Unmatched clusters take the lowest unused
    UAV indices.
    """
    k = plan.k_star
    if not prev_centroids:
        return plan
    pairs = sorted(
        (float(np.sum((np.asarray(xy) - plan.centroids[c]) ** 2)), uav, c)
        for uav, xy in prev_centroids.items()
        for c in range(k)
    )
    uav_of_cluster: dict[int, int] = {}
    used_uavs: set[int] = set()
    for _, uav, c in pairs:
        if c in uav_of_cluster or uav in used_uavs:
            continue
        uav_of_cluster[c] = uav
        used_uavs.add(uav)
    unused = [u for u in range(k_max) if u not in used_uavs]
    for c in range(k):
        if c not in uav_of_cluster:
            uav_of_cluster[c] = unused.pop(0)
    return ClusterPlan(
        k_star=k,
        assignment=plan.assignment,
        centroids=plan.centroids,
        silhouette_mean=plan.silhouette_mean,
        active_uavs=[uav_of_cluster[c] for c in range(k)],
    )


def place_uavs(plan: ClusterPlan, altitude_init: float, k_max: int):
    """UAV placements from a plan: (k_max, 3) xyz array plus active flags.

    UAV active_uavs[c] hovers over the centroid of cluster c at the initial
    altitude; all other UAVs are inactive (parked, zero coordinates).
    """
    xyz = np.zeros((k_max, 3), dtype=float)
    active = np.zeros(k_max, dtype=bool)
    for c, uav in enumerate(plan.active_uavs):
        xyz[uav, :2] = plan.centroids[c]
        xyz[uav, 2] = altitude_init
        active[uav] = True
    return xyz, active
