"""ISODATA clustering for visualizing learned feature maps.

Iterative nearest-centroid assignment with optional cluster splitting
(when a cluster's largest per-dimension standard deviation exceeds
split_std) and merging (when two centroids come closer than
merge_dist).  Fully deterministic given the seed; ties in assignment go
to the lowest cluster index.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

from .errors import UsageError


def _assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return np.argmin(cdist(points, centroids), axis=1)


def isodata_cluster(
    features: np.ndarray,
    k_init: int,
    split_std: float | None = None,
    merge_dist: float | None = None,
    max_iter: int = 20,
    min_cluster_size: int = 1,
    max_clusters: int | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Cluster feature vectors; returns an integer label map.

    features is (H, W, C) or (N, C); the returned labels have the same
    leading shape.  Labels are renumbered 0..k-1 in order of first
    occurrence, so reruns with the same seed are identical.
    """
    if k_init < 1:
        raise UsageError(f"k_init must be >= 1, got {k_init}")
    arr = np.asarray(features, dtype=np.float64)
    spatial_shape = None
    if arr.ndim == 3:
        spatial_shape = arr.shape[:2]
        arr = arr.reshape(-1, arr.shape[2])
    elif arr.ndim != 2:
        raise UsageError(f"features must be (H, W, C) or (N, C), got shape {arr.shape}")
    n = arr.shape[0]
    if n == 0:
        raise UsageError("no feature points to cluster")

    rng = np.random.default_rng(seed)
    k = min(k_init, n)
    centroids = arr[rng.choice(n, size=k, replace=False)].copy()
    if max_clusters is None:
        max_clusters = max(k_init * 2, k_init + 4)

    labels = _assign(arr, centroids)
    for _ in range(max_iter):
        changed = False

        # drop empty/undersized clusters
        sizes = np.bincount(labels, minlength=len(centroids))
        keep = sizes >= max(min_cluster_size, 1)
        if not keep.all():
            if not keep.any():
                keep[np.argmax(sizes)] = True
            centroids = centroids[keep]
            labels = _assign(arr, centroids)
            sizes = np.bincount(labels, minlength=len(centroids))
            changed = True

        # recenter
        new_centroids = np.stack([
            arr[labels == i].mean(axis=0) if sizes[i] else centroids[i]
            for i in range(len(centroids))
        ])
        if not np.allclose(new_centroids, centroids, rtol=0.0, atol=1e-12):
            changed = True
        centroids = new_centroids

        # split spread-out clusters
        if split_std is not None and len(centroids) < max_clusters:
            additions = []
            for i in range(len(centroids)):
                members = arr[labels == i]
                if len(members) < 2 * max(min_cluster_size, 1):
                    continue
                stds = members.std(axis=0)
                dim = int(np.argmax(stds))
                if stds[dim] > split_std and len(centroids) + len(additions) < max_clusters:
                    offset = np.zeros(arr.shape[1])
                    offset[dim] = 0.5 * stds[dim]
                    additions.append(centroids[i] + offset)
                    centroids[i] = centroids[i] - offset
            if additions:
                centroids = np.vstack([centroids, additions])
                changed = True

        # merge near-duplicate centroids (each at most once per pass)
        if merge_dist is not None and len(centroids) > 1:
            dists = cdist(centroids, centroids)
            np.fill_diagonal(dists, np.inf)
            merged_away = set()
            sizes = np.bincount(labels, minlength=len(centroids))
            for i in range(len(centroids)):
                if i in merged_away:
                    continue
                j = int(np.argmin(dists[i]))
                if j in merged_away or dists[i, j] >= merge_dist or j <= i:
                    continue
                wi, wj = max(sizes[i], 1), max(sizes[j], 1)
                centroids[i] = (wi * centroids[i] + wj * centroids[j]) / (wi + wj)
                merged_away.add(j)
            if merged_away:
                centroids = np.delete(centroids, sorted(merged_away), axis=0)
                changed = True

        new_labels = _assign(arr, centroids)
        if not changed and np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels

    # stable relabeling by first occurrence
    remap: dict[int, int] = {}
    out = np.empty(n, dtype=np.int32)
    for idx, lab in enumerate(labels):
        if lab not in remap:
            remap[lab] = len(remap)
        out[idx] = remap[lab]
    if spatial_shape is not None:
        return out.reshape(spatial_shape)
    return out
