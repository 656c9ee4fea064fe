"""Classical comparison pipelines: PCA+GMM, k-means on flattened windows,
and time-series k-means, all emitting the same report schema as the main
model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import gmm_fit, hard_labels, soft_assign
from .metrics import EvalReport, davies_bouldin, roc_auc, silhouette
from .numerics import Rng


@dataclass
class BaselineResult:
    method: str
    labels: np.ndarray
    scores: np.ndarray | None
    report: EvalReport


def pca_fit(X: np.ndarray):
    """Column means, principal axes (rows), and singular values."""
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    _, svals, vt = np.linalg.svd(X - mean, full_matrices=False)
    # canonical sign: largest-|loading| entry of each axis is positive
    for j in range(vt.shape[0]):
        i = int(np.argmax(np.abs(vt[j])))
        if vt[j, i] < 0:
            vt[j] = -vt[j]
    return mean, vt, svals


def pca_project(X: np.ndarray, k: int) -> np.ndarray:
    """Center and project onto the top-k principal axes."""
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError("pca input must be finite")
    if k < 1 or k > min(X.shape):
        raise ValueError(f"k={k} out of range for data shape {X.shape}")
    mean, vt, _ = pca_fit(X)
    return (X - mean) @ vt[:k].T


def pca_k_for_variance(X: np.ndarray, threshold: float = 0.9, cap: int = 10) -> int:
    """Smallest k whose components explain >= threshold of variance."""
    _, _, svals = pca_fit(X)
    var = svals**2
    frac = np.cumsum(var) / var.sum()
    k = int(np.searchsorted(frac, threshold) + 1)
    return max(1, min(k, cap, len(svals)))


def _lloyd(X, centers, max_iter):
    inertia = np.inf
    labels = np.zeros(X.shape[0], dtype=int)
    for _ in range(max_iter):
        d2 = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(d2, axis=1)
        new_inertia = float(d2[np.arange(X.shape[0]), labels].sum())
        for k in range(centers.shape[0]):
            mask = labels == k
            if mask.any():
                centers[k] = X[mask].mean(axis=0)
            else:
                # farthest-point repair for an emptied cluster
                far = int(np.argmax(d2[np.arange(X.shape[0]), labels]))
                centers[k] = X[far]
        if new_inertia >= inertia - 1e-12:
            inertia = min(inertia, new_inertia)
            break
        inertia = new_inertia
    d2 = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(X.shape[0]), labels].sum())
    return labels, centers, inertia


def _kmeanspp(X_sorted, K, rng: Rng):
    N = X_sorted.shape[0]
    centers = [X_sorted[rng.randbelow(N)]]
    for _ in range(1, K):
        d2 = np.min([np.sum((X_sorted - c) ** 2, axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0.0:
            centers.append(X_sorted[rng.randbelow(N)])
            continue
        u = rng.uniform() * total
        idx = int(np.searchsorted(np.cumsum(d2), u, side="right"))
        centers.append(X_sorted[min(idx, N - 1)])
    return np.stack(centers)


def kmeans(X, K: int, seed: int = 0, restarts: int = 3, max_iter: int = 100):
    """Lloyd iterations from k-means++ seeding; best inertia over restarts."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] < K:
        raise ValueError(f"need at least K={K} points, got {X.shape[0]}")
    order = np.lexsort(X.T[::-1])
    X_sorted = X[order]
    root = Rng(seed)
    best = None
    for r in range(restarts):
        centers = _kmeanspp(X_sorted, K, root.spawn(r)).copy()
        labels, centers, inertia = _lloyd(X, centers, max_iter)
        if best is None or inertia < best[2]:
            best = (labels, centers, inertia)
    return best


def ts_kmeans(windows, K: int, seed: int = 0, restarts: int = 3,
              max_iter: int = 100) -> np.ndarray:
    """k-means over whole sequences with Euclidean distance.

    For equal-length windows this is k-means on the flattened (T*d)
    vectors; it is kept as its own entry point so a different sequence
    metric can slot in later.
    """
    windows = np.asarray(windows, dtype=float)
    if windows.ndim != 3:
        raise ValueError("windows must be (N, T, d)")
    flat = windows.reshape(windows.shape[0], -1)
    labels, _, _ = kmeans(flat, K, seed=seed, restarts=restarts, max_iter=max_iter)
    return labels


def prevalence_scores(cluster_scores, y) -> np.ndarray:
    """Membership probability of the cluster with the higher outcome
    prevalence, the only score an unsupervised baseline can offer.

    ``cluster_scores`` is either a hard label vector or an (N, K)
    responsibility matrix.
    """
    y = np.asarray(y).astype(int)
    scores = np.asarray(cluster_scores, dtype=float)
    if scores.ndim == 1:
        k = int(scores.max()) + 1
        resp = np.zeros((scores.shape[0], k))
        resp[np.arange(scores.shape[0]), scores.astype(int)] = 1.0
    else:
        resp = scores
    labels = np.argmax(resp, axis=1)
    prevalence = np.full(resp.shape[1], -np.inf)
    for k in range(resp.shape[1]):
        mask = labels == k
        if mask.any():
            prevalence[k] = y[mask].mean()
    return resp[:, int(np.argmax(prevalence))]


def baseline_auc(cluster_scores, y) -> float:
    """AUC of prevalence-ordered cluster membership."""
    return roc_auc(np.asarray(y).astype(int), prevalence_scores(cluster_scores, y))


def run_baselines(windows, y, K: int = 2, seed: int = 0) -> list[BaselineResult]:
    """Fit all three classical baselines on standardized windows."""
    windows = np.asarray(windows, dtype=float)
    y = np.asarray(y).astype(int)
    flat = windows.reshape(windows.shape[0], -1)
    results = []

    k_pca = pca_k_for_variance(flat)
    scores = pca_project(flat, k_pca)
    gmm = gmm_fit(scores, K, seed=seed)
    resp = soft_assign(gmm, scores)
    labels = hard_labels(resp)
    auc_scores = prevalence_scores(resp, y)
    results.append(BaselineResult(
        method="pca_gmm", labels=labels, scores=auc_scores,
        report=EvalReport(
            silhouette=silhouette(scores, labels),
            dbi=davies_bouldin(scores, labels),
            auc=roc_auc(y, auc_scores), mse=None,
            extras={"pca_components": k_pca},
        ),
    ))

    labels, _, _ = kmeans(flat, K, seed=seed)
    auc_scores = prevalence_scores(labels, y)
    results.append(BaselineResult(
        method="kmeans", labels=labels, scores=auc_scores,
        report=EvalReport(
            silhouette=silhouette(flat, labels),
            dbi=davies_bouldin(flat, labels),
            auc=roc_auc(y, auc_scores), mse=None,
        ),
    ))

    labels = ts_kmeans(windows, K, seed=seed)
    auc_scores = prevalence_scores(labels, y)
    results.append(BaselineResult(
        method="ts_kmeans", labels=labels, scores=auc_scores,
        report=EvalReport(
            silhouette=silhouette(flat, labels),
            dbi=davies_bouldin(flat, labels),
            auc=roc_auc(y, auc_scores), mse=None,
        ),
    ))
    return results
