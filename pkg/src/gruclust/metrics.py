"""Evaluation measures: ROC-AUC, silhouette, Davies-Bouldin, adjusted Rand
index, and the leave-out resampling protocol for cluster stability.

Hard labels for the geometric metrics are argmax responsibilities; distances
are Euclidean throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clustering import GmmModel, gmm_fit, hard_labels, soft_assign
from .numerics import Rng
from .serialize import write_csv, write_json


@dataclass
class EvalReport:
    silhouette: float
    dbi: float
    mse: float | None = None
    auc: float | None = None
    split: str = ""
    seed: int = 0
    config_hash: str = ""
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "mse": self.mse, "auc": self.auc,
            "silhouette": self.silhouette, "dbi": self.dbi,
            "split": self.split, "seed": self.seed, "config_hash": self.config_hash,
        }
        d.update(self.extras)
        return d

    def write(self, csv_path, json_path) -> None:
        d = self.to_dict()
        keys = sorted(d)
        write_csv(csv_path, keys, [[("" if d[k] is None else d[k]) for k in keys]])
        write_json(json_path, d)


@dataclass
class StabilityResult:
    ari_values: np.ndarray
    leave_out_sizes: np.ndarray
    seed: int

    @property
    def trials(self) -> int:
        return self.ari_values.shape[0]

    @property
    def mean_ari(self) -> float:
        return float(np.mean(self.ari_values))

    def write(self, csv_path, json_path) -> None:
        rows = [
            [i, int(self.leave_out_sizes[i]), float(self.ari_values[i])]
            for i in range(self.trials)
        ]
        write_csv(csv_path, ["trial", "left_out", "ari"], rows)
        write_json(json_path, {
            "trials": self.trials, "mean_ari": self.mean_ari, "seed": self.seed,
            "min_ari": float(np.min(self.ari_values)),
            "max_ari": float(np.max(self.ari_values)),
        })


def _midranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..N with ties given the mean of their rank range."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(labels, scores) -> float:
    """P(random positive outscores random negative), ties counted half."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=float)
    if labels.shape != scores.shape:
        raise ValueError("labels and scores must have equal length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    ranks = _midranks(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _pairwise_dist(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def silhouette(points, labels) -> float:
    """Mean (b - a) / max(a, b); singleton-cluster points score 0."""
    points = np.asarray(points, dtype=float)
    labels = np.asarray(labels)
    n = points.shape[0]
    if n < 3:
        raise ValueError("silhouette needs at least 3 points")
    uniq = np.unique(labels)
    if uniq.shape[0] < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    D = _pairwise_dist(points)
    masks = {c: labels == c for c in uniq}
    sizes = {c: int(masks[c].sum()) for c in uniq}
    scores = np.zeros(n)
    for i in range(n):
        c = labels[i]
        if sizes[c] == 1:
            continue
        a = D[i, masks[c]].sum() / (sizes[c] - 1)
        b = min(D[i, masks[o]].mean() for o in uniq if o != c)
        scores[i] = (b - a) / max(a, b)
    return float(scores.mean())


def davies_bouldin(points, labels) -> float:
    """Mean over clusters of the worst (s_i + s_j) / d_ij ratio."""
    points = np.asarray(points, dtype=float)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    k = uniq.shape[0]
    if k < 2:
        raise ValueError("davies_bouldin needs at least 2 clusters")
    centroids = np.stack([points[labels == c].mean(axis=0) for c in uniq])
    scatter = np.array([
        np.linalg.norm(points[labels == c] - centroids[i], axis=1).mean()
        for i, c in enumerate(uniq)
    ])
    total = 0.0
    for i in range(k):
        worst = 0.0
        for j in range(k):
            if i == j:
                continue
            dij = np.linalg.norm(centroids[i] - centroids[j])
            if dij == 0.0:
                raise ValueError("degenerate clustering: coincident centroids")
            worst = max(worst, (scatter[i] + scatter[j]) / dij)
        total += worst
    return float(total / k)


def _comb2(x):
    return x * (x - 1) / 2.0


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected pair-counting agreement between two partitions."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ValueError("partitions must have equal length")
    n = a.shape[0]
    if n < 2:
        raise ValueError("adjusted_rand_index needs at least 2 items")
    ua, ia = np.unique(a, return_inverse=True)
    ub, ib = np.unique(b, return_inverse=True)
    cont = np.zeros((ua.shape[0], ub.shape[0]))
    np.add.at(cont, (ia, ib), 1.0)
    sum_ij = _comb2(cont).sum()
    sum_a = _comb2(cont.sum(axis=1)).sum()
    sum_b = _comb2(cont.sum(axis=0)).sum()
    total = _comb2(n)
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def stability_resample(embeddings, model: GmmModel, trials: int = 200,
                       max_leave_out: int = 50, seed: int = 0,
                       max_iter: int = 200) -> StabilityResult:
    """Leave-out resampling: drop n ~ U{1..max_leave_out} points, refit the
    mixture with the same K, and score ARI against the original hard labels
    on the retained points."""
    embeddings = np.asarray(embeddings, dtype=float)
    N = embeddings.shape[0]
    if N <= max_leave_out:
        raise ValueError(f"need more than {max_leave_out} points, got {N}")
    base_labels = hard_labels(soft_assign(model, embeddings))
    root = Rng(seed)
    aris = np.empty(trials)
    sizes = np.empty(trials, dtype=int)
    for trial in range(trials):
        rng = root.spawn(trial)
        n_out = rng.randint(1, max_leave_out)
        sizes[trial] = n_out
        dropped = set(rng.sample_indices(N, n_out))
        keep = np.array([i for i in range(N) if i not in dropped])
        refit = gmm_fit(embeddings[keep], model.K, seed=rng.spawn(0).seed,
                        max_iter=max_iter, cov_mode=model.cov_mode,
                        ridge=model.ridge)
        new_labels = hard_labels(soft_assign(refit, embeddings[keep]))
        aris[trial] = adjusted_rand_index(base_labels[keep], new_labels)
    return StabilityResult(ari_values=aris, leave_out_sizes=sizes, seed=seed)
