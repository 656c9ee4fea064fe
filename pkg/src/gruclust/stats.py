"""Subtype comparison battery: per-feature Mann-Whitney U tests with
Benjamini-Hochberg FDR correction and Cohen's d effect sizes.

Tests are two-sided.  The sign convention for d is (cluster 1 mean -
cluster 0 mean) / pooled SD, so a positive d means the value is larger in
cluster 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .serialize import write_csv

# exact null enumeration is used for small samples, the tie-corrected
# normal approximation otherwise
EXACT_MIN_GROUP = 8
EXACT_MAX_TOTAL = 64


@dataclass
class FeatureTestResult:
    feature: str
    mean_a: float
    sd_a: float
    mean_b: float
    sd_b: float
    u_stat: float
    p_value: float
    q_value: float
    cohens_d: float


def _midranks(values: np.ndarray) -> np.ndarray:
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


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _exact_u_distribution(ranks2: np.ndarray, n_a: int) -> np.ndarray:
    """Counts of each doubled rank-sum over all C(n, n_a) group assignments.

    Ranks are doubled so midranks become integers; counts fit exactly in
    float64 for the sizes this branch accepts.
    """
    total = int(ranks2.sum())
    dp = np.zeros((n_a + 1, total + 1))
    dp[0, 0] = 1.0
    for r in ranks2:
        r = int(r)
        dp[1:, r:] += dp[:-1, : total + 1 - r]
    return dp[n_a]


def mann_whitney_u(a, b) -> tuple[float, float]:
    """Two-sided Mann-Whitney U test with midrank ties.

    Returns (U, p) where U counts pairs in which `a` exceeds `b` (ties
    half).  Small samples get the exact permutation null; larger ones the
    normal approximation with tie-corrected variance and continuity
    correction.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    n_a, n_b = a.size, b.size
    if n_a == 0 or n_b == 0:
        raise ValueError("both samples must be nonempty")
    pooled = np.concatenate([a, b])
    if not np.all(np.isfinite(pooled)):
        raise ValueError("samples must be finite")
    ranks = _midranks(pooled)
    u_a = float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2.0)
    n = n_a + n_b

    if min(n_a, n_b) <= EXACT_MIN_GROUP and n <= EXACT_MAX_TOTAL:
        ranks2 = np.rint(2.0 * ranks).astype(int)
        counts = _exact_u_distribution(ranks2, n_a)
        total = counts.sum()
        # doubled rank-sum for group a maps to U via the same shift
        s2 = int(round(2.0 * ranks[:n_a].sum()))
        sums = np.arange(counts.size)
        cdf = counts[sums <= s2].sum() / total
        sf = counts[sums >= s2].sum() / total
        return u_a, min(1.0, 2.0 * min(cdf, sf))

    mean_u = n_a * n_b / 2.0
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts)) / (n * (n - 1))
    var_u = n_a * n_b / 12.0 * ((n + 1) - tie_term)
    if var_u <= 0.0:
        return u_a, 1.0
    cc = 0.5 if u_a != mean_u else 0.0
    z = (u_a - mean_u - math.copysign(cc, u_a - mean_u)) / math.sqrt(var_u)
    return u_a, min(1.0, 2.0 * _norm_sf(abs(z)))


def bh_fdr(pvals) -> np.ndarray:
    """Benjamini-Hochberg step-up q-values, clamped to 1, input order."""
    p = np.asarray(pvals, dtype=float).reshape(-1)
    if p.size == 0:
        return p.copy()
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="mergesort")
    q_sorted = p[order] * m / np.arange(1, m + 1)
    q_sorted = np.minimum.accumulate(q_sorted[::-1])[::-1]
    q = np.empty(m)
    q[order] = np.minimum(q_sorted, 1.0)
    return q


def cohens_d(a, b) -> float:
    """(mean_b - mean_a) / pooled SD; positive when group b is larger."""
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.size < 2 or b.size < 2:
        raise ValueError("cohens_d needs at least 2 values per group")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    pooled = math.sqrt(((a.size - 1) * va + (b.size - 1) * vb) / (a.size + b.size - 2))
    if pooled == 0.0:
        raise ValueError("degenerate feature: pooled standard deviation is zero")
    return float((b.mean() - a.mean()) / pooled)


def subtype_table(features: dict[str, np.ndarray], labels,
                  feature_names=None) -> list[FeatureTestResult]:
    """Test every feature between cluster 0 and cluster 1, BH-correct the
    p-values jointly, and rank by |d| descending."""
    labels = np.asarray(labels)
    names = list(feature_names) if feature_names is not None else sorted(features)
    missing = [n for n in names if n not in features]
    if missing:
        raise ValueError(f"missing feature column(s): {missing}")
    if not names:
        return []
    mask_a = labels == 0
    mask_b = labels == 1
    if mask_a.sum() < 2 or mask_b.sum() < 2:
        raise ValueError("need at least 2 participants in each cluster")
    rows = []
    pvals = []
    for name in names:
        col = np.asarray(features[name], dtype=float).reshape(-1)
        if col.shape[0] != labels.shape[0]:
            raise ValueError(f"feature {name} length {col.shape[0]} != labels {labels.shape[0]}")
        a, b = col[mask_a], col[mask_b]
        u, p = mann_whitney_u(a, b)
        d = cohens_d(a, b)
        rows.append(FeatureTestResult(
            feature=name,
            mean_a=float(a.mean()), sd_a=float(a.std(ddof=1)),
            mean_b=float(b.mean()), sd_b=float(b.std(ddof=1)),
            u_stat=u, p_value=p, q_value=np.nan, cohens_d=d,
        ))
        pvals.append(p)
    qvals = bh_fdr(pvals)
    for row, q in zip(rows, qvals):
        row.q_value = float(q)
    rows.sort(key=lambda r: (-abs(r.cohens_d), r.feature))
    return rows


def write_subtype_table(path, rows: list[FeatureTestResult]) -> None:
    header = ["feature", "cluster0_mean", "cluster0_sd", "cluster1_mean",
              "cluster1_sd", "u_stat", "p_value", "q_value", "cohens_d"]
    write_csv(path, header, [
        [r.feature, r.mean_a, r.sd_a, r.mean_b, r.sd_b, r.u_stat,
         r.p_value, r.q_value, r.cohens_d]
        for r in rows
    ])
