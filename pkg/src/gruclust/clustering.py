"""Gaussian mixture fitting by EM with BIC model selection and soft
assignment, used to turn learned embeddings into behavioral subtypes.

Fits are deterministic for a fixed seed: initialization draws k-means++
style centers over a canonically sorted view of the points, so permuting
the input order cannot change the selected solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng, logsumexp
from .serialize import load_arrays, save_arrays

MIXTURE_FORMAT = "mixture-checkpoint-v1"


@dataclass
class GmmModel:
    weights: np.ndarray       # (K,) simplex
    means: np.ndarray         # (K, p)
    covariances: np.ndarray   # (K, p, p), SPD after ridge
    log_likelihood: float     # on the fitting data
    n_iter: int
    converged: bool
    ridge: float
    cov_mode: str             # "full" | "diag"
    seed: int
    ll_trace: list = field(default_factory=list)  # per-iteration LL, not serialized

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _log_gauss(points: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log density of N(mean, cov) at each row of points, via Cholesky."""
    p = mean.shape[0]
    chol = np.linalg.cholesky(cov)
    diff = points - mean
    z = np.linalg.solve(chol, diff.T)  # chol is lower triangular
    quad = np.sum(z * z, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (quad + logdet + p * math.log(2.0 * math.pi))


def _component_logpdfs(points, weights, means, covs):
    N, K = points.shape[0], weights.shape[0]
    out = np.empty((N, K))
    for k in range(K):
        out[:, k] = math.log(weights[k]) + _log_gauss(points, means[k], covs[k])
    return out


def _kmeanspp_centers(points_sorted: np.ndarray, K: int, rng: Rng) -> np.ndarray:
    N = points_sorted.shape[0]
    centers = [points_sorted[rng.randbelow(N)]]
    for _ in range(1, K):
        d2 = np.min(
            [np.sum((points_sorted - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0.0:
            centers.append(points_sorted[rng.randbelow(N)])
            continue
        u = rng.uniform() * total
        idx = int(np.searchsorted(np.cumsum(d2), u, side="right"))
        centers.append(points_sorted[min(idx, N - 1)])
    return np.stack(centers)


def _initial_model(points, points_sorted, K, rng, ridge, cov_mode):
    centers = _kmeanspp_centers(points_sorted, K, rng)
    d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    assign = np.argmin(d2, axis=1)
    p = points.shape[1]
    global_cov = np.cov(points.T).reshape(p, p)
    if cov_mode == "diag":
        global_cov = np.diag(np.diag(global_cov))
    global_cov = global_cov + ridge * np.eye(p)
    means = np.empty((K, p))
    weights = np.empty(K)
    for k in range(K):
        mask = assign == k
        weights[k] = max(mask.sum(), 1e-10)
        means[k] = points[mask].mean(axis=0) if mask.any() else centers[k]
    weights /= weights.sum()
    covs = np.repeat(global_cov[None], K, axis=0)
    return weights, means, covs


def _em_run(points, K, rng, max_iter, tol, ridge, cov_mode):
    """One EM run from one initialization; raises LinAlgError on singularity.

    The ridge added in the M-step makes EM very slightly non-monotone near
    degenerate optima, so a negative log-likelihood gain (which is below
    tol by definition) stops the run with a rollback to the better iterate.
    A decrease in a ridge-free fit is a genuine EM bug and raises.
    """
    N, p = points.shape
    order = np.lexsort(points.T[::-1])
    weights, means, covs = _initial_model(points, points[order], K, rng, ridge)

    prev_ll = -np.inf
    prev_model = (weights, means, covs)
    ll = -np.inf
    ll_trace: list[float] = []
    n_iter = 0
    converged = False
    for it in range(1, max_iter + 1):
        n_iter = it
        log_joint = _component_logpdfs(points, weights, means, covs)
        log_norm = logsumexp(log_joint, axis=1)
        ll = float(np.sum(log_norm))
        ll_trace.append(ll)
        if it > 1 and ll - prev_ll < tol:
            converged = True
            if ll < prev_ll:
                if ridge == 0.0 and ll < prev_ll - 1e-8:
                    raise FloatingPointError(
                        f"EM log-likelihood decreased at iteration {it}: {prev_ll} -> {ll}"
                    )
                weights, means, covs = prev_model
                ll = prev_ll
            break
        prev_ll = ll
        prev_model = (weights.copy(), means.copy(), covs.copy())
        resp = np.exp(log_joint - log_norm[:, None])
        nk = resp.sum(axis=0)
        weights = nk / N
        means = (resp.T @ points) / nk[:, None]
        covs = covs.copy()
        for k in range(K):
            diff = points - means[k]
            cov = (resp[:, k][:, None] * diff).T @ diff / nk[k]
            if cov_mode == "diag":
                cov = np.diag(np.diag(cov))
            covs[k] = cov + ridge * np.eye(p)
        np.linalg.cholesky(covs)  # singularity check for every component
    return weights, means, covs, ll, n_iter, converged, ll_trace


def _canonicalize(weights, means, covs):
    """Stable component order: ascending first mean coordinate, then weight."""
    order = sorted(range(weights.shape[0]), key=lambda k: (means[k, 0], weights[k]))
    return weights[order], means[order], covs[order]


def gmm_fit(points, K: int, seed: int, max_iter: int = 500, tol: float = 1e-6,
            ridge: float = 1e-6, cov_mode: str = "full", n_init: int = 3) -> GmmModel:
    """Fit a K-component Gaussian mixture by EM.

    Runs ``n_init`` k-means++-seeded starts and keeps the best final
    log-likelihood.  A start whose components go numerically singular is
    retried with a fresh derived seed, up to 5 extra attempts in total.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2:
        raise ValueError("points must be a 2-D array")
    if not np.all(np.isfinite(points)):
        raise ValueError("points must be finite")
    N = points.shape[0]
    if N < K:
        raise ValueError(f"need at least K={K} points, got {N}")
    if cov_mode not in ("full", "diag"):
        raise ValueError(f"unknown covariance mode {cov_mode!r}")

    root = Rng(seed)
    best = None
    attempt = 0
    successes = 0
    while successes < n_init and attempt < n_init + 5:
        rng = root.spawn(attempt)
        attempt += 1
        try:
            result = _em_run(points, K, rng, max_iter, tol, ridge, cov_mode)
        except np.linalg.LinAlgError:
            continue
        successes += 1
        if best is None or result[3] > best[3]:
            best = result
    if best is None:
        raise np.linalg.LinAlgError(
            f"all EM starts hit singular components for K={K} (attempts={attempt})"
        )
    weights, means, covs, ll, n_iter, converged, ll_trace = best
    weights, means, covs = _canonicalize(weights, means, covs)
    return GmmModel(weights=weights, means=means, covariances=covs,
                    log_likelihood=ll, n_iter=n_iter, converged=converged,
                    ridge=ridge, cov_mode=cov_mode, seed=seed, ll_trace=ll_trace)


def num_free_params(K: int, p: int, cov_mode: str = "full") -> int:
    """Free-parameter count for the BIC penalty."""
    per_cov = p * (p + 1) // 2 if cov_mode == "full" else p
    return (K - 1) + K * p + K * per_cov


def bic(model: GmmModel, points) -> float:
    """-2 log L + m ln N for the given points under the fitted model."""
    points = np.asarray(points, dtype=float)
    if points.shape[1] != model.dim:
        raise ValueError(f"points dim {points.shape[1]} != model dim {model.dim}")
    log_joint = _component_logpdfs(points, model.weights, model.means, model.covariances)
    ll = float(np.sum(logsumexp(log_joint, axis=1)))
    m = num_free_params(model.K, model.dim, model.cov_mode)
    return -2.0 * ll + m * math.log(points.shape[0])


def select_k(points, k_range=range(1, 10), seed: int = 0, max_iter: int = 500,
             tol: float = 1e-6, ridge: float = 1e-6, cov_mode: str = "full"):
    """Fit each K and return (best model, BIC table); ties go to smaller K.

    The table rows are (K, bic, log_likelihood, n_iter, converged).
    """
    ks = sorted(k_range)
    if not ks:
        raise ValueError("empty k_range")
    root = Rng(seed)
    table = []
    best_model, best_bic = None, np.inf
    for K in ks:
        model = gmm_fit(points, K, seed=root.spawn(K).seed, max_iter=max_iter,
                        tol=tol, ridge=ridge, cov_mode=cov_mode)
        value = bic(model, points)
        table.append((K, value, model.log_likelihood, model.n_iter, model.converged))
        if value < best_bic:
            best_bic, best_model = value, model
    return best_model, table


def soft_assign(model: GmmModel, points) -> np.ndarray:
    """Posterior responsibilities, normalized per row in log space."""
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        return np.zeros((0, model.K))
    if points.ndim != 2 or points.shape[1] != model.dim:
        raise ValueError(f"points shape {points.shape} incompatible with model dim {model.dim}")
    log_joint = _component_logpdfs(points, model.weights, model.means, model.covariances)
    return np.exp(log_joint - logsumexp(log_joint, axis=1)[:, None])


def transfer_assign(model: GmmModel, external_points) -> np.ndarray:
    """Assign a frozen-encoder external cohort to the discovery mixture.

    Same math as :func:`soft_assign`; the mixture is not refitted.
    """
    return soft_assign(model, external_points)


def hard_labels(responsibilities: np.ndarray) -> np.ndarray:
    """Argmax assignment; ties break toward the lower component index."""
    if responsibilities.shape[0] == 0:
        return np.zeros(0, dtype=int)
    return np.argmax(responsibilities, axis=1)


def save_mixture(path, model: GmmModel, extra_meta: dict | None = None) -> None:
    arrays = {
        "weights": model.weights,
        "means": model.means,
        "covariances": model.covariances,
    }
    meta = {
        "format": MIXTURE_FORMAT,
        "log_likelihood": model.log_likelihood,
        "n_iter": model.n_iter,
        "converged": model.converged,
        "ridge": model.ridge,
        "cov_mode": model.cov_mode,
        "seed": model.seed,
    }
    if extra_meta:
        meta.update(extra_meta)
    save_arrays(path, arrays, meta)


def load_mixture(path) -> GmmModel:
    arrays, meta = load_arrays(path)
    if meta.get("format") != MIXTURE_FORMAT:
        raise ValueError(f"{path}: not a mixture checkpoint")
    return GmmModel(
        weights=arrays["weights"], means=arrays["means"],
        covariances=arrays["covariances"],
        log_likelihood=meta["log_likelihood"], n_iter=meta["n_iter"],
        converged=meta["converged"], ridge=meta["ridge"],
        cov_mode=meta["cov_mode"], seed=meta["seed"],
    )
