"""Joint training: weighted reconstruction + outcome objective with
gradient surgery, global-norm clipping, Adam with L2 regularization,
plateau LR scheduling, and early stopping on the validation metric.

Gradient surgery operates on the task gradients already scaled by their
objective weights, so the no-conflict branch returns exactly the joint
gradient.  All loops are driven by derived child RNGs in a fixed order;
two runs with the same seed and config are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .metrics import roc_auc
from .model import ModelConfig, ModelParams, backward, forward, init_params
from .numerics import Rng
from .serialize import write_csv


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.7
    beta: float = 1.0
    lr_init: float = 1e-5
    batch_size: int = 64
    max_epochs: int = 50
    clip_norm: float = 1.0
    weight_decay: float = 1e-4
    scheduler_factor: float = 0.5
    scheduler_patience: int = 3
    early_stop_patience: int = 10
    improvement_threshold: float = 1e-4
    lr_floor: float = 1e-8
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("objective weights must be nonnegative")
        if self.lr_init <= 0 or self.clip_norm <= 0:
            raise ValueError("lr_init and clip_norm must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if not 0.0 < self.scheduler_factor < 1.0:
            raise ValueError("scheduler_factor must be in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Split:
    """Standardized windows and labels, already divided train/validation."""
    x_train: np.ndarray   # (N_tr, T, d)
    y_train: np.ndarray   # (N_tr,)
    x_val: np.ndarray
    y_val: np.ndarray


@dataclass
class TrainHistory:
    epoch: list[int] = field(default_factory=list)
    l_ae: list[float] = field(default_factory=list)
    l_bce: list[float | None] = field(default_factory=list)
    joint: list[float] = field(default_factory=list)
    val_auc: list[float | None] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    surgery_count: list[int] = field(default_factory=list)
    best_epoch: int = -1

    def has_auc(self) -> bool:
        return any(v is not None for v in self.val_auc)

    def write(self, path) -> None:
        cols = ["epoch", "l_ae"]
        if any(v is not None for v in self.l_bce):
            cols.append("l_bce")
        cols.append("joint")
        if self.has_auc():
            cols.append("val_auc")
        cols += ["val_mse", "lr", "surgery_count"]
        rows = []
        for i in range(len(self.epoch)):
            row = {
                "epoch": self.epoch[i], "l_ae": self.l_ae[i],
                "l_bce": "" if self.l_bce[i] is None else self.l_bce[i],
                "joint": self.joint[i],
                "val_auc": "" if self.val_auc[i] is None else self.val_auc[i],
                "val_mse": self.val_mse[i], "lr": self.lr[i],
                "surgery_count": self.surgery_count[i],
            }
            rows.append([row[c] for c in cols])
        write_csv(path, cols, rows)


def loss_reconstruction(x, x_hat, n: int) -> float:
    """Squared error normalized by n * T * d."""
    x = np.asarray(x, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    t, d = x.shape[-2], x.shape[-1]
    return float(np.sum((x - x_hat) ** 2) / (n * t * d))


def loss_bce(y, logit) -> float:
    """Mean binary cross-entropy from raw logits (log-sum-exp form)."""
    y = np.asarray(y, dtype=float)
    logit = np.asarray(logit, dtype=float)
    per = np.maximum(logit, 0.0) - logit * y + np.log1p(np.exp(-np.abs(logit)))
    return float(np.mean(per))


def joint_loss(l_ae: float, l_bce: float, cfg: TrainConfig) -> float:
    return cfg.alpha * l_ae + cfg.beta * l_bce


def gradient_surgery(g_ae: np.ndarray, g_bce: np.ndarray) -> np.ndarray:
    """Combine task gradients, projecting the conflicting component out of
    the reconstruction gradient when the inner product is negative."""
    g_ae = np.asarray(g_ae, dtype=float)
    g_bce = np.asarray(g_bce, dtype=float)
    if g_ae.shape != g_bce.shape:
        raise ValueError("task gradients must have equal dimensionality")
    dot = float(g_ae @ g_bce)
    if dot < 0.0:
        nb2 = float(g_bce @ g_bce)
        if nb2 >= 1e-24:  # ||g_bce|| >= 1e-12
            g_ae = g_ae - (dot / nb2) * g_bce
    return g_ae + g_bce


def surgery_conflicts(g_ae: np.ndarray, g_bce: np.ndarray) -> bool:
    """True iff the projection branch of gradient_surgery fires."""
    dot = float(np.asarray(g_ae) @ np.asarray(g_bce))
    return dot < 0.0 and float(np.asarray(g_bce) @ np.asarray(g_bce)) >= 1e-24


def clip_by_global_norm(g: np.ndarray, max_norm: float = 1.0) -> np.ndarray:
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = float(np.linalg.norm(g))
    if norm > max_norm:
        return g * (max_norm / norm)
    return g


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))


def adam_step(params: np.ndarray, g: np.ndarray, state: AdamState, t: int,
              lr: float, weight_decay: float = 0.0,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[np.ndarray, AdamState]:
    """Bias-corrected Adam on the flat parameter vector.

    The L2 term (weight_decay * params) is added to the gradient before
    the moment updates, i.e. classic L2 rather than decoupled decay.
    """
    if t < 1:
        raise ValueError("step index t starts at 1")
    g_eff = g + weight_decay * params
    state.m = beta1 * state.m + (1.0 - beta1) * g_eff
    state.v = beta2 * state.v + (1.0 - beta2) * g_eff * g_eff
    m_hat = state.m / (1.0 - beta1 ** t)
    v_hat = state.v / (1.0 - beta2 ** t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), state


def lr_on_plateau(metric_history, current_lr: float, factor: float,
                  patience: int, threshold: float = 1e-4,
                  floor: float = 1e-8) -> float:
    """Reduce the LR when the monitored metric (higher is better) has not
    improved by >= threshold for `patience` consecutive epochs."""
    if not 0.0 < factor < 1.0:
        raise ValueError("factor must be in (0, 1)")
    if patience < 1:
        raise ValueError("patience must be >= 1")
    history = list(metric_history)
    if len(history) <= patience:
        return current_lr
    best_before = max(history[:-patience])
    if max(history[-patience:]) < best_before + threshold:
        return max(current_lr * factor, floor)
    return current_lr


def _epoch_batches(n: int, batch_size: int, rng: Rng) -> list[np.ndarray]:
    idx = list(range(n))
    rng.shuffle(idx)
    return [np.array(idx[i:i + batch_size]) for i in range(0, n, batch_size)]


def _validation_metrics(params, model_cfg, split: Split):
    trace = forward(split.x_val, params, model_cfg, mode="eval")
    mse = loss_reconstruction(split.x_val, trace.x_hat, split.x_val.shape[0])
    auc = None
    if model_cfg.outcome_head_enabled:
        auc = roc_auc(split.y_val.astype(int), trace.y_prob)
    return mse, auc


def _check_split(split: Split, model_cfg: ModelConfig) -> None:
    if split.x_train.shape[0] == 0 or split.x_val.shape[0] == 0:
        raise ValueError("train and validation sets must be nonempty")
    if model_cfg.outcome_head_enabled:
        classes = np.unique(split.y_val)
        if classes.shape[0] < 2:
            raise ValueError(
                "validation set has a single outcome class; AUC is undefined"
            )


def train(split: Split, model_cfg: ModelConfig, cfg: TrainConfig,
          params: ModelParams | None = None,
          trainable: np.ndarray | None = None,
          loss_mode: str = "joint",
          history: TrainHistory | None = None,
          max_epochs: int | None = None) -> tuple[ModelParams, TrainHistory]:
    """Mini-batch training loop; returns the best-epoch parameters.

    ``loss_mode`` selects the objective: "joint" (surgery-combined weighted
    task gradients), "ae" (reconstruction only), or "bce" (outcome only,
    used by the sequential ablation's second phase).  ``trainable`` is an
    optional 0/1 mask over the flat parameter vector; masked-out
    coordinates are frozen.  The monitored validation metric is AUC when
    the outcome loss participates, negated reconstruction MSE otherwise.
    """
    _check_split(split, model_cfg)
    if loss_mode not in ("joint", "ae", "bce"):
        raise ValueError(f"unknown loss_mode {loss_mode!r}")
    if not model_cfg.outcome_head_enabled:
        if loss_mode == "bce":
            raise ValueError("loss_mode 'bce' requires the outcome head")
        loss_mode = "ae"  # without a head the joint objective is pure reconstruction
    monitor_auc = loss_mode != "ae"

    root = Rng(cfg.seed)
    if params is None:
        params = init_params(model_cfg, root.spawn(0))
    else:
        params = params.copy()
    shuffle_rng = root.spawn(1)
    dropout_rng = root.spawn(2)

    theta = params.flatten()
    state = AdamState.zeros(theta.size)
    lr = cfg.lr_init
    step = 0
    n_train = split.x_train.shape[0]
    n_epochs = cfg.max_epochs if max_epochs is None else max_epochs

    hist = history if history is not None else TrainHistory()
    best_metric = -np.inf
    best_params = params.copy()
    best_epoch = len(hist.epoch)
    bad_epochs = 0
    monitored: list[float] = []
    window_start = 0

    for epoch in range(1, n_epochs + 1):
        sum_ae = sum_bce = 0.0
        surgery_count = 0
        for batch in _epoch_batches(n_train, cfg.batch_size, shuffle_rng):
            xb = split.x_train[batch]
            yb = split.y_train[batch]
            trace = forward(xb, params, model_cfg, mode="train", rng=dropout_rng)
            l_ae = loss_reconstruction(xb, trace.x_hat, batch.size)
            l_bce = loss_bce(yb, trace.logit) if model_cfg.outcome_head_enabled else None
            if not np.isfinite(l_ae) or (l_bce is not None and not np.isfinite(l_bce)):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, batch starting index {batch[0]}"
                )
            g_ae, g_bce = backward(trace, xb, yb, params, model_cfg)
            if loss_mode == "joint" and model_cfg.outcome_head_enabled:
                a = cfg.alpha * g_ae.flatten()
                b = cfg.beta * g_bce.flatten()
                if surgery_conflicts(a, b):
                    surgery_count += 1
                g = gradient_surgery(a, b)
            elif loss_mode == "bce":
                g = g_bce.flatten()
            else:
                g = g_ae.flatten()
            if trainable is not None:
                g = g * trainable
            g = clip_by_global_norm(g, cfg.clip_norm)
            step += 1
            theta, state = adam_step(theta, g, state, step, lr, cfg.weight_decay)
            if trainable is not None:
                # L2 decay must not leak updates into frozen coordinates
                theta = np.where(trainable > 0, theta, params.flatten())
            params = params.unflatten(theta)
            sum_ae += l_ae * batch.size
            sum_bce += (l_bce or 0.0) * batch.size

        epoch_ae = sum_ae / n_train
        epoch_bce = sum_bce / n_train if model_cfg.outcome_head_enabled else None
        val_mse, val_auc = _validation_metrics(params, model_cfg, split)
        metric = val_auc if monitor_auc else -val_mse
        monitored.append(metric)

        hist.epoch.append(len(hist.epoch) + 1)
        hist.l_ae.append(epoch_ae)
        hist.l_bce.append(epoch_bce)
        hist.joint.append(cfg.alpha * epoch_ae + cfg.beta * (epoch_bce or 0.0))
        hist.val_auc.append(val_auc if monitor_auc else None)
        hist.val_mse.append(val_mse)
        hist.lr.append(lr)
        hist.surgery_count.append(surgery_count)

        if metric > best_metric + cfg.improvement_threshold:
            best_metric = metric
            best_params = params.copy()
            best_epoch = len(hist.epoch) - 1
            bad_epochs = 0
        else:
            bad_epochs += 1

        new_lr = lr_on_plateau(monitored[window_start:], lr, cfg.scheduler_factor,
                               cfg.scheduler_patience, cfg.improvement_threshold,
                               cfg.lr_floor)
        if new_lr < lr:
            lr = new_lr
            window_start = len(monitored)
        if bad_epochs >= cfg.early_stop_patience:
            break

    hist.best_epoch = best_epoch
    return best_params, hist


def _head_mask(params: ModelParams) -> np.ndarray:
    """1 for outcome-head coordinates, 0 elsewhere, over the flat vector."""
    mask = np.zeros(params.flatten().size)
    pos = 0
    for name in params.present_fields():
        n = getattr(params, name).size
        if name.startswith("mlp_"):
            mask[pos:pos + n] = 1.0
        pos += n
    return mask


def train_sequential(split: Split, model_cfg: ModelConfig,
                     cfg: TrainConfig) -> tuple[ModelParams, TrainHistory]:
    """Two-phase ablation: reconstruction-only training for half the epoch
    budget, then the encoder/decoder are frozen and only the outcome head
    trains against the outcome loss."""
    if not model_cfg.outcome_head_enabled:
        raise ValueError("sequential training requires the outcome head")
    phase1 = cfg.max_epochs // 2
    phase2 = cfg.max_epochs - phase1
    params, hist = train(split, model_cfg, cfg, loss_mode="ae", max_epochs=phase1)
    mask = _head_mask(params)
    best, hist = train(split, model_cfg, cfg, params=params, trainable=mask,
                       loss_mode="bce", history=hist, max_epochs=phase2)
    return best, hist
