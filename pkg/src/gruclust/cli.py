"""Command-line entry point for the full study pipeline.

Subcommands: synth, train, evaluate, validate, stability, analyze, report,
sweep.  Options come from an INI config file plus flags (flags win); every
output directory receives the fully resolved config snapshot, so any run
can be reproduced from its artifacts alone.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import pca_project, run_baselines
from .clustering import (
    bic, gmm_fit, hard_labels, load_mixture, save_mixture, select_k,
    soft_assign, transfer_assign,
)
from .data import (
    DEFAULT_FEATURES, SynthSpec, Standardizer, apply_standardizer, build_windows,
    fit_standardizer, load_daily_csv, load_labels_csv, load_truth_csv,
    stratified_split, synth_generate, windows_to_arrays, write_daily_csv,
    write_labels_csv, write_truth_csv,
)
from .metrics import (
    EvalReport, adjusted_rand_index, davies_bouldin, roc_auc, silhouette,
    stability_resample,
)
from .model import ModelConfig, forward, load_checkpoint, save_checkpoint
from .serialize import write_csv, write_json
from .stats import subtype_table, write_subtype_table
from .training import Split, TrainConfig, loss_reconstruction, train, train_sequential

ABLATIONS = ("full", "no_attention", "ae_only", "sequential")

_DEFAULTS = {
    "data": {
        "features": "features.csv",
        "labels": "labels.csv",
        "truth": "clusters_true.csv",
        "window": "28",
        "min_days": "7",
    },
    "model": {
        "hidden_dim": "32",
        "embed_dim": "32",
        "heads": "2",
        "head_dim": "16",
        "mlp_hidden": "16",
        "dropout_rate": "0.3",
    },
    "train": {
        "alpha": "0.7",
        "beta": "1.0",
        "lr_init": "1e-5",
        "batch_size": "64",
        "max_epochs": "50",
        "clip_norm": "1.0",
        "weight_decay": "1e-4",
        "scheduler_factor": "0.5",
        "scheduler_patience": "3",
        "early_stop_patience": "10",
        "improvement_threshold": "1e-4",
        "val_fraction": "0.2",
    },
    "cluster": {
        "k_range": "1-9",
        "cov_mode": "full",
        "ridge": "1e-6",
    },
    "stability": {
        "trials": "200",
        "max_leave_out": "50",
    },
    "synth": {
        "n_participants": "400",
        "n_clusters": "2",
        "label_noise": "0.1",
        "missing_rate": "0.15",
        "cohort_shift": "0.0",
    },
    "sweep": {
        "alphas": "0.3,0.5,0.7,1.0",
        "betas": "0.5,0.7,1.0",
    },
}


def resolve_config(config_path: str | None, overrides: dict[str, dict[str, str]],
                   seed: int) -> dict[str, dict[str, str]]:
    """Defaults <- config file <- flag overrides, all values explicit."""
    resolved = {sec: dict(vals) for sec, vals in _DEFAULTS.items()}
    if config_path:
        parser = configparser.ConfigParser()
        read = parser.read(config_path)
        if not read:
            raise FileNotFoundError(f"config file not found: {config_path}")
        for sec in parser.sections():
            if sec not in resolved:
                raise ValueError(f"unknown config section [{sec}]")
            for key, val in parser[sec].items():
                if key not in resolved[sec]:
                    raise ValueError(f"unknown config key {key!r} in [{sec}]")
                resolved[sec][key] = val
    for sec, vals in overrides.items():
        for key, val in vals.items():
            if val is not None:
                resolved[sec][key] = str(val)
    resolved["meta"] = {"seed": str(seed), "version": __version__}
    return resolved


def config_text(resolved: dict) -> str:
    lines = []
    for sec in sorted(resolved):
        lines.append(f"[{sec}]")
        for key in sorted(resolved[sec]):
            lines.append(f"{key} = {resolved[sec][key]}")
        lines.append("")
    return "\n".join(lines)


def config_hash(resolved: dict) -> str:
    return hashlib.sha256(config_text(resolved).encode()).hexdigest()[:12]


def write_config_snapshot(out_dir: Path, resolved: dict) -> str:
    out_dir.mkdir(parents=True, exist_ok=True)
    text = config_text(resolved)
    (out_dir / "config.ini").write_text(text)
    return config_hash(resolved)


def parse_k_range(text: str) -> list[int]:
    """Accepts '1-9', '2', or '2,3,5'."""
    text = text.strip()
    if "-" in text and "," not in text:
        lo, hi = text.split("-", 1)
        ks = list(range(int(lo), int(hi) + 1))
    else:
        ks = [int(tok) for tok in text.split(",") if tok.strip()]
    if not ks or min(ks) < 1:
        raise ValueError(f"bad k range {text!r}")
    return ks


def _model_config(cfg: dict, ablation: str) -> ModelConfig:
    m = cfg["model"]
    return ModelConfig(
        input_dim=len(DEFAULT_FEATURES),
        seq_len=int(cfg["data"]["window"]),
        hidden_dim=int(m["hidden_dim"]),
        embed_dim=int(m["embed_dim"]),
        heads=int(m["heads"]),
        head_dim=int(m["head_dim"]),
        mlp_hidden=int(m["mlp_hidden"]),
        dropout_rate=float(m["dropout_rate"]),
        attention_enabled=ablation != "no_attention",
        outcome_head_enabled=ablation != "ae_only",
    )


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        alpha=float(t["alpha"]), beta=float(t["beta"]),
        lr_init=float(t["lr_init"]), batch_size=int(t["batch_size"]),
        max_epochs=int(t["max_epochs"]), clip_norm=float(t["clip_norm"]),
        weight_decay=float(t["weight_decay"]),
        scheduler_factor=float(t["scheduler_factor"]),
        scheduler_patience=int(t["scheduler_patience"]),
        early_stop_patience=int(t["early_stop_patience"]),
        improvement_threshold=float(t["improvement_threshold"]),
        val_fraction=float(t["val_fraction"]), seed=seed,
    )


def _load_windows(cfg: dict, data_dir: Path, cohort: str):
    d = cfg["data"]
    records = load_daily_csv(data_dir / d["features"])
    labels = load_labels_csv(data_dir / d["labels"])
    windows = build_windows(records, labels, window=int(d["window"]),
                            min_days=int(d["min_days"]), cohort=cohort)
    if not windows:
        raise ValueError(f"no usable participant windows in {data_dir}")
    return windows


def _write_embeddings(path, pids, labels, subsets, emb) -> None:
    p = emb.shape[1]
    header = ["participant_id", "label", "subset"] + [f"e{i}" for i in range(p)]
    rows = [
        [pids[i], int(labels[i]), subsets[i]] + [float(v) for v in emb[i]]
        for i in range(len(pids))
    ]
    write_csv(path, header, rows)


def read_embeddings(path):
    pids, labels, vecs = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = [c for c in reader.fieldnames if c.startswith("e")]
        for row in reader:
            pids.append(row["participant_id"])
            labels.append(int(row["label"]))
            vecs.append([float(row[c]) for c in cols])
    return pids, np.array(labels), np.array(vecs)


def _read_splits(path) -> dict[str, str]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["participant_id"]] = row["subset"]
    return out


# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = resolve_config(args.config, {"synth": {
        "n_participants": args.n_participants,
        "cohort_shift": args.cohort_shift,
    }}, args.seed)
    out_dir = Path(args.out_dir)
    write_config_snapshot(out_dir, cfg)
    s = cfg["synth"]
    spec = SynthSpec(
        n_participants=int(s["n_participants"]),
        n_clusters=int(s["n_clusters"]),
        label_noise=float(s["label_noise"]),
        missing_rate=float(s["missing_rate"]),
        cohort_shift=float(s["cohort_shift"]),
        window=int(cfg["data"]["window"]),
        seed=args.seed,
    )
    records, labels, truth = synth_generate(spec)
    write_daily_csv(out_dir / cfg["data"]["features"], records)
    write_labels_csv(out_dir / cfg["data"]["labels"], labels)
    write_truth_csv(out_dir / cfg["data"]["truth"], truth)
    print(f"synth: wrote {len(truth)} participants to {out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, {}, args.seed)
    out_dir = Path(args.out_dir)
    chash = write_config_snapshot(out_dir, cfg)
    windows = _load_windows(cfg, Path(args.data_dir), "discovery")

    model_cfg = _model_config(cfg, args.ablation)
    train_cfg = _train_config(cfg, args.seed)
    train_idx, val_idx = stratified_split(windows, train_cfg.val_fraction, args.seed)
    std = fit_standardizer([windows[i] for i in train_idx])
    windows_std = apply_standardizer(std, windows)
    x, y, pids = windows_to_arrays(windows_std)
    split = Split(x_train=x[train_idx], y_train=y[train_idx],
                  x_val=x[val_idx], y_val=y[val_idx])

    if args.ablation == "sequential":
        params, history = train_sequential(split, model_cfg, train_cfg)
    else:
        params, history = train(split, model_cfg, train_cfg)

    std.save(out_dir / "standardizer.csv")
    history.write(out_dir / "history.csv")
    save_checkpoint(out_dir / "checkpoint.bin", params, model_cfg, {
        "ablation": args.ablation, "seed": args.seed,
        "best_epoch": history.best_epoch + 1, "config_hash": chash,
    })
    val_set = set(val_idx)
    subsets = ["val" if i in val_set else "train" for i in range(len(windows))]
    write_csv(out_dir / "splits.csv", ["participant_id", "subset"],
              [[pids[i], subsets[i]] for i in range(len(pids))])

    trace = forward(x, params, model_cfg, mode="eval")
    _write_embeddings(out_dir / "embeddings.csv", pids, y, subsets, trace.embedding)
    mse = loss_reconstruction(x, trace.x_hat, x.shape[0])
    val_auc = None
    if model_cfg.outcome_head_enabled:
        val_auc = roc_auc(y[val_idx].astype(int), trace.y_prob[val_idx])
    write_json(out_dir / "summary.json", {
        "ablation": args.ablation, "seed": args.seed, "config_hash": chash,
        "best_epoch": history.best_epoch + 1, "epochs_run": len(history.epoch),
        "n_params": params.num_params(), "mse": mse, "val_auc": val_auc,
        "n_train": len(train_idx), "n_val": len(val_idx),
    })
    auc_txt = "n/a" if val_auc is None else f"{val_auc:.3f}"
    print(f"train[{args.ablation}]: {len(history.epoch)} epochs, "
          f"mse {mse:.4f}, val auc {auc_txt} -> {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args.config, {"cluster": {"k_range": args.k_range}}, args.seed)
    run_dir = Path(args.run_dir)
    out_dir = Path(args.out_dir) if args.out_dir else run_dir / "eval"
    chash = write_config_snapshot(out_dir, cfg)

    params, model_cfg, meta = load_checkpoint(run_dir / "checkpoint.bin")
    std = Standardizer.load(run_dir / "standardizer.csv")
    subsets = _read_splits(run_dir / "splits.csv")
    windows = _load_windows(cfg, Path(args.data_dir), "discovery")
    windows_std = apply_standardizer(std, windows)
    x, y, pids = windows_to_arrays(windows_std)

    trace = forward(x, params, model_cfg, mode="eval")
    emb = trace.embedding
    mse = loss_reconstruction(x, trace.x_hat, x.shape[0])
    auc = None
    if model_cfg.outcome_head_enabled:
        val_rows = [i for i, pid in enumerate(pids) if subsets.get(pid) == "val"]
        auc = roc_auc(y[val_rows].astype(int), trace.y_prob[val_rows])

    ks = parse_k_range(cfg["cluster"]["k_range"])
    ridge = float(cfg["cluster"]["ridge"])
    cov_mode = cfg["cluster"]["cov_mode"]
    if len(ks) == 1:
        mixture = gmm_fit(emb, ks[0], seed=args.seed, ridge=ridge, cov_mode=cov_mode)
        table = [(ks[0], bic(mixture, emb), mixture.log_likelihood,
                  mixture.n_iter, mixture.converged)]
    else:
        mixture, table = select_k(emb, ks, seed=args.seed, ridge=ridge, cov_mode=cov_mode)
    write_csv(out_dir / "bic.csv", ["k", "bic", "log_likelihood", "n_iter", "converged"],
              [[k, b, ll, ni, int(cv)] for k, b, ll, ni, cv in table])
    save_mixture(out_dir / "mixture.bin", mixture, {"config_hash": chash})

    resp = soft_assign(mixture, emb)
    hard = hard_labels(resp)
    sil = silhouette(emb, hard)
    dbi = davies_bouldin(emb, hard)

    extras = {"k": mixture.K}
    truth_path = Path(args.data_dir) / cfg["data"]["truth"]
    if truth_path.exists():
        truth = load_truth_csv(truth_path)
        ari = adjusted_rand_index([truth[p] for p in pids], hard)
        extras["ari_vs_truth"] = ari

    report = EvalReport(mse=mse, auc=auc, silhouette=sil, dbi=dbi,
                        split="discovery", seed=args.seed, config_hash=chash,
                        extras=extras)
    report.write(out_dir / "report.csv", out_dir / "report.json")
    header = ["participant_id", "label", "cluster"] + [f"r{k}" for k in range(mixture.K)]
    write_csv(out_dir / "assignments.csv", header, [
        [pids[i], int(y[i]), int(hard[i])] + [float(v) for v in resp[i]]
        for i in range(len(pids))
    ])
    ari_txt = f", ari {extras.get('ari_vs_truth', float('nan')):.3f}" if "ari_vs_truth" in extras else ""
    auc_txt = "n/a" if auc is None else f"{auc:.3f}"
    print(f"evaluate: K={mixture.K}, mse {mse:.4f}, val auc {auc_txt}, "
          f"silhouette {sil:.3f}, dbi {dbi:.3f}{ari_txt} -> {out_dir}")
    return 0


def cmd_validate(args) -> int:
    cfg = resolve_config(args.config, {}, args.seed)
    run_dir = Path(args.run_dir)
    out_dir = Path(args.out_dir)
    chash = write_config_snapshot(out_dir, cfg)

    params, model_cfg, _ = load_checkpoint(run_dir / "checkpoint.bin")
    std = Standardizer.load(run_dir / "standardizer.csv")
    mixture = load_mixture(Path(args.eval_dir) / "mixture.bin")

    windows = _load_windows(cfg, Path(args.data_dir), "validation")
    windows_std = apply_standardizer(std, windows)
    x, y, pids = windows_to_arrays(windows_std)
    trace = forward(x, params, model_cfg, mode="eval")
    emb = trace.embedding
    mse = loss_reconstruction(x, trace.x_hat, x.shape[0])
    auc = None
    if model_cfg.outcome_head_enabled:
        auc = roc_auc(y.astype(int), trace.y_prob)

    resp = transfer_assign(mixture, emb)
    hard = hard_labels(resp)
    sil = silhouette(emb, hard)
    dbi = davies_bouldin(emb, hard)
    extras = {"k": mixture.K, "cohort": "external"}
    truth_path = Path(args.data_dir) / cfg["data"]["truth"]
    if truth_path.exists():
        truth = load_truth_csv(truth_path)
        extras["ari_vs_truth"] = adjusted_rand_index([truth[p] for p in pids], hard)

    report = EvalReport(mse=mse, auc=auc, silhouette=sil, dbi=dbi,
                        split="external", seed=args.seed, config_hash=chash,
                        extras=extras)
    report.write(out_dir / "transfer_report.csv", out_dir / "transfer_report.json")
    subsets = ["external"] * len(pids)
    _write_embeddings(out_dir / "external_embeddings.csv", pids, y, subsets, emb)
    header = ["participant_id", "label", "cluster"] + [f"r{k}" for k in range(mixture.K)]
    write_csv(out_dir / "assignments.csv", header, [
        [pids[i], int(y[i]), int(hard[i])] + [float(v) for v in resp[i]]
        for i in range(len(pids))
    ])
    auc_txt = "n/a" if auc is None else f"{auc:.3f}"
    print(f"validate: external auc {auc_txt}, silhouette {sil:.3f}, "
          f"dbi {dbi:.3f} -> {out_dir}")
    return 0


def cmd_stability(args) -> int:
    cfg = resolve_config(args.config, {"stability": {
        "trials": args.trials, "max_leave_out": args.max_leave_out,
    }}, args.seed)
    out_dir = Path(args.out_dir)
    write_config_snapshot(out_dir, cfg)
    mixture = load_mixture(Path(args.eval_dir) / "mixture.bin")
    _, _, emb = read_embeddings(args.embeddings)
    result = stability_resample(
        emb, mixture,
        trials=int(cfg["stability"]["trials"]),
        max_leave_out=int(cfg["stability"]["max_leave_out"]),
        seed=args.seed,
    )
    result.write(out_dir / "stability.csv", out_dir / "stability.json")
    print(f"stability: mean ARI {result.mean_ari:.3f} over {result.trials} trials -> {out_dir}")
    return 0


def cmd_analyze(args) -> int:
    cfg = resolve_config(args.config, {}, args.seed)
    out_dir = Path(args.out_dir)
    write_config_snapshot(out_dir, cfg)
    windows = _load_windows(cfg, Path(args.data_dir), "discovery")
    clusters = {}
    with open(args.assignments, newline="") as fh:
        for row in csv.DictReader(fh):
            clusters[row["participant_id"]] = int(row["cluster"])
    windows = [w for w in windows if w.participant_id in clusters]
    if not windows:
        raise ValueError("no participants shared between data and assignments")
    labels = np.array([clusters[w.participant_id] for w in windows])
    features = {
        name: np.array([w.matrix[:, j].mean() for w in windows])
        for j, name in enumerate(DEFAULT_FEATURES)
    }
    rows = subtype_table(features, labels, feature_names=DEFAULT_FEATURES)
    write_subtype_table(out_dir / "subtype_stats.csv", rows)
    n_sig = sum(1 for r in rows if r.q_value < 0.05)
    print(f"analyze: {len(rows)} features tested, {n_sig} with q < 0.05 -> {out_dir}")
    return 0


def _attention_day_weights(att_weights: np.ndarray) -> np.ndarray:
    """Per-day received attention mass: mean over heads and query rows of
    each day's column, normalized to sum to 1 across days."""
    w = att_weights.mean(axis=(0, 2))  # (M, B, Tq, Tk) -> (B, T days)
    return w / w.sum(axis=1, keepdims=True)


def cmd_report(args) -> int:
    cfg = resolve_config(args.config, {}, args.seed)
    study = Path(args.study_dir)
    out_dir = Path(args.out_dir) if args.out_dir else study / "report"
    chash = write_config_snapshot(out_dir, cfg)

    def read_report(path):
        import json
        with open(path) as fh:
            return json.load(fh)

    # Table 1: discovery metrics for every trained variant plus baselines
    table1 = []
    for abl in ABLATIONS:
        rp = study / f"eval_{abl}" / "report.json"
        if rp.exists():
            r = read_report(rp)
            table1.append([abl, r["mse"], r["auc"], r["silhouette"], r["dbi"]])
    windows = _load_windows(cfg, Path(args.data_dir), "discovery")
    std = Standardizer.load(study / "train_full" / "standardizer.csv")
    x, y, pids = windows_to_arrays(apply_standardizer(std, windows))
    eval_full = read_report(study / "eval_full" / "report.json")
    for res in run_baselines(x, y, K=int(eval_full["k"]), seed=args.seed):
        rep = res.report
        table1.append([res.method, "", rep.auc, rep.silhouette, rep.dbi])
    write_csv(out_dir / "table1.csv", ["method", "mse", "auc", "silhouette", "dbi"],
              [[c if c is not None else "" for c in row] for row in table1])

    # Table 2: discovery vs external transfer
    table2 = []
    for abl in ABLATIONS:
        disc = study / f"eval_{abl}" / "report.json"
        ext = study / f"validate_{abl}" / "transfer_report.json"
        if disc.exists() and ext.exists():
            rd, re_ = read_report(disc), read_report(ext)
            table2.append([abl, rd["auc"] if rd["auc"] is not None else "",
                           re_["auc"] if re_["auc"] is not None else "",
                           rd["silhouette"], re_["silhouette"]])
    if table2:
        write_csv(out_dir / "table2.csv",
                  ["method", "auc_discovery", "auc_external",
                   "silhouette_discovery", "silhouette_external"], table2)

    # plot data: BIC curve, ARI histogram
    bic_src = study / "eval_full" / "bic.csv"
    if bic_src.exists():
        (out_dir / "bic_curve.csv").write_text(bic_src.read_text())
    stab_src = study / "stability" / "stability.csv"
    if stab_src.exists():
        (out_dir / "ari_histogram.csv").write_text(stab_src.read_text())

    # attention traces over time, per participant and per cluster
    params, model_cfg, _ = load_checkpoint(study / "train_full" / "checkpoint.bin")
    manifest = {"version": __version__, "config_hash": chash,
                "methods": [row[0] for row in table1]}
    if model_cfg.attention_enabled:
        clusters = {}
        with open(study / "eval_full" / "assignments.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                clusters[row["participant_id"]] = int(row["cluster"])
        trace = forward(x, params, model_cfg, mode="eval")
        day_w = _attention_day_weights(trace.att_weights)
        rows = []
        for i, pid in enumerate(pids):
            for t in range(day_w.shape[1]):
                rows.append([pid, clusters[pid], t + 1, float(day_w[i, t])])
        write_csv(out_dir / "attention_traces.csv",
                  ["participant_id", "cluster", "day", "weight"], rows)
        cl_rows = []
        peaks = {}
        for c in sorted(set(clusters.values())):
            members = [i for i, p in enumerate(pids) if clusters[p] == c]
            mean_w = day_w[members].mean(axis=0)
            peaks[f"peak_attention_day_cluster{c}"] = int(np.argmax(mean_w) + 1)
            for t in range(mean_w.shape[0]):
                cl_rows.append([c, t + 1, float(mean_w[t])])
        write_csv(out_dir / "attention_by_cluster.csv",
                  ["cluster", "day", "mean_weight"], cl_rows)
        manifest.update(peaks)

    # 2-D projection of embeddings for scatter plots
    emb_pids, emb_labels, emb = read_embeddings(study / "train_full" / "embeddings.csv")
    proj = pca_project(emb, min(2, emb.shape[1]))
    clusters = {}
    with open(study / "eval_full" / "assignments.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            clusters[row["participant_id"]] = int(row["cluster"])
    write_csv(out_dir / "embeddings_pca2.csv",
              ["participant_id", "pc1", "pc2", "cluster", "label"],
              [[emb_pids[i], float(proj[i, 0]),
                float(proj[i, 1]) if proj.shape[1] > 1 else 0.0,
                clusters.get(emb_pids[i], ""), int(emb_labels[i])]
               for i in range(len(emb_pids))])

    stab_json = study / "stability" / "stability.json"
    if stab_json.exists():
        manifest["mean_ari"] = read_report(stab_json)["mean_ari"]
    write_json(out_dir / "manifest.json", manifest)
    print(f"report: {len(table1)} methods consolidated -> {out_dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = resolve_config(args.config, {}, args.seed)
    out_dir = Path(args.out_dir)
    write_config_snapshot(out_dir, cfg)
    windows = _load_windows(cfg, Path(args.data_dir), "discovery")
    model_cfg = _model_config(cfg, "full")
    base_train = _train_config(cfg, args.seed)
    train_idx, val_idx = stratified_split(windows, base_train.val_fraction, args.seed)
    std = fit_standardizer([windows[i] for i in train_idx])
    x, y, _ = windows_to_arrays(apply_standardizer(std, windows))
    split = Split(x_train=x[train_idx], y_train=y[train_idx],
                  x_val=x[val_idx], y_val=y[val_idx])

    alphas = [float(v) for v in cfg["sweep"]["alphas"].split(",")]
    betas = [float(v) for v in cfg["sweep"]["betas"].split(",")]
    rows = []
    best = None
    for alpha in alphas:
        for beta in betas:
            tc = TrainConfig(**{**base_train.to_dict(), "alpha": alpha, "beta": beta})
            params, history = train(split, model_cfg, tc)
            auc = history.val_auc[history.best_epoch]
            trace = forward(x, params, model_cfg, mode="eval")
            mixture = gmm_fit(trace.embedding, 2, seed=args.seed)
            sil = silhouette(trace.embedding, hard_labels(soft_assign(mixture, trace.embedding)))
            rows.append([alpha, beta, auc, sil])
            key = (auc, sil)
            if best is None or key > best[0]:
                best = (key, alpha, beta)
            print(f"sweep: alpha={alpha} beta={beta} val_auc={auc:.3f} sil={sil:.3f}")
    write_csv(out_dir / "sweep.csv", ["alpha", "beta", "val_auc", "silhouette"], rows)
    write_json(out_dir / "chosen.json", {
        "alpha": best[1], "beta": best[2],
        "val_auc": best[0][0], "silhouette": best[0][1],
    })
    print(f"sweep: chose alpha={best[1]} beta={best[2]} -> {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gruclust",
        description="Attention-GRU autoencoder subtype pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False):
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--seed", type=int, default=0)
        if data:
            p.add_argument("--data-dir", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-participants", type=int, default=None)
    p.add_argument("--cohort-shift", type=float, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the model or an ablation")
    common(p, data=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--ablation", choices=ABLATIONS, default="full")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="embed, cluster, and score a run")
    common(p, data=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--k-range", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("validate", help="frozen-encoder transfer to an external cohort")
    common(p, data=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--eval-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stability", help="leave-out resampling of the clustering")
    common(p)
    p.add_argument("--eval-dir", required=True, help="directory with mixture.bin")
    p.add_argument("--embeddings", required=True, help="embeddings CSV to resample")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--max-leave-out", type=int, default=None)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("analyze", help="per-feature subtype statistics")
    common(p, data=True)
    p.add_argument("--assignments", required=True, help="assignments CSV with clusters")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="consolidated tables and plot data")
    common(p, data=True)
    p.add_argument("--study-dir", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="objective-weight grid sweep")
    common(p, data=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
