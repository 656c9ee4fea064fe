"""CSV ingestion, trailing-window construction, fill imputation,
train-statistics standardization, and the planted-subtype synthetic
generator that serves as the end-to-end verification oracle.

Input schemas:
  daily features: participant_id,date,<feature columns>; empty cell = missing
  labels:         participant_id,label_date,label  (label in {0,1})
"""

from __future__ import annotations

import csv
import datetime as dt
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng
from .serialize import write_csv

DEFAULT_FEATURES = [
    "sum_duration_asleep",
    "avg_duration_asleep",
    "avg_efficiency",
    "avg_duration_to_fall_asleep",
    "first_waketime",
    "first_bedtime",
]


@dataclass
class DailyRecord:
    participant_id: str
    date: dt.date
    values: np.ndarray  # (d,) with NaN marking missing cells


@dataclass
class ParticipantWindow:
    participant_id: str
    matrix: np.ndarray  # (T, d), finite after imputation
    observed_days: int
    label: int
    cohort: str = "discovery"


@dataclass
class Standardizer:
    feature_names: list[str]
    mean: np.ndarray
    sd: np.ndarray

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        return (matrix - self.mean) / self.sd

    def inverse(self, matrix: np.ndarray) -> np.ndarray:
        return matrix * self.sd + self.mean

    def save(self, path) -> None:
        rows = [[self.feature_names[i], float(self.mean[i]), float(self.sd[i])]
                for i in range(len(self.feature_names))]
        write_csv(path, ["feature", "mean", "sd"], rows)

    @classmethod
    def load(cls, path) -> "Standardizer":
        names, means, sds = [], [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                names.append(row["feature"])
                means.append(float(row["mean"]))
                sds.append(float(row["sd"]))
        return cls(names, np.array(means), np.array(sds))


def load_daily_csv(path, schema=None) -> list[DailyRecord]:
    """Parse daily feature rows; empty cells become NaN (missing), never 0."""
    schema = list(schema or DEFAULT_FEATURES)
    expected = ["participant_id", "date"] + schema
    records = []
    seen: set[tuple[str, dt.date]] = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            unknown = [c for c in (header or []) if c not in expected]
            if unknown:
                raise ValueError(f"{path}: unknown column(s) {unknown}")
            raise ValueError(f"{path}: header {header} does not match schema {expected}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise ValueError(f"{path}:{lineno}: expected {len(expected)} fields, got {len(row)}")
            pid = row[0]
            try:
                date = dt.date.fromisoformat(row[1])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad date {row[1]!r}") from exc
            key = (pid, date)
            if key in seen:
                raise ValueError(f"{path}:{lineno}: duplicate (participant, date) {key}")
            seen.add(key)
            values = np.full(len(schema), np.nan)
            for j, cell in enumerate(row[2:]):
                if cell == "":
                    continue
                try:
                    values[j] = float(cell)
                except ValueError as exc:
                    raise ValueError(
                        f"{path}:{lineno}: bad value {cell!r} in column {schema[j]}"
                    ) from exc
            records.append(DailyRecord(pid, date, values))
    return records


def load_labels_csv(path) -> list[tuple[str, dt.date, int]]:
    labels = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["participant_id", "label_date", "label"]:
            raise ValueError(f"{path}: bad labels header {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3 or row[2] not in ("0", "1"):
                raise ValueError(f"{path}:{lineno}: bad label row {row}")
            labels.append((row[0], dt.date.fromisoformat(row[1]), int(row[2])))
    return labels


def write_daily_csv(path, records: list[DailyRecord], schema=None) -> None:
    schema = list(schema or DEFAULT_FEATURES)
    rows = []
    for rec in records:
        cells = [rec.participant_id, rec.date.isoformat()]
        cells += ["" if math.isnan(v) else repr(float(v)) for v in rec.values]
        rows.append(cells)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["participant_id", "date"] + schema) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def write_labels_csv(path, labels) -> None:
    rows = [[pid, date.isoformat(), y] for pid, date, y in labels]
    write_csv(path, ["participant_id", "label_date", "label"], rows)


def write_truth_csv(path, truth) -> None:
    write_csv(path, ["participant_id", "cluster"], [[pid, c] for pid, c in truth])


def load_truth_csv(path) -> dict[str, int]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["participant_id"]] = int(row["cluster"])
    return out


def impute_ffill_bfill(matrix: np.ndarray) -> np.ndarray:
    """Forward fill each column in time order, then backward fill the
    leading gaps.  Observed cells are never altered."""
    out = np.array(matrix, dtype=float, copy=True)
    T, d = out.shape
    for j in range(d):
        col = out[:, j]
        if np.all(np.isnan(col)):
            raise ValueError(f"feature column {j} has no observed values in the window")
        last = np.nan
        for t in range(T):
            if np.isnan(col[t]):
                col[t] = last
            else:
                last = col[t]
        nxt = np.nan
        for t in range(T - 1, -1, -1):
            if np.isnan(col[t]):
                col[t] = nxt
            else:
                nxt = col[t]
    return out


def build_windows(records: list[DailyRecord], labels, window: int = 28,
                  min_days: int = 7, cohort: str = "discovery") -> list[ParticipantWindow]:
    """Trailing `window`-day matrices ending at each participant's label
    date; participants with fewer than `min_days` observed days are
    excluded.  Missing calendar days become all-missing rows, then the
    window is fill-imputed."""
    by_pid: dict[str, dict[dt.date, np.ndarray]] = {}
    for rec in records:
        by_pid.setdefault(rec.participant_id, {})[rec.date] = rec.values
    out = []
    for pid, label_date, y in sorted(labels):
        days = by_pid.get(pid)
        if days is None:
            warnings.warn(f"participant {pid} has a label but no records; skipped")
            continue
        d = len(next(iter(days.values())))
        mat = np.full((window, d), np.nan)
        observed = 0
        for t in range(window):
            date = label_date - dt.timedelta(days=window - 1 - t)
            vals = days.get(date)
            if vals is not None and np.any(np.isfinite(vals)):
                mat[t] = vals
                observed += 1
        if observed < min_days:
            continue
        if np.any(np.all(np.isnan(mat), axis=0)):
            warnings.warn(f"participant {pid}: window has an all-missing feature; skipped")
            continue
        out.append(ParticipantWindow(pid, impute_ffill_bfill(mat), observed, y, cohort))
    return out


def fit_standardizer(train_windows: list[ParticipantWindow],
                     feature_names=None) -> Standardizer:
    """Per-feature z-score statistics pooled over all training cells."""
    if not train_windows:
        raise ValueError("cannot fit standardizer on an empty training split")
    names = list(feature_names or DEFAULT_FEATURES)
    stacked = np.concatenate([w.matrix for w in train_windows], axis=0)
    mean = stacked.mean(axis=0)
    sd = stacked.std(axis=0)
    for j, s in enumerate(sd):
        if s <= 0.0:
            raise ValueError(f"feature {names[j]} is constant on the training split")
    return Standardizer(names, mean, sd)


def apply_standardizer(std: Standardizer, windows: list[ParticipantWindow]
                       ) -> list[ParticipantWindow]:
    return [
        ParticipantWindow(w.participant_id, std.transform(w.matrix),
                          w.observed_days, w.label, w.cohort)
        for w in windows
    ]


def windows_to_arrays(windows: list[ParticipantWindow]):
    """Stack to (N, T, d) plus labels and participant ids."""
    x = np.stack([w.matrix for w in windows])
    y = np.array([w.label for w in windows], dtype=float)
    pids = [w.participant_id for w in windows]
    return x, y, pids


def stratified_split(windows: list[ParticipantWindow], val_fraction: float,
                     seed: int):
    """Label-stratified validation split; returns (train_idx, val_idx) into
    the given window list, each sorted ascending."""
    rng = Rng(seed)
    val_idx: list[int] = []
    for cls in (0, 1):
        members = [i for i, w in enumerate(windows) if w.label == cls]
        rng.shuffle(members)
        n_val = int(round(val_fraction * len(members)))
        if members and n_val == 0:
            n_val = 1
        val_idx.extend(members[:n_val])
    val_set = set(val_idx)
    train_idx = [i for i in range(len(windows)) if i not in val_set]
    return sorted(train_idx), sorted(val_idx)


# ---------------------------------------------------------------------------
# synthetic cohort with planted subtypes

@dataclass
class SynthSpec:
    """Planted-subtype cohort: every participant has one sleep-disruption
    event; subtypes differ in when it tends to strike and in its shape
    (cluster 0: early, narrow and deep; cluster 1: later, broad and shallow,
    similar total area).  Per-participant offsets dominate flat window
    means, and plain time pooling integrates the two event shapes to nearly
    the same trace, so the structure rewards a model that can attend to the
    event days.  Cluster 0 is the high-risk subtype for the outcome label."""

    n_participants: int = 400
    n_clusters: int = 2
    label_noise: float = 0.1
    missing_rate: float = 0.15
    seed: int = 0
    window: int = 28
    label_date: dt.date = dt.date(2019, 4, 28)
    feature_names: list[str] = field(default_factory=lambda: list(DEFAULT_FEATURES))
    # trajectory knobs (per feature: duration, avg duration, efficiency,
    # latency, waketime, bedtime)
    base: tuple = (410.0, 400.0, 93.5, 20.0, 520.0, 1510.0)
    cluster_delta: tuple = (
        (-9.0, -8.0, -0.25, 1.5, -3.0, 7.0),
        (9.0, 8.0, 0.25, -1.5, 3.0, -7.0),
    )
    dip_depth: tuple = (
        (-85.0, -77.0, -2.6, 14.0, 34.0, 55.0),  # cluster 0: sharp decline
        (-36.0, -32.0, -1.1, 6.0, 14.5, 23.5),   # cluster 1: shallow dip
    )
    dip_day_range: tuple = ((5, 9), (10, 18))    # event day drawn per participant
    dip_width: tuple = (1.1, 2.6)
    offset_scale: tuple = (25.0, 22.0, 0.7, 3.5, 18.0, 18.0)
    noise_scale: tuple = (15.0, 14.0, 0.5, 3.0, 14.0, 14.0)
    ar_coeff: float = 0.5
    cohort_shift: float = 0.0

    def __post_init__(self):
        if self.n_clusters < 1 or self.n_participants < 2 * self.n_clusters:
            raise ValueError("need at least 2 participants per cluster")
        if len(self.cluster_delta) < self.n_clusters:
            raise ValueError("cluster_delta must cover every cluster")
        if not 0.0 <= self.missing_rate < 1.0 or not 0.0 <= self.label_noise <= 0.5:
            raise ValueError("missing_rate in [0,1), label_noise in [0, 0.5]")


_SHIFT_DIRECTION = np.array([14.0, 12.0, -0.4, 2.0, 10.0, 9.0])


def synth_generate(spec: SynthSpec):
    """Generate (records, labels, truth) for a planted-subtype cohort.

    Deterministic per seed: each participant draws from its own child
    generator, so cohorts of different sizes share a common prefix.
    """
    d = len(spec.feature_names)
    base = np.asarray(spec.base[:d], dtype=float)
    if spec.cohort_shift != 0.0:
        base = base + spec.cohort_shift * _SHIFT_DIRECTION[:d]
    root = Rng(spec.seed)
    records: list[DailyRecord] = []
    labels = []
    truth = []
    days = [spec.label_date - dt.timedelta(days=spec.window - 1 - t)
            for t in range(spec.window)]
    t_axis = np.arange(spec.window, dtype=float)
    for i in range(spec.n_participants):
        pid = f"P{i:04d}"
        cluster = i % spec.n_clusters
        rng = root.spawn(i)
        delta = np.asarray(spec.cluster_delta[cluster][:d], dtype=float)
        dip = np.asarray(spec.dip_depth[cluster][:d], dtype=float)
        lo, hi = spec.dip_day_range[cluster]
        event_day = float(rng.randint(lo, hi))
        bump = np.exp(-0.5 * ((t_axis - event_day) / spec.dip_width[cluster]) ** 2)
        offset = rng.normal(d) * np.asarray(spec.offset_scale[:d])
        traj = base + delta + offset + bump[:, None] * dip
        noise = np.empty((spec.window, d))
        prev = np.zeros(d)
        for t in range(spec.window):
            prev = spec.ar_coeff * prev + rng.normal(d) * np.asarray(spec.noise_scale[:d])
            noise[t] = prev
        mat = traj + noise
        for t, date in enumerate(days):
            if rng.uniform() < spec.missing_rate:
                continue
            records.append(DailyRecord(pid, date, mat[t].copy()))
        risk = 1 if cluster % 2 == 0 else 0  # cluster 0 is the high-risk subtype
        # noise model: a `label_noise` fraction of labels are pure coin flips
        if rng.uniform() < spec.label_noise:
            label = 1 if rng.uniform() < 0.5 else 0
        else:
            label = risk
        labels.append((pid, spec.label_date, int(label)))
        truth.append((pid, cluster))
    return records, labels, truth
