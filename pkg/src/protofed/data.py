"""Dataset ingestion, preprocessing, splitting, Dirichlet partitioning across
participants, and synthetic data generation for desk-scale experiments.

All functions are pure: they return new Dataset/PartitionPlan values and are
safe to call from parallel workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
import numpy as np
import pandas as pd
import yaml


@dataclass
class Dataset:
    """Feature matrix with integer class labels.

    feature_ranges holds per-feature (min, max) of the raw (pre-normalization)
    training data; preprocessing preserves it so downstream consumers (PSNR,
    attack bounds) always see original-scale ranges.
    """

    features: np.ndarray  # (N, F) float64
    labels: np.ndarray  # (N,) int64 in [0, K)
    class_names: list[str]
    feature_ranges: np.ndarray  # (F, 2)
    dropped_rows: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.feature_ranges = np.asarray(self.feature_ranges, dtype=np.float64)
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("features must be (N, F) and labels (N,)")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels must have matching length")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite after preprocessing")
        if len(self.class_names) < 2:
            raise ValueError("need at least two classes")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ValueError("labels must lie in [0, K)")

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(
            features=self.features[indices],
            labels=self.labels[indices],
            class_names=self.class_names,
            feature_ranges=self.feature_ranges,
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass
class PartitionPlan:
    """Assignment of training rows to participants.

    shards[i] are row indices into the parent training set; counts[i, j] is
    participant i's sample count for class j.
    """

    num_participants: int
    shards: list[np.ndarray]
    counts: np.ndarray  # (M, K)
    alpha: float

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        total = np.concatenate([np.asarray(s) for s in self.shards]) if self.shards else np.array([])
        if len(np.unique(total)) != total.size:
            raise ValueError("shards must be disjoint")
        for i, shard in enumerate(self.shards):
            if self.counts[i].sum() != len(shard):
                raise ValueError(f"counts row {i} does not match shard size")


# ---------------------------------------------------------------------------
# CSV ingestion


@dataclass
class CsvSchema:
    """Column roles for CSV ingestion: the label column, columns to drop, and
    categorical feature columns (one-hot encoded in sorted category order)."""

    label: str
    drop: list[str] = field(default_factory=list)
    categorical: list[str] = field(default_factory=list)


def load_schema(path: str | Path) -> CsvSchema:
    """Read a key-value schema file (label / drop / categorical)."""
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, dict) or "label" not in raw:
        raise ValueError(f"schema file {path} must define a 'label' key")

    def as_list(value):
        if value is None:
            return []
        if isinstance(value, str):
            return [v.strip() for v in value.split(",") if v.strip()]
        return list(value)

    return CsvSchema(
        label=str(raw["label"]),
        drop=as_list(raw.get("drop")),
        categorical=as_list(raw.get("categorical")),
    )


def load_csv(path: str | Path, schema: CsvSchema) -> Dataset:
    """Load a header CSV into a Dataset.

    Non-numeric feature columns must be declared categorical or dropped; rows
    with missing or non-finite values are dropped and counted.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    frame = pd.read_csv(path)
    if frame.empty:
        raise ValueError(f"{path}: empty dataset")
    if schema.label not in frame.columns:
        raise ValueError(f"{path}: label column {schema.label!r} not found")
    frame = frame.drop(columns=[c for c in schema.drop if c in frame.columns])

    labels_raw = frame[schema.label].astype(str)
    feature_frame = frame.drop(columns=[schema.label])

    encoded = []
    for col in feature_frame.columns:
        if col in schema.categorical:
            values = feature_frame[col].astype(str)
            for cat in sorted(values.dropna().unique()):
                encoded.append(pd.Series((values == cat).astype(float), name=f"{col}={cat}"))
        else:
            encoded.append(pd.to_numeric(feature_frame[col], errors="coerce"))
    if not encoded:
        raise ValueError(f"{path}: no feature columns left after applying the schema")
    features = pd.concat(encoded, axis=1).to_numpy(dtype=np.float64)

    valid = np.isfinite(features).all(axis=1) & labels_raw.notna().to_numpy()
    dropped = int((~valid).sum())
    features = features[valid]
    labels_raw = labels_raw[valid]
    if features.shape[0] == 0:
        raise ValueError(f"{path}: no valid rows")

    class_names = sorted(labels_raw.unique())
    if len(class_names) < 2:
        raise ValueError(f"{path}: need at least two label values, found {class_names}")
    index = {name: i for i, name in enumerate(class_names)}
    labels = labels_raw.map(index).to_numpy(dtype=np.int64)

    return Dataset(
        features=features,
        labels=labels,
        class_names=list(class_names),
        feature_ranges=np.stack([features.min(axis=0), features.max(axis=0)], axis=1),
        dropped_rows=dropped,
    )


# ---------------------------------------------------------------------------
# Preprocessing


@dataclass
class Scaler:
    """Fitted normalization, applicable to held-out data and invertible for
    reporting in original feature units."""

    method: str  # "minmax" | "zscore" | "none"
    offset: np.ndarray  # per-feature shift
    scale: np.ndarray  # per-feature divisor (1 where degenerate)

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (features - self.offset) / self.scale

    def inverse(self, features: np.ndarray) -> np.ndarray:
        return features * self.scale + self.offset


def fit_scaler(dataset: Dataset, method: str) -> Scaler:
    x = dataset.features
    if method in ("minmax", "min-max"):
        lo, hi = x.min(axis=0), x.max(axis=0)
        span = hi - lo
        scale = np.where(span > 0, span, 1.0)
        return Scaler("minmax", offset=lo, scale=scale)
    if method in ("zscore", "z-score"):
        mean, sd = x.mean(axis=0), x.std(axis=0)
        scale = np.where(sd > 0, sd, 1.0)
        return Scaler("zscore", offset=mean, scale=scale)
    if method == "none":
        f = x.shape[1]
        return Scaler("none", offset=np.zeros(f), scale=np.ones(f))
    raise ValueError(f"unknown preprocessing method {method!r}")


def apply_scaler(dataset: Dataset, scaler: Scaler) -> Dataset:
    """Normalize with an already-fitted scaler, keeping the raw feature ranges."""
    return Dataset(
        features=scaler.transform(dataset.features),
        labels=dataset.labels,
        class_names=dataset.class_names,
        feature_ranges=dataset.feature_ranges,
        dropped_rows=dataset.dropped_rows,
    )


def preprocess(dataset: Dataset, method: str) -> Dataset:
    """Normalize features in place of the dataset's own statistics.

    min-max maps each feature to [0, 1] (constant features to 0); z-score
    standardizes to mean 0 / sd 1. The stored feature_ranges stay those of the
    pre-normalization data.
    """
    if dataset.num_samples == 0:
        raise ValueError("cannot preprocess an empty dataset")
    return apply_scaler(dataset, fit_scaler(dataset, method))


# ---------------------------------------------------------------------------
# Splitting and partitioning


def split_train_test(
    dataset: Dataset, fraction: float = 0.8, seed: int = 0
) -> tuple[Dataset, Dataset]:
    """Stratified train/test split, deterministic under seed.

    Every class with at least two samples appears in both splits; a
    single-sample class goes entirely to training. Train-set feature ranges
    are attached to both splits.
    """
    if dataset.num_samples < 10:
        raise ValueError("need at least 10 samples to split")
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 101])))
    train_idx, test_idx = [], []
    for j in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == j)
        if idx.size == 0:
            continue
        idx = rng.permutation(idx)
        if idx.size == 1:
            train_idx.append(idx)
            continue
        n_train = int(round(idx.size * fraction))
        n_train = min(max(n_train, 1), idx.size - 1)
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    train = dataset.subset(train_idx)
    ranges = np.stack([train.features.min(axis=0), train.features.max(axis=0)], axis=1)
    train.feature_ranges = ranges
    test = dataset.subset(test_idx)
    test.feature_ranges = ranges
    return train, test


def dirichlet_partition(
    train: Dataset, num_participants: int, alpha: float, seed: int = 0
) -> PartitionPlan:
    """Split the training set across participants with per-class Dirichlet
    proportions.

    For each class, proportions over participants are drawn from
    Dir(alpha * 1_M) and that class's rows are assigned multinomially.
    Small alpha produces heavy skew, including participants holding no
    samples of some classes; such empty allocations are intentional.
    """
    if num_participants < 2:
        raise ValueError("need at least 2 participants")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 202])))
    m, k = num_participants, train.num_classes
    assigned: list[list[np.ndarray]] = [[] for _ in range(m)]
    counts = np.zeros((m, k), dtype=np.int64)
    for j in range(k):
        idx = rng.permutation(np.flatnonzero(train.labels == j))
        proportions = rng.dirichlet(np.full(m, alpha))
        per_participant = rng.multinomial(idx.size, proportions)
        offsets = np.concatenate([[0], np.cumsum(per_participant)])
        for i in range(m):
            assigned[i].append(idx[offsets[i] : offsets[i + 1]])
            counts[i, j] = per_participant[i]
    shards = [np.sort(np.concatenate(parts)) for parts in assigned]
    return PartitionPlan(num_participants=m, shards=shards, counts=counts, alpha=alpha)


# ---------------------------------------------------------------------------
# Synthetic data


def synthesize_gaussian(
    num_classes: int,
    num_features: int,
    per_class_n: int,
    class_separation: float,
    seed: int = 0,
    noise_sd: float = 1.0,
) -> Dataset:
    """Isotropic Gaussian blobs at distinct class means.

    Means sit `class_separation` from the origin along orthonormal directions
    (random but seed-deterministic), so pairwise mean distance is
    separation * sqrt(2) and the separation-to-noise ratio controls the Bayes
    error. separation=0 collapses all classes onto one distribution. Scaling
    separation and noise_sd together rescales the feature space without
    changing the classification problem.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if num_features < 4:
        raise ValueError("need at least 4 features")
    if noise_sd <= 0:
        raise ValueError("noise_sd must be positive")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 303])))
    directions = rng.normal(size=(num_features, max(num_classes, 1)))
    if num_classes <= num_features:
        q, _ = np.linalg.qr(directions[:, :num_classes])
        means = class_separation * q.T
    else:
        d = rng.normal(size=(num_classes, num_features))
        means = class_separation * d / np.linalg.norm(d, axis=1, keepdims=True)
    features = np.empty((num_classes * per_class_n, num_features))
    labels = np.empty(num_classes * per_class_n, dtype=np.int64)
    for j in range(num_classes):
        block = slice(j * per_class_n, (j + 1) * per_class_n)
        features[block] = means[j] + noise_sd * rng.normal(size=(per_class_n, num_features))
        labels[block] = j
    order = rng.permutation(features.shape[0])
    features, labels = features[order], labels[order]
    return Dataset(
        features=features,
        labels=labels,
        class_names=[f"class_{j}" for j in range(num_classes)],
        feature_ranges=np.stack([features.min(axis=0), features.max(axis=0)], axis=1),
    )
