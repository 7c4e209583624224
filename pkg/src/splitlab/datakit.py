"""Synthetic binary-classification data, CSV ingestion, and non-IID
partitioning across virtual clients.

Client i draws from source i. The default training-set skew models five data
sources of very different size; validation and test splits are uniform across
sources with a low positive prevalence.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

DEFAULT_SOURCE_WEIGHTS = (3772, 1150, 1816, 880, 1090)
DEFAULT_TRAIN_PREVALENCE = 0.5
DEFAULT_EVAL_PREVALENCE = 0.1

_DATA_DOMAIN = 11
_SHUFFLE_DOMAIN = 17


@dataclass
class Dataset:
    features: np.ndarray  # [N, F] float64
    labels: np.ndarray  # [N, 1] float64 in {0, 1}
    source_ids: np.ndarray  # [N] int64

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1, 1)
        self.source_ids = np.asarray(self.source_ids, dtype=np.int64)
        n = self.features.shape[0]
        if n < 1:
            raise ValidationError("dataset must hold at least one sample")
        if self.labels.shape[0] != n or self.source_ids.shape[0] != n:
            raise ValidationError("features, labels, and source_ids must align")
        if not np.all((self.labels == 0.0) | (self.labels == 1.0)):
            raise ValidationError("labels must be 0 or 1")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def prevalence(self) -> float:
        return float(self.labels.mean())

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(self.features[idx], self.labels[idx], self.source_ids[idx])

    @staticmethod
    def concat(parts: list["Dataset"]) -> "Dataset":
        return Dataset(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.source_ids for p in parts]),
        )


@dataclass
class ClientSplit:
    train: Dataset
    val: Dataset
    test: Dataset


@dataclass
class PartitionPlan:
    train_sizes: tuple[int, ...]
    val_sizes: tuple[int, ...]
    test_sizes: tuple[int, ...]
    train_prevalence: float = DEFAULT_TRAIN_PREVALENCE
    eval_prevalence: float = DEFAULT_EVAL_PREVALENCE

    def __post_init__(self):
        sizes = (*self.train_sizes, *self.val_sizes, *self.test_sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise ValidationError("all partition sizes must be positive")
        if len(self.val_sizes) != len(self.train_sizes) or len(self.test_sizes) != len(
            self.train_sizes
        ):
            raise ValidationError("per-client size lists must have equal length")
        for p in (self.train_prevalence, self.eval_prevalence):
            if not 0.0 < p < 1.0:
                raise ValidationError("prevalences must lie in (0, 1)")

    @property
    def n_clients(self) -> int:
        return len(self.train_sizes)

    @classmethod
    def proportional(
        cls,
        total_train: int,
        val_per_client: int,
        test_per_client: int,
        weights: tuple[int, ...] = DEFAULT_SOURCE_WEIGHTS,
        train_prevalence: float = DEFAULT_TRAIN_PREVALENCE,
        eval_prevalence: float = DEFAULT_EVAL_PREVALENCE,
    ) -> "PartitionPlan":
        """Apportion `total_train` across clients proportionally to `weights`."""
        train_sizes = tuple(largest_remainder(total_train, weights))
        n = len(weights)
        return cls(
            train_sizes,
            (val_per_client,) * n,
            (test_per_client,) * n,
            train_prevalence,
            eval_prevalence,
        )

    def class_needs(self) -> list[tuple[int, int]]:
        """Exact (positives, negatives) each client's source must supply."""
        needs = []
        for i in range(self.n_clients):
            pos = (
                round_half_up(self.train_prevalence * self.train_sizes[i])
                + round_half_up(self.eval_prevalence * self.val_sizes[i])
                + round_half_up(self.eval_prevalence * self.test_sizes[i])
            )
            total = self.train_sizes[i] + self.val_sizes[i] + self.test_sizes[i]
            needs.append((pos, total - pos))
        return needs


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def largest_remainder(total: int, weights) -> list[int]:
    """Integer apportionment of `total` proportional to `weights`.

    Floors the quotas and hands the leftover units to the largest fractional
    remainders (ties broken by lower index), so the parts always sum to total.
    """
    if total < 1 or any(w <= 0 for w in weights):
        raise ValidationError("total and weights must be positive")
    scale = sum(weights)
    quotas = [total * w / scale for w in weights]
    parts = [int(math.floor(q)) for q in quotas]
    leftover = total - sum(parts)
    order = sorted(range(len(weights)), key=lambda i: (-(quotas[i] - parts[i]), i))
    for i in order[:leftover]:
        parts[i] += 1
    return parts


def generate_synthetic(
    seed: int,
    n_samples: int,
    n_features: int,
    class_separation: float,
    per_source_shift: float,
    n_sources: int = 5,
    class_counts: list[tuple[int, int]] | None = None,
) -> Dataset:
    """Two-class Gaussian mixture over `n_sources` sources.

    Class means sit `class_separation` apart; each source additionally shifts
    both classes by `per_source_shift` along its own random direction, which
    is what makes the per-client distributions non-IID.

    `class_counts` pins exact (positives, negatives) per source; otherwise
    `n_samples` is spread evenly with balanced classes.
    """
    if n_features < 1 or n_sources < 1:
        raise ValidationError("n_features and n_sources must be >= 1")
    if class_separation < 0 or per_source_shift < 0:
        raise ValidationError("separation and shift must be non-negative")
    if class_counts is None:
        if n_samples < 1:
            raise ValidationError("n_samples must be >= 1")
        sizes = largest_remainder(n_samples, (1,) * n_sources)
        class_counts = [((s + 1) // 2, s // 2) for s in sizes]
    if len(class_counts) != n_sources:
        raise ValidationError("class_counts must have one entry per source")

    rng = np.random.default_rng([seed, _DATA_DOMAIN])
    directions = rng.standard_normal((n_sources, n_features))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    half = class_separation / 2.0 / math.sqrt(n_features)

    feats, labels, sources = [], [], []
    for s, (n_pos, n_neg) in enumerate(class_counts):
        shift = per_source_shift * directions[s]
        for label, count in ((0, n_neg), (1, n_pos)):
            if count == 0:
                continue
            mean = (label - 0.5) * 2.0 * half  # -half for class 0, +half for class 1
            block = rng.standard_normal((count, n_features)) + mean + shift
            feats.append(block)
            labels.append(np.full((count, 1), float(label)))
            sources.append(np.full(count, s, dtype=np.int64))
    if not feats:
        raise ValidationError("class_counts produced an empty dataset")
    return Dataset(np.concatenate(feats), np.concatenate(labels), np.concatenate(sources))


def generate_for_plan(
    seed: int,
    plan: PartitionPlan,
    n_features: int,
    class_separation: float,
    per_source_shift: float,
) -> Dataset:
    """Generate a pool whose per-source class counts exactly cover `plan`."""
    return generate_synthetic(
        seed,
        n_samples=0,
        n_features=n_features,
        class_separation=class_separation,
        per_source_shift=per_source_shift,
        n_sources=plan.n_clients,
        class_counts=plan.class_needs(),
    )


def partition(dataset: Dataset, plan: PartitionPlan) -> dict[int, ClientSplit]:
    """Carve per-client train/val/test splits with exact prevalence counts.

    Client i draws only from source i; splits are disjoint by construction.
    """
    out: dict[int, ClientSplit] = {}
    for i in range(plan.n_clients):
        pos_pool = np.flatnonzero((dataset.source_ids == i) & (dataset.labels[:, 0] == 1.0))
        neg_pool = np.flatnonzero((dataset.source_ids == i) & (dataset.labels[:, 0] == 0.0))
        cursor_pos = cursor_neg = 0
        splits = []
        for size, prevalence in (
            (plan.train_sizes[i], plan.train_prevalence),
            (plan.val_sizes[i], plan.eval_prevalence),
            (plan.test_sizes[i], plan.eval_prevalence),
        ):
            n_pos = round_half_up(prevalence * size)
            n_neg = size - n_pos
            if cursor_pos + n_pos > len(pos_pool):
                raise ValidationError(
                    f"client {i}: needs {cursor_pos + n_pos} positives, source has {len(pos_pool)}"
                )
            if cursor_neg + n_neg > len(neg_pool):
                raise ValidationError(
                    f"client {i}: needs {cursor_neg + n_neg} negatives, source has {len(neg_pool)}"
                )
            idx = np.concatenate(
                [
                    pos_pool[cursor_pos : cursor_pos + n_pos],
                    neg_pool[cursor_neg : cursor_neg + n_neg],
                ]
            )
            cursor_pos += n_pos
            cursor_neg += n_neg
            splits.append(dataset.subset(idx))
        out[i] = ClientSplit(*splits)
    return out


def batches(
    dataset: Dataset, batch_size: int, seed: int, epoch: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled (features, labels) mini-batches; the short final batch is kept.

    The permutation depends only on (seed, epoch) and the dataset length, so
    reruns are reproducible and clients holding identical data see identical
    batch streams.
    """
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    perm = np.random.default_rng([seed, _SHUFFLE_DOMAIN, epoch]).permutation(len(dataset))
    return [
        (dataset.features[perm[i : i + batch_size]], dataset.labels[perm[i : i + batch_size]])
        for i in range(0, len(dataset), batch_size)
    ]


def csv_header(n_features: int) -> list[str]:
    return [f"feature_{j}" for j in range(n_features)] + ["label", "source_id"]


def load_csv(path) -> Dataset:
    """Read `feature_0,...,feature_{F-1},label,source_id` (header required)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        if len(header) < 3 or header[-2:] != ["label", "source_id"]:
            raise ValidationError(f"{path}: expected columns feature_*,label,source_id")
        n_features = len(header) - 2
        if header[:n_features] != csv_header(n_features)[:n_features]:
            raise ValidationError(f"{path}: malformed feature columns")
        rows = [row for row in reader if row]
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    try:
        data = np.asarray(rows, dtype=np.float64)
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric cell ({exc})") from None
    if data.ndim != 2 or data.shape[1] != n_features + 2:
        raise ValidationError(f"{path}: inconsistent column count")
    return Dataset(data[:, :n_features], data[:, n_features], data[:, n_features + 1])


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(csv_header(dataset.n_features))
        for i in range(len(dataset)):
            writer.writerow(
                [repr(float(v)) for v in dataset.features[i]]
                + [int(dataset.labels[i, 0]), int(dataset.source_ids[i])]
            )
