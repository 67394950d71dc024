"""Desk-scale teacher ensembles and the comparison frameworks.

Teachers are nearest-centroid classifiers trained on disjoint partitions of
the training set.  :func:`run_framework` scores one framework on a test set:
the non-private baselines, local noise (LDP and standalone), PATE-style
Laplace noise with a trusted aggregator, and the encrypted protocol itself.
"""

from __future__ import annotations

import csv
import enum
import math
import random
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DatasetError
from .mechanisms import (
    BINOMIAL,
    GAUSSIAN,
    BinomialPlan,
    GaussianPlan,
    PrivacyParams,
    discrete_gaussian_table,
    make_plan,
)
from .paillier import ThresholdConfig, deal_keys
from .protocol import RunConfig, VoteVector, default_threshold, predict, run_protocol, simulate_plaintext


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    label_names: Optional[tuple[str, ...]] = None

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if features.ndim != 2:
            raise DatasetError(f"features must be a 2-d matrix, got shape {features.shape}")
        if features.shape[0] != labels.shape[0]:
            raise DatasetError(f"{features.shape[0]} feature rows but {labels.shape[0]} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise DatasetError(f"labels must lie in [0, {self.class_count})")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, idx: np.ndarray) -> Dataset:
        return Dataset(self.features[idx], self.labels[idx], self.class_count, self.label_names)


@dataclass(frozen=True)
class LocalModel:
    """Per-class mean feature vectors; rows of absent classes are NaN and never voted for."""

    centroids: np.ndarray
    class_count: int

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.centroids).any(axis=1)


class FrameworkKind(enum.Enum):
    CENTRALIZED = "centralized"
    DISTRIBUTED_NON_PRIVATE = "distributed_non_private"
    LDP = "ldp"
    STANDALONE = "standalone"
    PATE = "pate"
    DPPP = "dppp"


def partition(data: Dataset, n_parts: int, rng: np.random.Generator) -> list[Dataset]:
    """Random disjoint split into ``n_parts`` subsets whose sizes differ by at most one."""
    if n_parts < 1 or n_parts > len(data):
        raise DatasetError(f"cannot split {len(data)} examples into {n_parts} parts")
    order = rng.permutation(len(data))
    return [data.subset(idx) for idx in np.array_split(order, n_parts)]


def train_test_split(data: Dataset, test_fraction: float, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    order = rng.permutation(len(data))
    n_test = int(round(test_fraction * len(data)))
    return data.subset(order[n_test:]), data.subset(order[:n_test])


def train_local(subset: Dataset) -> LocalModel:
    if len(subset) == 0:
        raise DatasetError("cannot train on an empty subset")
    centroids = np.full((subset.class_count, subset.dim), np.nan)
    for j in range(subset.class_count):
        rows = subset.features[subset.labels == j]
        if len(rows):
            centroids[j] = rows.mean(axis=0)
    return LocalModel(centroids=centroids, class_count=subset.class_count)


def predict_labels(model: LocalModel, features: np.ndarray) -> np.ndarray:
    """Nearest present centroid for every row; ties go to the lowest class index."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if features.shape[1] != model.centroids.shape[1]:
        raise DatasetError(f"expected {model.centroids.shape[1]} features, got {features.shape[1]}")
    diff = features[:, None, :] - model.centroids[None, :, :]
    dist = np.einsum("ijk,ijk->ij", diff, diff)
    dist[:, ~model.present] = np.inf
    return np.argmin(dist, axis=1)


def predict_onehot(model: LocalModel, x: Sequence[float]) -> VoteVector:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DatasetError("expected a single feature vector")
    label = int(predict_labels(model, x[None, :])[0])
    return VoteVector.one_hot(label, model.class_count)


def synth_blobs(n_samples: int, c: int, d: int, separation: float, seed: int, max_retries: int = 1000) -> Dataset:
    """``c`` unit-variance Gaussian clusters with centers at least ``separation`` apart.

    Labels are balanced (round-robin, then shuffled).
    """
    if min(n_samples, c, d) <= 0 or separation <= 0:
        raise DatasetError("n_samples, c, d and separation must all be positive")
    gen = np.random.default_rng(seed)
    scale = separation * max(1.0, c ** (1.0 / d))
    for _ in range(max_retries):
        centers = gen.uniform(-scale, scale, size=(c, d))
        gaps = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
        gaps[np.diag_indices(c)] = np.inf
        if gaps.min() >= separation:
            break
    else:
        raise DatasetError(f"could not place {c} centers {separation} apart in {d} dimensions")
    labels = gen.permutation(np.arange(n_samples) % c)
    features = centers[labels] + gen.standard_normal((n_samples, d))
    return Dataset(features, labels, c)


def load_csv(path: str | Path, label_column: str | int) -> Dataset:
    """Read a numeric CSV with a header row.

    Labels are mapped to 0..c-1 in order of first appearance; the original
    names are kept in ``Dataset.label_names``.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise DatasetError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not body:
        raise DatasetError(f"{path}: no data rows")
    if isinstance(label_column, int):
        if not 0 <= label_column < len(header):
            raise DatasetError(f"{path}: label column index {label_column} out of range")
        label_idx = label_column
    else:
        try:
            label_idx = header.index(label_column)
        except ValueError:
            raise DatasetError(f"{path}: no column named {label_column!r}") from None

    names: dict[str, int] = {}
    labels = []
    features = []
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DatasetError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
        raw_label = row[label_idx].strip()
        labels.append(names.setdefault(raw_label, len(names)))
        values = []
        for k, cell in enumerate(row):
            if k == label_idx:
                continue
            try:
                values.append(float(cell))
            except ValueError:
                raise DatasetError(f"{path}: non-numeric value {cell!r} at row {r}, column {header[k]!r}") from None
        features.append(values)
    return Dataset(np.array(features), np.array(labels), len(names), tuple(names))


def teacher_votes(models: Sequence[LocalModel], features: np.ndarray) -> np.ndarray:
    """Predicted label per (test point, teacher)."""
    return np.stack([predict_labels(m, features) for m in models], axis=1)


def _histograms(labels: np.ndarray, class_count: int) -> np.ndarray:
    """Vote counts per (test point, class) from a (points, teachers) label matrix."""
    out = np.zeros((labels.shape[0], class_count), dtype=np.int64)
    for j in range(class_count):
        out[:, j] = (labels == j).sum(axis=1)
    return out


def _discrete_gaussian(sigma: float, size, gen: np.random.Generator) -> np.ndarray:
    bound, _, cdf = discrete_gaussian_table(float(sigma))
    return np.searchsorted(np.asarray(cdf), gen.random(size), side="right") - bound


def full_noise(plan, size, gen: np.random.Generator) -> np.ndarray:
    """Centered noise at the full aggregate level, for the local-noise baselines."""
    if isinstance(plan, BinomialPlan):
        n = plan.n_total
        return gen.binomial(n, 0.5, size=size) - n / 2 if n else np.zeros(size)
    if plan.sigma_total == 0:
        return np.zeros(size)
    return _discrete_gaussian(plan.sigma_total, size, gen).astype(float)


@lru_cache(maxsize=8)
def cached_keys(key_bits: int, n_parties: int, threshold: int, seed: int = 0):
    """Deal once per (key size, N, t); keygen is a one-off setup cost."""
    return deal_keys(key_bits, ThresholdConfig(n_parties, threshold), random.Random(f"dppp/keys/{seed}"))


def _accuracy(pred: np.ndarray, truth: np.ndarray) -> float:
    return float(np.mean(pred == truth)) if len(truth) else 0.0


def run_framework(
    kind: FrameworkKind | str,
    train: Dataset,
    test: Dataset,
    params: PrivacyParams,
    n_teachers: int,
    seed: int,
    mechanism: str = BINOMIAL,
    key_bits: int = 512,
    threshold: Optional[int] = None,
    backend: str = "encrypted",
) -> float:
    """Accuracy of one framework on ``test``.

    The training split into teachers depends only on ``seed``, so every
    framework sees the same ensemble for a given seed.  Noise for the
    non-encrypted frameworks comes from a numpy generator derived from the
    seed and the framework name; DPPP runs the full encrypted protocol per
    test point with keys dealt once per (key_bits, N, t); ``backend="shadow"``
    swaps in the plaintext shadow run, which yields bit-identical histograms
    without the cryptographic cost.
    """
    if backend not in ("encrypted", "shadow"):
        raise ValueError(f"backend must be 'encrypted' or 'shadow', got {backend!r}")
    kind = FrameworkKind(kind)
    if kind is FrameworkKind.CENTRALIZED:
        return _accuracy(predict_labels(train_local(train), test.features), test.labels)

    c = train.class_count
    parts = partition(train, n_teachers, np.random.default_rng(seed))
    models = [train_local(p) for p in parts]
    labels = teacher_votes(models, test.features)
    hist = _histograms(labels, c)
    if kind is FrameworkKind.DISTRIBUTED_NON_PRIVATE:
        return _accuracy(np.argmax(hist, axis=1), test.labels)

    gen = np.random.default_rng([seed, list(FrameworkKind).index(kind)])
    if kind is FrameworkKind.PATE:
        if math.isinf(params.epsilon):
            noisy = hist.astype(float)
        else:
            noisy = hist + gen.laplace(0.0, 2.0 / params.epsilon, size=hist.shape)
        return _accuracy(np.argmax(noisy, axis=1), test.labels)

    plan = make_plan(mechanism, params, n_teachers)
    if kind is FrameworkKind.LDP:
        noisy = hist + full_noise(plan, (len(test), n_teachers, c), gen).sum(axis=1)
        return _accuracy(np.argmax(noisy, axis=1), test.labels)
    if kind is FrameworkKind.STANDALONE:
        accs = []
        for i in range(n_teachers):
            onehot = np.eye(c)[labels[:, i]]
            noisy = onehot + full_noise(plan, (len(test), c), gen)
            accs.append(_accuracy(np.argmax(noisy, axis=1), test.labels))
        return float(np.mean(accs))

    t = threshold if threshold is not None else default_threshold(n_teachers)
    keys = cached_keys(key_bits, n_teachers, t) if backend == "encrypted" else None
    mech = GAUSSIAN if isinstance(plan, GaussianPlan) else BINOMIAL
    correct = 0
    for k in range(len(test)):
        votes = [VoteVector.one_hot(int(y), c) for y in labels[k]]
        config = RunConfig(n_teachers, t, c, mechanism=mech, seed=seed * 1_000_003 + k, key_bits=key_bits)
        if keys is None:
            label = predict(simulate_plaintext(config, votes, plan))
        else:
            _, label, _ = run_protocol(config, votes, plan, keys=keys)
        correct += int(label == test.labels[k])
    return correct / len(test) if len(test) else 0.0
