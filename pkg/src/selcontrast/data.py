"""Synthetic vector datasets, label-noise injection, and feature-space augmentation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

TRAIN = "train"
TEST = "test"

_TEST_FRACTION = 0.2
# Minimum pairwise distance between cluster means, in units of cluster_spread.
_MEAN_SEPARATION = 10.0


@dataclass(frozen=True)
class Dataset:
    """Feature vectors with observed (possibly corrupted) and hidden clean labels.

    Corruption is confined to the train split; test labels stay clean so that
    generalization numbers are trustworthy.
    """

    instances: np.ndarray    # (n, dim) float64
    true_labels: np.ndarray  # (n,) int
    noisy_labels: np.ndarray  # (n,) int
    split: np.ndarray        # (n,) "train" | "test"
    n_classes: int

    def __post_init__(self):
        n = len(self.instances)
        if not (len(self.true_labels) == len(self.noisy_labels) == len(self.split) == n):
            raise ValueError("instances, labels and split must have equal length")
        if self.instances.ndim != 2:
            raise ValueError("instances must be a 2-d array")
        for name, labels in (("true_labels", self.true_labels),
                             ("noisy_labels", self.noisy_labels)):
            if n and (labels.min() < 0 or labels.max() >= self.n_classes):
                raise ValueError(f"{name} contains values outside [0, {self.n_classes})")
        bad_split = np.flatnonzero(~np.isin(self.split, (TRAIN, TEST)))
        if bad_split.size:
            raise ValueError(f"example {bad_split[0]}: split must be '{TRAIN}' or '{TEST}'")
        corrupted = np.flatnonzero((self.split == TEST) & (self.true_labels != self.noisy_labels))
        if corrupted.size:
            raise ValueError(
                f"test example {corrupted[0]} has a corrupted label; noise is train-only")

    @property
    def n(self) -> int:
        return len(self.instances)

    @property
    def dim(self) -> int:
        return self.instances.shape[1]

    def train_indices(self) -> np.ndarray:
        return np.flatnonzero(self.split == TRAIN)

    def test_indices(self) -> np.ndarray:
        return np.flatnonzero(self.split == TEST)


@dataclass(frozen=True)
class NoiseSpec:
    """How to corrupt train labels.

    kind "symmetric" redraws the label of a fixed fraction of train examples
    uniformly over all classes (so a share rate/n_classes lands back on the
    original label). kind "asymmetric" flips each train label with probability
    `rate` through a class map; the default map sends c to (c+1) mod n_classes.
    An explicit asym_map may cover only some classes; unmapped classes never
    flip, and mapped entries must change the class.
    """

    kind: str
    rate: float
    asym_map: dict[int, int] | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("symmetric", "asymmetric"):
            raise ValueError(f"unknown noise kind: {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("noise rate must lie in [0, 1]")
        if self.asym_map is not None:
            for src, dst in self.asym_map.items():
                if src == dst:
                    raise ValueError(f"asym_map must change the class (got {src}->{dst})")


@dataclass(frozen=True)
class AugmentationSpec:
    """Stochastic feature-space view: jitter, coordinate dropout, global scale."""

    jitter_sigma: float = 0.0
    drop_prob: float = 0.0
    scale_range: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop_prob must lie in [0, 1]")
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ValueError("scale_range must satisfy 0 < low <= high")


def make_blobs(n: int, n_classes: int, dim: int, cluster_spread: float, seed: int) -> Dataset:
    """Draw `n` points from `n_classes` isotropic Gaussian clusters.

    Cluster means are sampled once from the seed and rescaled so their minimum
    pairwise distance is a fixed multiple of cluster_spread, keeping classes
    well separated at any spread. Class sizes are balanced to within one
    example and a stratified 80/20 train/test split is assigned from the same
    seed. Noisy labels start out equal to the clean ones.
    """
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if n < n_classes:
        raise ValueError("need at least one example per class")
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if cluster_spread <= 0:
        raise ValueError("cluster_spread must be positive")
    rng = np.random.default_rng(seed)

    means = rng.standard_normal((n_classes, dim))
    gaps = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=-1)
    min_gap = gaps[~np.eye(n_classes, dtype=bool)].min()
    means *= _MEAN_SEPARATION * cluster_spread / min_gap

    counts = [n // n_classes + (1 if c < n % n_classes else 0) for c in range(n_classes)]
    blocks, labels, split = [], [], []
    for c, count in enumerate(counts):
        blocks.append(means[c] + cluster_spread * rng.standard_normal((count, dim)))
        labels.extend([c] * count)
        n_test = int(math.floor(_TEST_FRACTION * count + 0.5))
        tags = np.full(count, TRAIN, dtype="<U5")
        tags[rng.permutation(count)[:n_test]] = TEST
        split.append(tags)

    true_labels = np.asarray(labels, dtype=np.int64)
    return Dataset(
        instances=np.concatenate(blocks, axis=0),
        true_labels=true_labels,
        noisy_labels=true_labels.copy(),
        split=np.concatenate(split),
        n_classes=n_classes,
    )


def inject_noise(ds: Dataset, spec: NoiseSpec) -> Dataset:
    """Return a copy of `ds` with corrupted train labels per `spec`.

    Instances, true labels, split and test labels are untouched.
    """
    if spec.asym_map is not None:
        for src, dst in spec.asym_map.items():
            if not (0 <= src < ds.n_classes and 0 <= dst < ds.n_classes):
                raise ValueError(f"asym_map entry {src}->{dst} outside [0, {ds.n_classes})")
    if spec.kind == "asymmetric" and spec.asym_map is None and ds.n_classes < 2:
        raise ValueError("asymmetric noise without a map needs at least 2 classes")

    rng = np.random.default_rng(spec.rng_seed)
    train = ds.train_indices()
    noisy = ds.noisy_labels.copy()
    if spec.kind == "symmetric":
        n_corrupt = int(math.floor(spec.rate * len(train) + 0.5))
        chosen = train[rng.permutation(len(train))[:n_corrupt]]
        noisy[chosen] = rng.integers(0, ds.n_classes, size=n_corrupt)
    else:
        mapping = spec.asym_map
        if mapping is None:
            mapping = {c: (c + 1) % ds.n_classes for c in range(ds.n_classes)}
        flip = rng.random(len(train)) < spec.rate
        for i in train[flip]:
            noisy[i] = mapping.get(int(noisy[i]), int(noisy[i]))
    return replace(ds, noisy_labels=noisy)


def augment(x: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator) -> np.ndarray:
    """One stochastic view of `x`: add Gaussian jitter, zero random coordinates,
    multiply by a global scale drawn from scale_range."""
    if x.ndim != 1:
        raise ValueError("augment expects a single vector")
    out = x + rng.normal(0.0, spec.jitter_sigma, size=x.shape)
    out[rng.random(x.shape) < spec.drop_prob] = 0.0
    out *= rng.uniform(spec.scale_range[0], spec.scale_range[1])
    return out


def mixup_combine(x_a: np.ndarray, x_b: np.ndarray, alpha: float,
                  rng: np.random.Generator, lam: float | None = None):
    """Convex combination lam * x_a + (1 - lam) * x_b with lam ~ Beta(alpha, alpha).

    Returns (mixed, lam, dominant) where dominant is "a" when lam >= 0.5
    (ties go to the first argument). Pass `lam` to bypass the draw.
    """
    if alpha <= 0:
        raise ValueError("mixup alpha must be positive")
    if x_a.shape != x_b.shape:
        raise ValueError("mixup inputs must have equal shape")
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    mixed = lam * x_a + (1.0 - lam) * x_b
    return mixed, lam, ("a" if lam >= 0.5 else "b")


def _feature_header(dim: int) -> list[str]:
    return [f"feature_{j}" for j in range(dim)] + ["true_label", "noisy_label", "split"]


def dump_features_csv(ds: Dataset, path) -> None:
    """Write the dataset as CSV: feature_0..feature_{dim-1}, labels, split."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_feature_header(ds.dim))
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.instances[i]]
            row += [int(ds.true_labels[i]), int(ds.noisy_labels[i]), str(ds.split[i])]
            writer.writerow(row)


def load_features_csv(path, n_classes: int | None = None) -> Dataset:
    """Read a dataset written by dump_features_csv.

    Malformed rows raise ValueError naming the offending line. When n_classes
    is given, labels are validated against it; otherwise the class count is
    inferred as max(label) + 1.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    if len(header) < 4 or header[-3:] != ["true_label", "noisy_label", "split"]:
        raise ValueError(f"{path}: line 1: expected header feature_*,true_label,noisy_label,split")
    dim = len(header) - 3

    feats, true_labels, noisy_labels, split = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != dim + 3:
            raise ValueError(f"{path}: line {lineno}: expected {dim + 3} fields, got {len(row)}")
        try:
            feats.append([float(v) for v in row[:dim]])
            true_labels.append(int(row[dim]))
            noisy_labels.append(int(row[dim + 1]))
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from None
        split.append(row[dim + 2])

    true_arr = np.asarray(true_labels, dtype=np.int64)
    noisy_arr = np.asarray(noisy_labels, dtype=np.int64)
    if len(true_arr) == 0:
        raise ValueError(f"{path}: no data rows")
    if n_classes is None:
        n_classes = int(max(true_arr.max(), noisy_arr.max())) + 1
    for name, arr in (("true_label", true_arr), ("noisy_label", noisy_arr)):
        bad = np.flatnonzero((arr < 0) | (arr >= n_classes))
        if bad.size:
            raise ValueError(
                f"{path}: line {bad[0] + 2}: {name} {arr[bad[0]]} outside [0, {n_classes})")
    return Dataset(
        instances=np.asarray(feats, dtype=np.float64),
        true_labels=true_arr,
        noisy_labels=noisy_arr,
        split=np.asarray(split, dtype="<U5"),
        n_classes=n_classes,
    )
