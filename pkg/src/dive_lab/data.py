"""Long-tailed dataset synthesis, subset splits and the binary smoothing targets."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"DIVEDS01"
_HEADER = struct.Struct("<QQQ")


class DatasetFormatError(ValueError):
    """A dataset container could not be parsed; ``offset`` is the failing byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class ClassProfile:
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1 or counts.size < 2:
            raise ValueError("a profile needs at least two classes")
        if np.any(counts < 1):
            raise ValueError("every class needs at least one example")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def num_classes(self) -> int:
        return int(self.counts.size)

    @property
    def beta(self) -> float:
        return float(self.counts.max() / self.counts.min())

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    profile: ClassProfile

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or labels.shape != (features.shape[0],):
            raise ValueError("features must be (n, d) and labels (n,)")
        C = self.profile.num_classes
        if labels.size and (labels.min() < 0 or labels.max() >= C):
            raise ValueError("labels out of range")
        if not np.array_equal(np.bincount(labels, minlength=C), self.profile.counts):
            raise ValueError("label histogram does not match the class profile")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return int(self.labels.size)

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_classes(self) -> int:
        return self.profile.num_classes


@dataclass(frozen=True)
class SubsetSplit:
    many: frozenset
    medium: frozenset
    few: frozenset
    thresholds: tuple = (100, 20)

    def masks(self, num_classes: int) -> dict:
        out = {}
        for name in ("many", "medium", "few"):
            m = np.zeros(num_classes, dtype=bool)
            m[sorted(getattr(self, name))] = True
            out[name] = m
        return out


@dataclass
class SmoothedTarget:
    targets: np.ndarray
    epsilon: float
    head_class: int = 0
    tail_class: int = 1
    meta: dict = field(default_factory=dict)


def _round_half_up(x):
    return np.floor(np.asarray(x) + 0.5)


def exp_profile(C: int, n_max: int, beta: float) -> ClassProfile:
    """Exponentially decaying counts ``n_max * beta ** (-k / (C - 1))``."""
    if C < 2:
        raise ValueError("C must be >= 2")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if beta < 1:
        raise ValueError(f"imbalance factor must be >= 1, got {beta}")
    k = np.arange(C)
    counts = _round_half_up(n_max * float(beta) ** (-k / (C - 1)))
    return ClassProfile(np.maximum(counts, 1).astype(np.int64))


def class_means(C: int, d: int, separation: float, seed: int) -> np.ndarray:
    """Seed-derived random unit directions scaled by ``separation``."""
    rng = np.random.default_rng([seed, 0])
    dirs = rng.standard_normal((C, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return separation * dirs


def _sample(profile: ClassProfile, means: np.ndarray, rng) -> Dataset:
    d = means.shape[1]
    blocks = [means[k] + rng.standard_normal((int(c), d)) for k, c in enumerate(profile.counts)]
    labels = np.repeat(np.arange(profile.num_classes), profile.counts)
    return Dataset(np.concatenate(blocks), labels, profile)


def synth_gaussian_lt(profile: ClassProfile, d: int, separation: float, seed: int) -> Dataset:
    """Draw ``profile.counts[k]`` unit-variance Gaussian samples around class mean k."""
    if d < 2:
        raise ValueError("d must be >= 2")
    if not separation > 0:
        raise ValueError("separation must be positive")
    means = class_means(profile.num_classes, d, separation, seed)
    return _sample(profile, means, np.random.default_rng([seed, 1]))


def synth_balanced_test(C: int, per_class: int, d: int, separation: float, seed: int) -> Dataset:
    """Balanced evaluation split sharing the class means of :func:`synth_gaussian_lt`."""
    means = class_means(C, d, separation, seed)
    profile = ClassProfile(np.full(C, per_class))
    return _sample(profile, means, np.random.default_rng([seed, 2]))


def synth_pair(C=20, n_max=200, beta=100.0, d=32, separation=3.0, seed=0, test_per_class=50):
    """Long-tailed training set plus its balanced companion test set."""
    train = synth_gaussian_lt(exp_profile(C, n_max, beta), d, separation, seed)
    test = synth_balanced_test(C, test_per_class, d, separation, seed)
    return train, test


def subsample_longtail(balanced: Dataset, beta: float, seed: int) -> Dataset:
    """Keep an exponentially decaying number of examples per class."""
    counts = balanced.profile.counts
    if np.any(counts != counts[0]):
        raise ValueError("subsample_longtail expects a flat class profile")
    target = exp_profile(balanced.num_classes, int(counts[0]), beta)
    if np.any(target.counts > counts):
        raise ValueError("requested count exceeds the available examples")
    rng = np.random.default_rng(seed)
    keep = []
    for k, want in enumerate(target.counts):
        idx = np.flatnonzero(balanced.labels == k)
        keep.append(np.sort(rng.choice(idx, size=int(want), replace=False)))
    keep = np.concatenate(keep)
    return Dataset(balanced.features[keep], balanced.labels[keep], target)


def split_subsets(profile: ClassProfile, hi: int = 100, lo: int = 20) -> SubsetSplit:
    """Many (> hi), medium ([lo, hi]) and few (< lo) shot classes."""
    if lo > hi:
        raise ValueError("lo must not exceed hi")
    c = profile.counts
    many = frozenset(np.flatnonzero(c > hi).tolist())
    few = frozenset(np.flatnonzero(c < lo).tolist())
    medium = frozenset(range(profile.num_classes)) - many - few
    return SubsetSplit(many, medium, few, (hi, lo))


def smoothing_targets(labels, head_class: int, tail_class: int, epsilon: float) -> SmoothedTarget:
    """Move ``epsilon`` of every head example's mass onto the tail class.

    Targets are 2-vectors ordered (head, tail); tail examples stay one-hot.
    """
    if not 0.0 <= epsilon < 0.5:
        raise ValueError(f"epsilon must lie in [0, 0.5), got {epsilon}")
    labels = np.asarray(labels)
    if not np.all((labels == head_class) | (labels == tail_class)):
        raise ValueError("smoothing targets are defined for a two-class problem")
    targets = np.zeros((labels.size, 2))
    head = labels == head_class
    targets[head] = (1.0 - epsilon, epsilon)
    targets[~head] = (0.0, 1.0)
    return SmoothedTarget(targets, float(epsilon), head_class, tail_class)


def virtual_ratio(n_head: int, n_tail: int, epsilon: float) -> float:
    """Tail-to-head ratio of virtual examples after smoothing head labels."""
    if not n_head >= n_tail >= 1:
        raise ValueError("need n_head >= n_tail >= 1")
    if not 0.0 <= epsilon < 0.5:
        raise ValueError(f"epsilon must lie in [0, 0.5), got {epsilon}")
    return (n_tail + n_head * epsilon) / (n_head - n_head * epsilon)


def save_dataset(dataset: Dataset, path) -> None:
    """Write the binary container: magic, (C, n, d), counts, features, labels."""
    C, n, d = dataset.num_classes, dataset.n, dataset.dim
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(C, n, d))
        fh.write(dataset.profile.counts.astype("<u8").tobytes())
        fh.write(np.ascontiguousarray(dataset.features, dtype="<f8").tobytes())
        fh.write(dataset.labels.astype("<i8").tobytes())


def load_dataset(path) -> Dataset:
    buf = Path(path).read_bytes()
    if len(buf) < len(MAGIC) or buf[: len(MAGIC)] != MAGIC:
        raise DatasetFormatError("bad magic", 0)
    off = len(MAGIC)
    if len(buf) < off + _HEADER.size:
        raise DatasetFormatError("truncated header", len(buf))
    C, n, d = _HEADER.unpack_from(buf, off)
    off += _HEADER.size

    def take(nbytes, what):
        nonlocal off
        if len(buf) < off + nbytes:
            raise DatasetFormatError(f"truncated {what}", len(buf))
        chunk = buf[off : off + nbytes]
        start = off
        off += nbytes
        return chunk, start

    raw, counts_at = take(8 * C, "class counts")
    counts = np.frombuffer(raw, dtype="<u8").astype(np.int64)
    if np.any(counts < 1):
        bad = int(np.flatnonzero(counts < 1)[0])
        raise DatasetFormatError(f"class {bad} has no examples", counts_at + 8 * bad)
    if counts.sum() != n:
        raise DatasetFormatError("class counts do not sum to n", counts_at)
    raw, _ = take(8 * n * d, "features")
    features = np.frombuffer(raw, dtype="<f8").reshape(n, d).astype(np.float64)
    raw, labels_at = take(8 * n, "labels")
    labels = np.frombuffer(raw, dtype="<i8").astype(np.int64)
    if off != len(buf):
        raise DatasetFormatError("trailing bytes after labels", off)
    try:
        return Dataset(features, labels, ClassProfile(counts))
    except ValueError as exc:
        raise DatasetFormatError(str(exc), labels_at) from None


def write_profile_csv(profile: ClassProfile, path, split: SubsetSplit | None = None) -> None:
    split = split or split_subsets(profile)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class_id", "count", "subset"])
        for k, c in enumerate(profile.counts):
            subset = "many" if k in split.many else "few" if k in split.few else "medium"
            w.writerow([k, int(c), subset])
