"""Synthetic domain-shift datasets, standardisation, samplers and CSV I/O."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray | None
    domain: str
    num_classes: int
    standardized: bool = False

    def __post_init__(self):
        if self.domain not in ("source", "target"):
            raise ValueError(f"domain must be 'source' or 'target', got {self.domain!r}")
        if (self.labels is not None) != (self.domain == "source"):
            raise ValueError("labels must be present exactly for the source domain")
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be a 2-D array")
        if self.labels is not None and self.labels.shape != (len(self.inputs),):
            raise ValueError("labels length does not match inputs")

    def __len__(self):
        return len(self.inputs)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class LabeledBatch:
    inputs: np.ndarray
    labels: np.ndarray
    indices: np.ndarray


@dataclass(frozen=True)
class UnlabeledBatch:
    inputs: np.ndarray
    indices: np.ndarray


# ---------------------------------------------------------------- generators


def _moons(n: int, noise_sd: float, rng: np.random.Generator):
    n_outer = (n + 1) // 2
    n_inner = n - n_outer
    t_out = rng.uniform(0.0, np.pi, n_outer)
    t_in = rng.uniform(0.0, np.pi, n_inner)
    outer = np.column_stack([np.cos(t_out), np.sin(t_out)])
    inner = np.column_stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)])
    x = np.vstack([outer, inner]) + rng.normal(0.0, noise_sd, size=(n, 2))
    y = np.concatenate([np.zeros(n_outer, dtype=np.int64), np.ones(n_inner, dtype=np.int64)])
    order = rng.permutation(n)
    return x[order], y[order]


def rotate(x: np.ndarray, degrees: float, center=None) -> np.ndarray:
    center = x.mean(axis=0) if center is None else np.asarray(center)
    a = np.deg2rad(degrees)
    rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    return (x - center) @ rot.T + center


def gen_two_moons_shift(n_per_domain: int = 1000, rotation_deg: float = 35.0, noise_sd: float = 0.1, seed: int = 0):
    """Two-moons source; target is an independent draw rotated about its centroid.

    Returns ``(source, target, target_truth)``.
    """
    if n_per_domain < 4:
        raise ValueError("n_per_domain must be at least 2 * K = 4")
    if noise_sd < 0:
        raise ValueError("noise_sd must be nonnegative")
    s_seq, t_seq = np.random.SeedSequence(seed).spawn(2)
    xs, ys = _moons(n_per_domain, noise_sd, np.random.default_rng(s_seq))
    xt, yt = _moons(n_per_domain, noise_sd, np.random.default_rng(t_seq))
    xt = rotate(xt, rotation_deg)
    return Dataset(xs, ys, "source", 2), Dataset(xt, None, "target", 2), yt


def gen_gaussian_blobs_shift(K: int = 3, n_per_class: int = 200, mean_shift=(1.5, 0.0), scale: float = 1.2,
                             seed: int = 0, radius: float = 3.0, sd: float = 0.6):
    """K isotropic Gaussian classes with means on a circle.

    The target reuses the class means translated by ``mean_shift`` and spreads
    samples by ``scale`` times the source standard deviation.
    """
    if K < 2:
        raise ValueError("K must be at least 2")
    if n_per_class < 1:
        raise ValueError("n_per_class must be positive")
    shift = np.asarray(mean_shift, dtype=np.float64)
    if shift.shape != (2,):
        raise ValueError("mean_shift must be a 2-vector")
    m_seq, s_seq, t_seq = np.random.SeedSequence(seed).spawn(3)
    phase = np.random.default_rng(m_seq).uniform(0.0, 2 * np.pi)
    angles = phase + 2 * np.pi * np.arange(K) / K
    means = radius * np.column_stack([np.cos(angles), np.sin(angles)])

    def draw(rng, centers, spread):
        y = np.repeat(np.arange(K), n_per_class)
        x = centers[y] + rng.normal(0.0, spread, size=(len(y), 2))
        order = rng.permutation(len(y))
        return x[order], y[order]

    xs, ys = draw(np.random.default_rng(s_seq), means, sd)
    xt, yt = draw(np.random.default_rng(t_seq), means + shift, sd * scale)
    return Dataset(xs, ys, "source", K), Dataset(xt, None, "target", K), yt


# ------------------------------------------------------------- standardizing


@dataclass(frozen=True)
class StandardizationStats:
    mean: np.ndarray
    sd: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.sd


SD_FLOOR = 1e-8


def standardize(source: Dataset, target: Dataset):
    """Z-score both domains with source statistics.

    Standardising an already standardised dataset is refused, because the
    transform is not idempotent once the stats are recomputed.
    """
    if len(source) == 0:
        raise ValueError("cannot standardise an empty source dataset")
    if source.standardized or target.standardized:
        raise ValueError("dataset already standardised")
    stats = StandardizationStats(source.inputs.mean(axis=0), np.maximum(source.inputs.std(axis=0), SD_FLOOR))
    return (
        replace(source, inputs=stats.apply(source.inputs), standardized=True),
        replace(target, inputs=stats.apply(target.inputs), standardized=True),
        stats,
    )


# ------------------------------------------------------------------ sampling


class ClassAwareSampler:
    """Source minibatches holding a near-equal share of several classes.

    Each class keeps its own shuffled pool, drawn without replacement and
    refilled with a fresh permutation once exhausted.
    """

    def __init__(self, ds: Dataset, batch_size: int, classes_per_batch: int | None = None, seed=0):
        if ds.labels is None:
            raise ValueError("class-aware sampling needs labels")
        cpb = ds.num_classes if classes_per_batch is None else classes_per_batch
        if batch_size > len(ds):
            raise ValueError(f"batch size {batch_size} exceeds dataset size {len(ds)}")
        if cpb < 1 or batch_size < cpb:
            raise ValueError("batch_size must be at least classes_per_batch")
        self.ds = ds
        self.batch_size = batch_size
        self.classes_per_batch = cpb
        self.rng = np.random.default_rng(seed)
        self.members = {k: np.flatnonzero(ds.labels == k) for k in range(ds.num_classes)}
        self.members = {k: v for k, v in self.members.items() if len(v)}
        self.pools = {k: [] for k in self.members}

    def _take(self, k: int, count: int) -> list[int]:
        out = []
        while len(out) < count:
            if not self.pools[k]:
                self.pools[k] = list(self.rng.permutation(self.members[k]))
            out.append(self.pools[k].pop())
        return out

    def next_batch(self) -> LabeledBatch:
        classes = sorted(self.members)
        if len(classes) > self.classes_per_batch:
            classes = list(self.rng.choice(classes, size=self.classes_per_batch, replace=False))
        else:
            classes = list(self.rng.permutation(classes))
        base, extra = divmod(self.batch_size, len(classes))
        idx = []
        for rank, k in enumerate(classes):
            idx += self._take(int(k), base + (1 if rank < extra else 0))
        idx = np.array(idx, dtype=np.intp)
        return LabeledBatch(self.ds.inputs[idx], self.ds.labels[idx], idx)


class UniformSampler:
    """Uniform minibatches without replacement, reshuffled every pass."""

    def __init__(self, ds: Dataset, batch_size: int, seed=0):
        if batch_size > len(ds):
            raise ValueError(f"batch size {batch_size} exceeds dataset size {len(ds)}")
        if batch_size < 1:
            raise ValueError("batch size must be positive")
        self.ds = ds
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        self.pool: list[int] = []

    def next_batch(self) -> UnlabeledBatch:
        idx = []
        while len(idx) < self.batch_size:
            if not self.pool:
                self.pool = list(self.rng.permutation(len(self.ds)))
            idx.append(self.pool.pop())
        idx = np.array(idx, dtype=np.intp)
        return UnlabeledBatch(self.ds.inputs[idx], idx)


# ----------------------------------------------------------------------- CSV


def save_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = [f"x{i}" for i in range(ds.dim)]
        if ds.labels is not None:
            header.append("label")
        w.writerow(header)
        for i in range(len(ds)):
            row = [repr(float(v)) for v in ds.inputs[i]]
            if ds.labels is not None:
                row.append(str(int(ds.labels[i])))
            w.writerow(row)


def load_csv(path, num_classes: int | None = None) -> Dataset:
    """Read a dataset; a trailing ``label`` column marks it as source data."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    header = rows[0]
    has_label = bool(header) and header[-1] == "label"
    n_feat = len(header) - has_label
    if n_feat < 1 or header[:n_feat] != [f"x{i}" for i in range(n_feat)]:
        raise DataFormatError(f"{path}: header must be x0,...,x<d-1>[,label]")
    xs, ys = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataFormatError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
        try:
            xs.append([float(v) for v in row[:n_feat]])
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: non-numeric feature value") from None
        if has_label:
            try:
                ys.append(int(row[-1]))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: label {row[-1]!r} is not an integer") from None
    inputs = np.array(xs, dtype=np.float64).reshape(-1, n_feat)
    labels = np.array(ys, dtype=np.int64) if has_label else None
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if has_label and len(ys) else 2
    if has_label and len(ys) and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataFormatError(f"{path}: labels outside [0, {num_classes})")
    return Dataset(inputs, labels, "source" if has_label else "target", num_classes)


def save_labels(labels, path) -> None:
    with open(path, "w") as fh:
        fh.write("label\n")
        fh.writelines(f"{int(v)}\n" for v in labels)


def load_labels(path) -> np.ndarray:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "label":
        raise DataFormatError(f"{path}: expected a 'label' header")
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        try:
            out.append(int(line))
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: label {line!r} is not an integer") from None
    return np.array(out, dtype=np.int64)
