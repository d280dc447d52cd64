"""Synthetic rotated-blob domains, Dirichlet label-skew partitioning,
leave-one-domain-out splits and the per-domain CSV format."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MAX_PARTITION_ATTEMPTS = 100


@dataclass(frozen=True)
class DomainDataset:
    domain_id: int
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise ValueError(f"domain {self.domain_id}: features must be a non-empty 2-D array")
        if y.shape != (x.shape[0],):
            raise ValueError(f"domain {self.domain_id}: {x.shape[0]} rows but {y.size} labels")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError(f"domain {self.domain_id}: labels outside [0, {self.num_classes})")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.size

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def label_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices) -> "DomainDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return DomainDataset(self.domain_id, self.features[idx], self.labels[idx], self.num_classes)


@dataclass(frozen=True)
class SynthConfig:
    num_domains: int
    num_classes: int
    samples_per_domain: int
    domain_rotation_degrees: tuple[float, ...]
    class_center_radius: float
    noise_sigma: float
    dirichlet_alpha: float
    feature_dim: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "domain_rotation_degrees", tuple(float(a) for a in self.domain_rotation_degrees)
        )
        if self.num_domains < 2:
            raise ValueError(f"num_domains must be >= 2, got {self.num_domains}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.samples_per_domain < self.num_classes:
            raise ValueError("samples_per_domain must be >= num_classes")
        if self.feature_dim < 2:
            raise ValueError("feature_dim must be >= 2")
        if len(self.domain_rotation_degrees) != self.num_domains:
            raise ValueError(
                f"need one rotation per domain: {self.num_domains} domains, "
                f"{len(self.domain_rotation_degrees)} rotations"
            )
        if len(set(self.domain_rotation_degrees)) != self.num_domains:
            raise ValueError("domain rotations must be distinct")
        if not self.class_center_radius > 0:
            raise ValueError("class_center_radius must be > 0")
        if not self.noise_sigma > 0:
            raise ValueError("noise_sigma must be > 0")
        if not self.dirichlet_alpha > 0:
            raise ValueError("dirichlet_alpha must be > 0")


def class_centers(num_classes: int, radius: float, feature_dim: int = 2) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    centers = np.zeros((num_classes, feature_dim))
    centers[:, 0] = radius * np.cos(angles)
    centers[:, 1] = radius * np.sin(angles)
    return centers


def rotate(features: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate the (f0, f1) plane; remaining coordinates are untouched."""
    t = math.radians(degrees)
    c, s = math.cos(t), math.sin(t)
    out = np.array(features, dtype=np.float64, copy=True)
    f0, f1 = out[:, 0].copy(), out[:, 1].copy()
    out[:, 0] = c * f0 - s * f1
    out[:, 1] = s * f0 + c * f1
    return out


def domain_rng(seed: int, domain_index: int) -> np.random.Generator:
    return np.random.default_rng([seed & ((1 << 64) - 1), domain_index])


def sample_base_blobs(cfg: SynthConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Unrotated Gaussian blobs; each class count is within one of the even share."""
    n, C = cfg.samples_per_domain, cfg.num_classes
    labels = rng.permutation(np.arange(n) % C)
    centers = class_centers(C, cfg.class_center_radius, cfg.feature_dim)
    noise = rng.normal(0.0, cfg.noise_sigma, size=(n, cfg.feature_dim))
    return centers[labels] + noise, labels


def gen_domains(cfg: SynthConfig, seed: int) -> list[DomainDataset]:
    domains = []
    for d, angle in enumerate(cfg.domain_rotation_degrees):
        x, y = sample_base_blobs(cfg, domain_rng(seed, d))
        if angle != 0.0:
            x = rotate(x, angle)
        domains.append(DomainDataset(d, x, y, cfg.num_classes))
    return domains


def dirichlet_partition(labels, n_clients: int, alpha: float, seed) -> list[np.ndarray]:
    """Split sample indices across clients with per-class Dirichlet(alpha) shares.

    Whole allocations are redrawn until every client holds at least one
    sample, up to ``MAX_PARTITION_ATTEMPTS`` times.
    """
    y = np.asarray(labels, dtype=np.int64)
    if n_clients < 1:
        raise ValueError("n_clients must be >= 1")
    if n_clients > y.size:
        raise ValueError(f"{n_clients} clients but only {y.size} samples")
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    if n_clients == 1:
        return [np.arange(y.size)]

    rng = np.random.default_rng(seed)
    classes = np.unique(y)
    for _ in range(MAX_PARTITION_ATTEMPTS):
        parts: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
        for c in classes:
            idx = rng.permutation(np.flatnonzero(y == c))
            props = rng.dirichlet(np.full(n_clients, alpha))
            cuts = (np.cumsum(props)[:-1] * idx.size).astype(np.int64)
            for client, chunk in enumerate(np.split(idx, cuts)):
                parts[client].append(chunk)
        out = [np.sort(np.concatenate(p)) for p in parts]
        if all(p.size > 0 for p in out):
            return out
    raise RuntimeError(
        f"could not give every one of {n_clients} clients a sample "
        f"in {MAX_PARTITION_ATTEMPTS} Dirichlet draws"
    )


def leave_one_out_split(
    domains: Sequence[DomainDataset], held_out: int
) -> tuple[list[DomainDataset], DomainDataset]:
    test = [d for d in domains if d.domain_id == held_out]
    if not test:
        raise ValueError(f"unknown domain id {held_out}")
    train = [d for d in domains if d.domain_id != held_out]
    if not train:
        raise ValueError("holding out the only domain leaves nothing to train on")
    return train, test[0]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dataset_to_csv(ds: DomainDataset) -> str:
    buf = io.StringIO()
    header = ["domain", "label"] + [f"f{k}" for k in range(ds.feature_dim)]
    buf.write(",".join(header) + "\n")
    for row, label in zip(ds.features, ds.labels):
        buf.write(",".join([str(ds.domain_id), str(int(label))] + [_fmt(v) for v in row]) + "\n")
    return buf.getvalue()


def write_csv_dataset(ds: DomainDataset, path) -> None:
    Path(path).write_text(dataset_to_csv(ds), encoding="utf-8", newline="\n")


def load_csv_dataset(path, num_classes: int | None = None) -> DomainDataset:
    """Read one domain from ``domain,label,f0,...`` CSV.

    ``num_classes`` defaults to the largest label plus one (at least 2).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    width = len(header) - 2
    expected = ["domain", "label"] + [f"f{k}" for k in range(width)]
    if width < 1 or header != expected:
        raise ValueError(f"{path}: header must be domain,label,f0,...; got {','.join(header)}")
    if len(rows) == 1:
        raise ValueError(f"{path}: no data rows")

    domain_ids: set[int] = set()
    labels, feats = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            domain_ids.add(int(row[0]))
            label = int(row[1])
            values = [float(v) for v in row[2:]]
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        if label < 0:
            raise ValueError(f"{path}:{lineno}: negative label {label}")
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"{path}:{lineno}: non-finite feature value")
        labels.append(label)
        feats.append(values)
    if len(domain_ids) != 1:
        raise ValueError(f"{path}: mixed domain ids {sorted(domain_ids)}")
    if num_classes is None:
        num_classes = max(2, max(labels) + 1)
    return DomainDataset(domain_ids.pop(), np.array(feats), np.array(labels), num_classes)
