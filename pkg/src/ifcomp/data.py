"""Datasets: synthetic blobs, IDX ingestion, label noise, corruptions, OOD splits."""

from __future__ import annotations

import csv
import gzip
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DimensionError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
GAUSSIAN_SIGMAS = (0.0, 0.05, 0.1, 0.2, 0.4, 0.8)
BLUR_WIDTHS = (1, 2, 3, 5, 7, 9)
MASK_FRACTIONS = (0.0, 0.1, 0.2, 0.3, 0.45, 0.6)


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, raw: np.ndarray) -> "NormStats":
        std = raw.std(axis=0)
        return cls(raw.mean(axis=0), np.where(std > 0, std, 1.0))

    def apply(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.mean) / self.std

    def invert(self, features: np.ndarray) -> np.ndarray:
        return features * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass(frozen=True)
class Dataset:
    """Normalized features with integer labels.

    ``stats`` are the normalization statistics the features were produced
    with; held-out and OOD data must reuse the training set's stats.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    provenance: str = ""
    stats: Optional[NormStats] = None
    meta: dict = field(default_factory=dict)
    image_shape: Optional[tuple[int, int]] = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise DimensionError(f"features {x.shape} and labels {y.shape} disagree")
        if not np.all(np.isfinite(x)):
            raise ConfigurationError("features contain NaN or inf")
        if len(y) and (y.min() < 0 or y.max() >= self.num_classes):
            raise ConfigurationError(f"labels outside 0..{self.num_classes - 1}")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, features=self.features[idx], labels=self.labels[idx])

    def with_labels(self, labels) -> "Dataset":
        return replace(self, labels=np.asarray(labels, dtype=np.int64))


@dataclass(frozen=True)
class NoiseRecord:
    flipped: np.ndarray  # bool per example
    original: np.ndarray
    kind: str
    rate: float

    @property
    def count(self) -> int:
        return int(self.flipped.sum())


# --- synthetic data -----------------------------------------------------------


@dataclass(frozen=True)
class BlobSpec:
    """Generative description of a Gaussian blob problem (raw feature space)."""

    centers: np.ndarray
    spread: float

    @property
    def num_classes(self) -> int:
        return len(self.centers)

    def sample(self, n_per_class: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        k, d = self.centers.shape
        y = np.repeat(np.arange(k), n_per_class)
        x = self.centers[y] + self.spread * rng.normal(size=(len(y), d))
        return x, y

    def posterior(self, raw: np.ndarray) -> np.ndarray:
        """Exact class posterior under equal priors and isotropic covariance."""
        if self.spread == 0:
            d2 = ((raw[:, None, :] - self.centers[None]) ** 2).sum(-1)
            post = (d2 == d2.min(axis=1, keepdims=True)).astype(float)
            return post / post.sum(axis=1, keepdims=True)
        logits = -((raw[:, None, :] - self.centers[None]) ** 2).sum(-1) / (2 * self.spread ** 2)
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)


def blob_centers(k: int, d: int, rng: np.random.Generator, scale: float = 3.0) -> np.ndarray:
    return scale * rng.normal(size=(k, d))


def bayes_accuracy(spec: BlobSpec, rng: np.random.Generator, samples: int = 20000) -> float:
    """Monte Carlo estimate of E[max_k p(k | x)], the Bayes-optimal accuracy."""
    raw, _ = spec.sample(max(1, samples // spec.num_classes), rng)
    return float(spec.posterior(raw).max(axis=1).mean())


def synth_blobs(
    k: int,
    d: int,
    n_per_class: int,
    spread: float,
    seed: int,
    center_scale: float = 3.0,
    stats: Optional[NormStats] = None,
    centers: Optional[np.ndarray] = None,
) -> Dataset:
    """Gaussian clusters at seeded random centers, normalized per feature.

    Metadata records the raw centers, the spread and a Monte Carlo estimate
    of the Bayes-optimal accuracy.
    """
    if k < 2 or d < 2:
        raise ConfigurationError("synth_blobs needs k >= 2 and d >= 2")
    rng = np.random.default_rng([seed, 11])
    if centers is None:
        centers = blob_centers(k, d, rng, center_scale)
    spec = BlobSpec(np.asarray(centers, dtype=np.float64), float(spread))
    raw, y = spec.sample(n_per_class, rng)
    stats = NormStats.fit(raw) if stats is None else stats
    meta = {
        "centers": spec.centers.tolist(),
        "spread": float(spread),
        "seed": int(seed),
        "bayes_accuracy": bayes_accuracy(spec, np.random.default_rng([seed, 12])),
    }
    return Dataset(stats.apply(raw), y, k, provenance=f"blobs(k={k},d={d},seed={seed})", stats=stats, meta=meta)


def blob_spec(dataset: Dataset) -> BlobSpec:
    try:
        return BlobSpec(np.asarray(dataset.meta["centers"], dtype=np.float64), float(dataset.meta["spread"]))
    except KeyError as exc:
        raise ConfigurationError("dataset was not produced by synth_blobs") from exc


def blob_splits(
    k: int, d: int, sizes: dict, spread: float, seed: int, center_scale: float = 3.0
) -> dict[str, Dataset]:
    """Train/validation/test splits drawn from one blob problem.

    ``sizes`` maps split name to examples per class; the first split fixes the
    normalization statistics reused by the rest.
    """
    rng = np.random.default_rng([seed, 10])
    centers = blob_centers(k, d, rng, center_scale)
    out: dict[str, Dataset] = {}
    stats = None
    for i, (name, n_per_class) in enumerate(sizes.items()):
        ds = synth_blobs(k, d, n_per_class, spread, seed=seed * 1000 + i, stats=stats, centers=centers)
        ds = replace(ds, provenance=f"blobs(k={k},d={d},seed={seed}):{name}")
        stats = ds.stats
        out[name] = ds
    return out


# --- label noise ----------------------------------------------------------------


def _select(n: int, rate: float, seed: int) -> np.ndarray:
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"noise rate must be in [0, 1), got {rate}")
    count = int(round(rate * n))
    rng = np.random.default_rng([seed, 21])
    return np.sort(rng.permutation(n)[:count])


def inject_symmetric_noise(dataset: Dataset, rate: float, seed: int) -> tuple[Dataset, NoiseRecord]:
    """Replace ``round(rate * n)`` labels with a uniformly random different label."""
    idx = _select(len(dataset), rate, seed)
    rng = np.random.default_rng([seed, 22])
    labels = dataset.labels.copy()
    k = dataset.num_classes
    # offset in 1..k-1 guarantees a different label
    labels[idx] = (labels[idx] + rng.integers(1, k, size=len(idx))) % k
    flipped = np.zeros(len(dataset), dtype=bool)
    flipped[idx] = True
    return dataset.with_labels(labels), NoiseRecord(flipped, dataset.labels.copy(), "symmetric", float(rate))


def cyclic_map(k: int) -> dict[int, int]:
    return {c: (c + 1) % k for c in range(k)}


def inject_asymmetric_noise(
    dataset: Dataset, mapping: Optional[dict[int, int]], rate: float, seed: int
) -> tuple[Dataset, NoiseRecord]:
    """Relabel ``round(rate * n)`` examples through a fixed class map.

    Examples whose class is absent from ``mapping`` are never selected.
    """
    mapping = cyclic_map(dataset.num_classes) if mapping is None else dict(mapping)
    for src, dst in mapping.items():
        if src == dst:
            raise ConfigurationError(f"asymmetric map has fixed point {src} -> {dst}")
        if not (0 <= dst < dataset.num_classes):
            raise ConfigurationError(f"map target {dst} out of range")
    eligible = np.flatnonzero(np.isin(dataset.labels, list(mapping)))
    sel = _select(len(dataset), rate, seed)
    if len(eligible) < len(dataset):
        rng = np.random.default_rng([seed, 21])
        count = int(round(rate * len(dataset)))
        sel = np.sort(rng.permutation(eligible)[:count])
    labels = dataset.labels.copy()
    labels[sel] = [mapping[int(c)] for c in labels[sel]]
    flipped = np.zeros(len(dataset), dtype=bool)
    flipped[sel] = True
    return dataset.with_labels(labels), NoiseRecord(flipped, dataset.labels.copy(), "asymmetric", float(rate))


# --- covariate shift ----------------------------------------------------------------


def _box_blur_1d(x: np.ndarray, width: int) -> np.ndarray:
    if width <= 1:
        return x.copy()
    from scipy.ndimage import uniform_filter1d

    return uniform_filter1d(x, size=width, axis=1, mode="nearest")


def corrupt(dataset: Dataset, severity: int, kind: str, seed: int) -> Dataset:
    """Apply a synthetic corruption of the given severity (0 = identity).

    ``gaussian_noise`` adds N(0, sigma^2) noise in normalized feature units;
    ``pixel_blur`` box-blurs each image (or the feature vector when no image
    shape is known); ``mask`` zeroes a random subset of features per example.
    """
    if severity not in range(0, 6):
        raise ConfigurationError(f"severity must be in 0..5, got {severity}")
    rng = np.random.default_rng([seed, 31, severity])
    x = dataset.features
    if kind == "gaussian_noise":
        out = x + GAUSSIAN_SIGMAS[severity] * rng.normal(size=x.shape)
    elif kind == "pixel_blur":
        width = BLUR_WIDTHS[severity]
        if dataset.image_shape is not None and width > 1:
            from scipy.ndimage import uniform_filter

            imgs = x.reshape((-1,) + tuple(dataset.image_shape))
            out = uniform_filter(imgs, size=(1, width, width), mode="nearest").reshape(x.shape)
        else:
            out = _box_blur_1d(x, width)
    elif kind == "mask":
        out = x * (rng.random(size=x.shape) >= MASK_FRACTIONS[severity])
    else:
        raise ConfigurationError(f"unknown corruption kind {kind!r}")
    return replace(dataset, features=out, provenance=f"{dataset.provenance}+{kind}@{severity}")


def make_ood_split(
    id_dataset: Dataset, ood_kind: str, seed: int, n_ood: Optional[int] = None, separation: float = 6.0
) -> tuple[Dataset, Dataset]:
    """Held-out ID test data plus an unlabelled OOD set of the same size.

    Both sets are fresh draws expressed in ``id_dataset``'s normalization.
    OOD labels are all zero and carry no meaning.
    """
    spec = blob_spec(id_dataset)
    stats = id_dataset.stats
    k, d = spec.centers.shape
    rng = np.random.default_rng([seed, 41])
    n_per_class = max(1, len(id_dataset) // k)
    raw_id, y_id = spec.sample(n_per_class, rng)
    id_test = replace(id_dataset, features=stats.apply(raw_id), labels=y_id, provenance=f"{id_dataset.provenance}:id_test")
    n_ood = len(y_id) if n_ood is None else n_ood

    if ood_kind == "uniform_noise":
        lo, hi = id_dataset.features.min(axis=0), id_dataset.features.max(axis=0)
        feats = rng.uniform(lo, hi, size=(n_ood, d))
        meta = {"low": lo.tolist(), "high": hi.tolist()}
    elif ood_kind in ("disjoint_classes", "shifted_blobs"):
        if ood_kind == "disjoint_classes":
            scale = float(np.std(spec.centers)) or 1.0
            min_gap = separation * max(spec.spread, 1e-12)
            new = []
            while len(new) < k:
                c = scale * rng.normal(size=d)
                gaps = np.linalg.norm(spec.centers - c, axis=1)
                if gaps.min() >= min_gap:
                    new.append(c)
            centers = np.array(new)
        else:
            shift = rng.normal(size=d)
            centers = spec.centers + separation * spec.spread * shift / np.linalg.norm(shift)
        ood_spec = BlobSpec(centers, spec.spread)
        raw, _ = ood_spec.sample(max(1, n_ood // k), rng)
        feats = stats.apply(raw)
        meta = {"centers": centers.tolist(), "spread": spec.spread}
    else:
        raise ConfigurationError(f"unknown OOD kind {ood_kind!r}")
    ood = Dataset(feats, np.zeros(len(feats), dtype=np.int64), id_dataset.num_classes,
                  provenance=f"ood:{ood_kind}", stats=stats, meta=meta)
    return id_test, ood


# --- file formats ---------------------------------------------------------------------


def _read_bytes(path) -> bytes:
    path = Path(path)
    data = path.read_bytes()
    return gzip.decompress(data) if path.suffix == ".gz" else data


def read_idx_images(path) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) < 16:
        raise FormatError(f"{path}: header needs 16 bytes, file has {len(data)}")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x{IDX_IMAGES_MAGIC:08x}")
    expected = 16 + count * rows * cols
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(data)}")
    return np.frombuffer(data, dtype=np.uint8, offset=16).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) < 8:
        raise FormatError(f"{path}: header needs 8 bytes, file has {len(data)}")
    magic, count = struct.unpack(">II", data[:8])
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x{IDX_LABELS_MAGIC:08x}")
    expected = 8 + count
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(data)}")
    return np.frombuffer(data, dtype=np.uint8, offset=8).astype(np.int64)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    Path(path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols) + images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def load_idx(images_path, labels_path, stats: Optional[NormStats] = None, num_classes: int = 10) -> Dataset:
    """Load an IDX image/label pair; pixels are scaled to [0, 1] then normalized."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise FormatError(f"{images_path} has {len(images)} images but {labels_path} has {len(labels)} labels")
    raw = images.reshape(len(images), -1).astype(np.float64) / 255.0
    stats = NormStats.fit(raw) if stats is None else stats
    return Dataset(stats.apply(raw), labels, num_classes, provenance=f"idx:{Path(images_path).name}",
                   stats=stats, image_shape=images.shape[1:])


def save_csv(dataset: Dataset, path) -> None:
    """Header row ``f0..f{d-1},label``; features are written with full precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{j}" for j in range(dataset.dim)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv(path, num_classes: Optional[int] = None, stats: Optional[NormStats] = None) -> Dataset:
    """Read a CSV written by :func:`save_csv`.

    Features are taken as already normalized unless ``stats`` is given, in
    which case they are treated as raw and normalized with it.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][-1] != "label":
        raise FormatError(f"{path}: missing header ending in 'label'")
    body = rows[1:]
    x = np.array([[float(v) for v in r[:-1]] for r in body], dtype=np.float64).reshape(len(body), len(rows[0]) - 1)
    y = np.array([int(r[-1]) for r in body], dtype=np.int64)
    k = int(y.max()) + 1 if num_classes is None else num_classes
    if stats is not None:
        x = stats.apply(x)
    return Dataset(x, y, k, provenance=f"csv:{Path(path).name}", stats=stats)


def write_manifest(path, entries: dict) -> None:
    Path(path).write_text(json.dumps(entries, indent=2, sort_keys=True))


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
