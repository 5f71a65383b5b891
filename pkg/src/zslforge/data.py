"""Zero-shot splits: labeled seen features, unlabeled unseen features and a
per-class attribute table.

Training code only ever sees a :class:`TrainingView`, which has no unseen
labels on it. Evaluation reads ``SplitDataset.unseen_test_labels`` directly.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ndcore import DEFAULT_DTYPE, derive_rng


class DatasetError(ValueError):
    pass


class MissingFileError(DatasetError):
    pass


class MalformedRowError(DatasetError):
    pass


class DimensionMismatchError(DatasetError):
    pass


class OverlappingPartitionError(DatasetError):
    pass


class InvalidSpecError(ValueError):
    pass


@dataclass(frozen=True)
class AttributeTable:
    class_ids: tuple[int, ...]
    vectors: np.ndarray  # (n_classes, k), row i belongs to class_ids[i]
    seen_classes: tuple[int, ...]
    unseen_classes: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.class_ids)) != len(self.class_ids):
            raise DatasetError("duplicate class id in attribute table")
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.class_ids):
            raise DimensionMismatchError(
                f"attribute matrix shape {self.vectors.shape} does not match {len(self.class_ids)} classes"
            )
        overlap = set(self.seen_classes) & set(self.unseen_classes)
        if overlap:
            raise OverlappingPartitionError(f"classes in both seen and unseen sets: {sorted(overlap)}")
        missing = (set(self.seen_classes) | set(self.unseen_classes)) - set(self.class_ids)
        if missing:
            raise DatasetError(f"no attribute row for classes {sorted(missing)}")
        if not np.all(np.isfinite(self.vectors)):
            raise DatasetError("attribute table has non-finite entries")
        if self.vectors.min() < 0 or self.vectors.max() > 1:
            raise DatasetError("attribute entries must lie in [0, 1]")

    @property
    def k(self) -> int:
        return self.vectors.shape[1]

    def _rows(self) -> dict[int, int]:
        return {c: i for i, c in enumerate(self.class_ids)}

    def lookup(self, labels) -> np.ndarray:
        rows = self._rows()
        return self.vectors[[rows[int(c)] for c in labels]]

    @property
    def seen_matrix(self) -> np.ndarray:
        return self.lookup(self.seen_classes)

    @property
    def unseen_matrix(self) -> np.ndarray:
        return self.lookup(self.unseen_classes)


@dataclass(frozen=True)
class TrainingView:
    """What the training loop may touch: no unseen labels."""

    x_seen: np.ndarray
    y_seen: np.ndarray
    a_seen: np.ndarray
    x_unseen: np.ndarray
    attributes: AttributeTable

    @property
    def unseen_attributes(self) -> np.ndarray:
        return self.attributes.unseen_matrix


@dataclass(frozen=True)
class SplitDataset:
    x_seen_train: np.ndarray
    y_seen_train: np.ndarray
    x_unseen: np.ndarray
    x_seen_test: np.ndarray
    y_seen_test: np.ndarray
    attributes: AttributeTable
    unseen_test_labels: np.ndarray | None = None

    def __post_init__(self):
        d = self.x_seen_train.shape[1]
        for name in ("x_seen_train", "x_unseen", "x_seen_test"):
            arr = getattr(self, name)
            if arr.ndim != 2 or arr.shape[1] != d:
                raise DimensionMismatchError(f"{name} has shape {arr.shape}, expected (*, {d})")
        if len(self.y_seen_train) != len(self.x_seen_train):
            raise DimensionMismatchError("seen train labels and features differ in length")
        if len(self.y_seen_test) != len(self.x_seen_test):
            raise DimensionMismatchError("seen test labels and features differ in length")
        seen = set(self.attributes.seen_classes)
        unseen = set(self.attributes.unseen_classes)
        for name, labels, allowed in (
            ("y_seen_train", self.y_seen_train, seen),
            ("y_seen_test", self.y_seen_test, seen),
        ):
            bad = set(np.unique(labels).tolist()) - allowed
            if bad:
                raise DatasetError(f"{name} holds labels outside the seen classes: {sorted(bad)}")
        if self.unseen_test_labels is not None:
            if len(self.unseen_test_labels) != len(self.x_unseen):
                raise DimensionMismatchError("unseen labels and unseen features differ in length")
            bad = set(np.unique(self.unseen_test_labels).tolist()) - unseen
            if bad:
                raise DatasetError(f"unseen labels outside the unseen classes: {sorted(bad)}")

    @property
    def d(self) -> int:
        return self.x_seen_train.shape[1]

    @property
    def k(self) -> int:
        return self.attributes.k

    def training_view(self) -> TrainingView:
        return TrainingView(
            x_seen=self.x_seen_train,
            y_seen=self.y_seen_train,
            a_seen=self.attributes.lookup(self.y_seen_train),
            x_unseen=self.x_unseen,
            attributes=self.attributes,
        )

    def astype(self, dtype) -> SplitDataset:
        if self.x_seen_train.dtype == dtype:
            return self
        return SplitDataset(
            self.x_seen_train.astype(dtype),
            self.y_seen_train,
            self.x_unseen.astype(dtype),
            self.x_seen_test.astype(dtype),
            self.y_seen_test,
            AttributeTable(
                self.attributes.class_ids,
                self.attributes.vectors.astype(dtype),
                self.attributes.seen_classes,
                self.attributes.unseen_classes,
            ),
            self.unseen_test_labels,
        )


def dataset_fingerprint(ds: SplitDataset) -> str:
    """Content hash of every array and the class partition."""
    h = hashlib.sha256()
    t = ds.attributes
    h.update(json.dumps([list(t.class_ids), list(t.seen_classes), list(t.unseen_classes)]).encode())
    arrays = [ds.x_seen_train, ds.y_seen_train, ds.x_unseen, ds.x_seen_test, ds.y_seen_test, t.vectors]
    if ds.unseen_test_labels is not None:
        arrays.append(ds.unseen_test_labels)
    for arr in arrays:
        arr = np.ascontiguousarray(arr)
        h.update(f"{arr.dtype.str}{arr.shape}".encode())
        h.update(arr.tobytes())
    return h.hexdigest()[:16]


def datasets_equal(a: SplitDataset, b: SplitDataset) -> bool:
    def same(x, y):
        if x is None or y is None:
            return x is None and y is None
        return x.shape == y.shape and np.array_equal(x, y)

    return (
        same(a.x_seen_train, b.x_seen_train)
        and same(a.y_seen_train, b.y_seen_train)
        and same(a.x_unseen, b.x_unseen)
        and same(a.x_seen_test, b.x_seen_test)
        and same(a.y_seen_test, b.y_seen_test)
        and same(a.unseen_test_labels, b.unseen_test_labels)
        and a.attributes.class_ids == b.attributes.class_ids
        and a.attributes.seen_classes == b.attributes.seen_classes
        and a.attributes.unseen_classes == b.attributes.unseen_classes
        and np.array_equal(a.attributes.vectors, b.attributes.vectors)
    )


# --------------------------------------------------------------------------
# Synthetic benchmark


@dataclass
class SyntheticSpec:
    n_seen_classes: int = 10
    n_unseen_classes: int = 5
    d: int = 64
    k: int = 16
    samples_per_class_train: int = 32
    samples_per_class_test: int = 32
    cluster_noise: float = 0.3
    attribute_to_mean_map_seed: int = 12345
    overlap: float = 0.0

    def validate(self) -> None:
        for name in (
            "n_seen_classes",
            "n_unseen_classes",
            "d",
            "k",
            "samples_per_class_train",
            "samples_per_class_test",
        ):
            if int(getattr(self, name)) < 1:
                raise InvalidSpecError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.cluster_noise > 0:
            raise InvalidSpecError(f"cluster_noise must be > 0, got {self.cluster_noise}")
        if not 0.0 <= self.overlap <= 1.0:
            raise InvalidSpecError(f"overlap must lie in [0, 1], got {self.overlap}")


def attribute_to_mean_map(d: int, k: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Fixed linear map shared by all classes: mean = W @ a + b."""
    rng = derive_rng(seed, "mean-map")
    W = rng.standard_normal((d, k)) * np.sqrt(2.0 / k)
    b = rng.uniform(0.5, 1.5, size=d)
    return W, b


def make_synthetic(spec: SyntheticSpec, seed: int) -> SplitDataset:
    """Gaussian clusters whose means are a linear function of the class
    attributes, rectified to be non-negative like backbone features.

    ``overlap`` pulls every class mean toward the mean of all class means
    (0 keeps the map as is, 1 puts every class on the same mean).
    """
    spec.validate()
    rng = derive_rng(seed, "synthetic")
    n_classes = spec.n_seen_classes + spec.n_unseen_classes
    attrs = rng.random((n_classes, spec.k))
    order = rng.permutation(n_classes)
    unseen = tuple(sorted(int(c) for c in order[: spec.n_unseen_classes]))
    seen = tuple(sorted(int(c) for c in order[spec.n_unseen_classes :]))

    W, b = attribute_to_mean_map(spec.d, spec.k, spec.attribute_to_mean_map_seed)
    means = attrs @ W.T + b
    means = (1.0 - spec.overlap) * means + spec.overlap * means.mean(axis=0)

    def draw(classes, per_class):
        labels = np.repeat(np.asarray(classes, dtype=np.int64), per_class)
        x = means[labels] + spec.cluster_noise * rng.standard_normal((len(labels), spec.d))
        return np.maximum(x, 0.0), labels

    x_tr, y_tr = draw(seen, spec.samples_per_class_train)
    x_te, y_te = draw(seen, spec.samples_per_class_test)
    x_u, y_u = draw(unseen, spec.samples_per_class_test)
    perm = rng.permutation(len(y_u))
    table = AttributeTable(tuple(range(n_classes)), attrs, seen, unseen)
    return SplitDataset(x_tr, y_tr, x_u[perm], x_te, y_te, table, y_u[perm])


# --------------------------------------------------------------------------
# Batching


def batch_iter(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch: a random permutation of ``range(n)`` cut into batches, the
    last one possibly short."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


# --------------------------------------------------------------------------
# Directory format

FEATURE_FILES = {
    "x_seen_train": "features_seen_train.csv",
    "x_seen_test": "features_seen_test.csv",
    "x_unseen": "features_unseen.csv",
}
LABEL_FILES = {
    "y_seen_train": "labels_seen_train.csv",
    "y_seen_test": "labels_seen_test.csv",
    "unseen_test_labels": "labels_unseen.csv",
}


def _fmt(v: float) -> str:
    return repr(float(v))


def save_dataset(ds: SplitDataset, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for attr, fname in FEATURE_FILES.items():
        arr = getattr(ds, attr)
        with open(path / fname, "w", encoding="utf-8", newline="") as fh:
            for row in arr:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
    for attr, fname in LABEL_FILES.items():
        arr = getattr(ds, attr)
        if arr is None:
            continue
        with open(path / fname, "w", encoding="utf-8", newline="") as fh:
            for v in arr:
                fh.write(f"{int(v)}\n")
    with open(path / "attributes.csv", "w", encoding="utf-8", newline="") as fh:
        for c, row in zip(ds.attributes.class_ids, ds.attributes.vectors):
            fh.write(",".join([str(c)] + [_fmt(v) for v in row]) + "\n")
    split = {
        "seen_classes": list(ds.attributes.seen_classes),
        "unseen_classes": list(ds.attributes.unseen_classes),
        "d": ds.d,
        "k": ds.k,
    }
    (path / "split.json").write_text(json.dumps(split, indent=2) + "\n", encoding="utf-8")


def _rows(file: Path):
    if not file.is_file():
        raise MissingFileError(f"{file}: file not found")
    with open(file, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            yield lineno, row


def _read_features(file: Path, d: int) -> np.ndarray:
    out = []
    for lineno, row in _rows(file):
        if len(row) != d:
            raise DimensionMismatchError(f"{file}:{lineno}: expected {d} values, got {len(row)}")
        try:
            out.append([float(c) for c in row])
        except ValueError as e:
            raise MalformedRowError(f"{file}:{lineno}: {e}") from None
    arr = np.asarray(out, dtype=DEFAULT_DTYPE).reshape(-1, d)
    if not np.all(np.isfinite(arr)):
        raise MalformedRowError(f"{file}: non-finite feature value")
    return arr


def _read_labels(file: Path) -> np.ndarray:
    out = []
    for lineno, row in _rows(file):
        if len(row) != 1:
            raise MalformedRowError(f"{file}:{lineno}: expected one class id, got {len(row)} values")
        try:
            out.append(int(row[0]))
        except ValueError:
            raise MalformedRowError(f"{file}:{lineno}: not an integer class id: {row[0]!r}") from None
    return np.asarray(out, dtype=np.int64)


def normalize_attributes(vectors: np.ndarray) -> np.ndarray:
    """Min-max scale each dimension to [0, 1]; tables already in range are
    returned unchanged."""
    if vectors.min() >= 0 and vectors.max() <= 1:
        return vectors
    lo = vectors.min(axis=0)
    span = vectors.max(axis=0) - lo
    span[span == 0] = 1.0
    return (vectors - lo) / span


def load_dataset(path: str | Path) -> SplitDataset:
    path = Path(path)
    split_file = path / "split.json"
    if not split_file.is_file():
        raise MissingFileError(f"{split_file}: file not found")
    try:
        split = json.loads(split_file.read_text(encoding="utf-8"))
        seen = tuple(int(c) for c in split["seen_classes"])
        unseen = tuple(int(c) for c in split["unseen_classes"])
        d, k = int(split["d"]), int(split["k"])
    except (ValueError, KeyError, TypeError) as e:
        raise MalformedRowError(f"{split_file}: {e!r}") from None
    both = set(seen) & set(unseen)
    if both:
        raise OverlappingPartitionError(
            f"{split_file}: classes listed as both seen and unseen: {sorted(both)}"
        )

    attr_file = path / "attributes.csv"
    ids, vecs = [], []
    for lineno, row in _rows(attr_file):
        if len(row) != k + 1:
            raise DimensionMismatchError(
                f"{attr_file}:{lineno}: expected class id and {k} values, got {len(row) - 1} values"
            )
        try:
            ids.append(int(row[0]))
            vecs.append([float(c) for c in row[1:]])
        except ValueError as e:
            raise MalformedRowError(f"{attr_file}:{lineno}: {e}") from None
    vectors = normalize_attributes(np.asarray(vecs, dtype=DEFAULT_DTYPE).reshape(-1, k))
    table = AttributeTable(tuple(ids), vectors, seen, unseen)

    feats = {attr: _read_features(path / fname, d) for attr, fname in FEATURE_FILES.items()}
    labels = {}
    for attr, fname in LABEL_FILES.items():
        f = path / fname
        if attr == "unseen_test_labels" and not f.exists():
            labels[attr] = None
            continue
        labels[attr] = _read_labels(f)
    return SplitDataset(
        feats["x_seen_train"],
        labels["y_seen_train"],
        feats["x_unseen"],
        feats["x_seen_test"],
        labels["y_seen_test"],
        table,
        labels["unseen_test_labels"],
    )
