"""Datasets: CSV ingestion, synthetic generators and deterministic splitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .files import atomic_write_text, fmt, read_schema_line, SCHEMAS, SCHEMA_PREFIX
from .metrics import EvalSet

SPLITS = ("train", "validation", "test")
DEFAULT_RATIOS = (4 / 6, 1 / 6, 1 / 6)
SYNTHETIC_KINDS = ("biased_gauss", "symmetric", "boundary2d")
DEFAULT_BIAS = 1.0


class MissingColumnError(DataError):
    pass


class BadValueError(DataError):
    pass


class EmptyFileError(DataError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    sensitive: np.ndarray
    split: np.ndarray
    provenance: dict = field(default_factory=dict)
    feature_names: tuple = ()

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        n = X.shape[0]
        y = np.array(self.labels, dtype=np.int64).reshape(-1)
        g = np.array(self.sensitive, dtype=np.int64).reshape(-1)
        s = np.array(self.split, dtype="<U10").reshape(-1)
        if not (y.shape[0] == g.shape[0] == s.shape[0] == n):
            raise DataError("features, labels, sensitive and split lengths differ")
        if not np.all(np.isfinite(X)):
            raise DataError("features must be finite")
        if not (np.isin(y, (0, 1)).all() and np.isin(g, (0, 1)).all()):
            raise DataError("labels and sensitive attribute must be binary")
        if not np.isin(s, SPLITS).all():
            raise DataError(f"split tags must be one of {SPLITS}")
        for name in SPLITS:
            if not (s == name).any():
                raise DataError(f"split {name!r} is empty")
        for a in (X, y, g, s):
            a.setflags(write=False)
        names = tuple(self.feature_names) or tuple(f"x{i}" for i in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError("feature_names length does not match feature count")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "sensitive", g)
        object.__setattr__(self, "split", s)
        object.__setattr__(self, "feature_names", names)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def part(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        mask = self.split == name
        return (np.ascontiguousarray(self.features[mask]),
                self.labels[mask].astype(np.float64), self.sensitive[mask].copy())

    def train_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        X, y, _ = self.part("train")
        return X, y

    def evalset(self, role: str) -> EvalSet:
        X, y, g = self.part(role)
        return EvalSet(X, y, g, role)

    def sizes(self) -> dict[str, int]:
        return {name: int((self.split == name).sum()) for name in SPLITS}

    def replace(self, **changes) -> "Dataset":
        fields = dict(features=self.features, labels=self.labels, sensitive=self.sensitive,
                      split=self.split, provenance=dict(self.provenance),
                      feature_names=self.feature_names)
        fields.update(changes)
        return Dataset(**fields)


def _placeholder_split(n: int) -> np.ndarray:
    """Valid tags for constructing a Dataset that is about to be re-split."""
    tags = np.full(n, "train", dtype="<U10")
    tags[:3] = SPLITS
    return tags


def split_sizes(n: int, ratios=DEFAULT_RATIOS) -> tuple[int, int, int]:
    """Largest-remainder apportionment; leftover rows go to larger fractions first,
    ties resolved in train, validation, test order."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1) > 1e-9:
        raise ValueError("ratios must be three positive numbers summing to 1")
    raw = [r * n for r in ratios]
    sizes = [math.floor(x + 1e-9) for x in raw]
    # remainders rounded so float noise cannot break a tie out of order
    order = sorted(range(3), key=lambda i: (-round(raw[i] - sizes[i], 9), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    if min(sizes) == 0:
        raise DataError(f"a split would be empty for n={n} with ratios {ratios}")
    return tuple(sizes)


def assign_splits(n_units: int, ratios, seed: int) -> np.ndarray:
    sizes = split_sizes(n_units, ratios)
    perm = np.random.default_rng(seed).permutation(n_units)
    tags = np.empty(n_units, dtype="<U10")
    start = 0
    for name, size in zip(SPLITS, sizes):
        tags[perm[start:start + size]] = name
        start += size
    return tags


def split(dataset: Dataset, ratios=DEFAULT_RATIOS, seed: int = 0, groups=None) -> Dataset:
    """Shuffled train/validation/test assignment.

    ``groups`` (one id per row) keeps rows sharing an id in the same split.
    """
    if groups is None:
        tags = assign_splits(len(dataset), ratios, seed)
    else:
        groups = np.asarray(groups)
        uniq, inverse = np.unique(groups, return_inverse=True)
        tags = assign_splits(len(uniq), ratios, seed)[inverse]
    prov = dict(dataset.provenance, split_seed=int(seed), split_ratios=[float(r) for r in ratios])
    return dataset.replace(split=tags, provenance=prov)


def standardize(dataset: Dataset) -> Dataset:
    """Z-score every feature with train-split statistics only."""
    X_train, _, _ = dataset.part("train")
    mean = X_train.mean(axis=0)
    std = X_train.std(axis=0)
    std[std == 0] = 1.0
    prov = dict(dataset.provenance, standardized=True)
    return dataset.replace(features=(dataset.features - mean) / std, provenance=prov)


# -- synthetic data ---------------------------------------------------------------

def _two_class_gauss(rng, n, d, separation=1.0):
    y = rng.integers(0, 2, n)
    direction = np.ones(d) / math.sqrt(d)
    X = rng.normal(size=(n, d)) + np.where(y == 1, 0.5, -0.5)[:, None] * separation * direction
    return X, y


def gen_synthetic(kind: str, n: int, d: int = 5, bias_strength: float = DEFAULT_BIAS,
                  seed: int = 0, ratios=DEFAULT_RATIOS) -> Dataset:
    """Deterministic synthetic classification data with a binary sensitive attribute.

    ``biased_gauss``: class-conditional Gaussians, the first feature shifted by
    group, and labels flipped toward the positive class for ``g=1`` (toward the
    negative class for ``g=0``) at a rate growing with ``bias_strength``.

    ``symmetric``: every point appears once per group with identical features
    and label, adjacent rows, split together; any model is exactly fair on any split.

    ``boundary2d``: two-feature version of ``biased_gauss`` for decision-boundary plots.
    """
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    if n < 12:
        raise ValueError("n must be at least 12")
    if kind == "boundary2d":
        d = 2
    if d < 1:
        raise ValueError("d must be at least 1")
    if bias_strength < 0:
        raise ValueError("bias_strength must be nonnegative")
    rng = np.random.default_rng(seed)
    groups = None
    if kind == "symmetric":
        half = n // 2
        Xb, yb = _two_class_gauss(rng, half, d, separation=2.0)
        X = np.repeat(Xb, 2, axis=0)
        y = np.repeat(yb, 2)
        g = np.tile([0, 1], half)
        groups = np.repeat(np.arange(half), 2)
    else:
        X, y = _two_class_gauss(rng, n, d, separation=2.0)
        g = rng.integers(0, 2, n)
        X[:, 0] += bias_strength * (g - 0.5)
        flip = rng.random(n) < min(0.2 * bias_strength, 0.5)
        y = np.where(flip, g, y)
    provenance = {"source": "synthetic", "kind": kind, "n": int(n), "d": int(d),
                  "bias_strength": float(bias_strength), "seed": int(seed)}
    ds = Dataset(X, y, g, _placeholder_split(len(y)), provenance)
    return split(ds, ratios, seed, groups=groups)


# -- CSV ----------------------------------------------------------------------------

def _binary(value: str, row: int, column: str) -> int:
    v = value.strip().lower()
    if v in ("0", "0.0", "false"):
        return 0
    if v in ("1", "1.0", "true"):
        return 1
    raise BadValueError(f"row {row}, column {column!r}: value {value!r} is not binary")


def load_csv(path, label_column: str = "label", sensitive_column: str = "sensitive",
             feature_columns=None, split_column: str | None = None,
             sensitive_as_feature: bool = False, ratios=DEFAULT_RATIOS, seed: int = 0,
             do_standardize: bool = False) -> Dataset:
    """Read a header-row CSV.

    Without ``split_column`` rows are split with :func:`split` (``ratios``, ``seed``).
    Row numbers in errors are 1-based data rows (the header is row 0).
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if not first.strip():
            raise EmptyFileError(f"{path}: file is empty")
        if read_schema_line(first, "dataset") is None:
            fh.seek(0)
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if split_column is None and "split" in header and feature_columns is None:
            split_column = "split"
        required = [label_column, sensitive_column] + ([split_column] if split_column else [])
        if feature_columns is None:
            feature_columns = [c for c in header if c not in required]
        missing = [c for c in list(required) + list(feature_columns) if c not in header]
        if missing:
            raise MissingColumnError(f"{path}: missing column(s) {missing}")
        if sensitive_as_feature and sensitive_column not in feature_columns:
            feature_columns = list(feature_columns) + [sensitive_column]
        rows = list(reader)
    if not rows:
        raise EmptyFileError(f"{path}: no data rows")
    X = np.empty((len(rows), len(feature_columns)))
    y = np.empty(len(rows), dtype=np.int64)
    g = np.empty(len(rows), dtype=np.int64)
    bad_rows = []
    for i, row in enumerate(rows, start=1):
        y[i - 1] = _binary(row[label_column], i, label_column)
        g[i - 1] = _binary(row[sensitive_column], i, sensitive_column)
        try:
            vals = [float(row[c]) for c in feature_columns]
        except (TypeError, ValueError):
            bad_rows.append(i)
            continue
        if not all(math.isfinite(v) for v in vals):
            bad_rows.append(i)
            continue
        X[i - 1] = vals
    if bad_rows:
        raise BadValueError(f"{path}: non-finite or non-numeric features in rows {bad_rows}")
    provenance = {"source": str(path)}
    if split_column:
        tags = np.array([r[split_column].strip() for r in rows])
        bad = [i + 1 for i, t in enumerate(tags) if t not in SPLITS]
        if bad:
            raise BadValueError(f"{path}: column {split_column!r} has unknown split tags in rows {bad}")
        ds = Dataset(X, y, g, tags, provenance, tuple(feature_columns))
    else:
        if len(rows) < 3:
            raise DataError(f"{path}: at least 3 rows are needed to form three splits")
        ds = Dataset(X, y, g, _placeholder_split(len(rows)), provenance, tuple(feature_columns))
        ds = split(ds, ratios, seed)
    return standardize(ds) if do_standardize else ds


def save_csv(dataset: Dataset, path) -> Path:
    names = list(dataset.feature_names)
    lines = [f"{SCHEMA_PREFIX}dataset/{SCHEMAS['dataset']}",
             ",".join(names + ["label", "sensitive", "split"])]
    for x, y, g, s in zip(dataset.features, dataset.labels, dataset.sensitive, dataset.split):
        lines.append(",".join([fmt(v) for v in x] + [str(int(y)), str(int(g)), str(s)]))
    return atomic_write_text(path, "\n".join(lines) + "\n")
