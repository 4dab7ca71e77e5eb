"""Dataset ingestion, one-hot encoding, stratified splits and synthetic generators."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"
MISSING_TOKENS = frozenset({"?", ""})


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str = NUMERIC
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise ValueError(f"unknown column kind {self.kind!r}")

    @property
    def width(self) -> int:
        return len(self.categories) if self.kind == CATEGORICAL else 1

    def feature_names(self) -> list[str]:
        if self.kind == NUMERIC:
            return [self.name]
        return [f"{self.name}={c}" for c in self.categories]

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "categories": list(self.categories)}

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnSpec":
        return cls(d["name"], d["kind"], tuple(d.get("categories", ())))


@dataclass(eq=False)
class Dataset:
    """Encoded feature matrix with labels and the encoding that produced it.

    ``labels`` holds class indices into ``classes``, a real target matrix,
    or ``None`` for unlabeled data. ``n_dropped`` counts rows removed for
    missing values and ``n_unseen`` counts categorical cells whose value
    was not in the training vocabulary.
    """

    features: np.ndarray
    labels: np.ndarray | None = None
    column_spec: tuple[ColumnSpec, ...] = ()
    label_name: str | None = None
    classes: tuple[str, ...] | None = None
    n_dropped: int = 0
    n_unseen: int = 0
    source_rows: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if not self.column_spec:
            self.column_spec = tuple(ColumnSpec(f"x{i}") for i in range(self.features.shape[1]))
        if sum(c.width for c in self.column_spec) != self.features.shape[1]:
            raise ValueError("column spec width does not match the feature matrix")
        if self.labels is not None and len(self.labels) != len(self.features):
            raise ValueError(f"{len(self.features)} rows but {len(self.labels)} labels")

    @property
    def n_rows(self) -> int:
        return len(self.features)

    @property
    def width(self) -> int:
        return self.features.shape[1]

    @property
    def is_classification(self) -> bool:
        return self.classes is not None

    @property
    def feature_names(self) -> list[str]:
        return [n for c in self.column_spec for n in c.feature_names()]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        labels = None if self.labels is None else self.labels[rows]
        src = rows if self.source_rows is None else self.source_rows[rows]
        return replace(self, features=self.features[rows], labels=labels,
                       n_dropped=0, n_unseen=0, source_rows=src)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def _read_rows(path):
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if not rows:
        raise ValueError(f"{path}: empty file, expected a header row")
    header = [h.strip() for h in rows[0]]
    body = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ValueError(f"{path} line {lineno}: {len(row)} cells, header has {len(header)}")
        body.append((lineno, [c.strip() for c in row]))
    return header, body


def load_csv(path, label: str | None = None, categorical=(), *, spec=None,
             classes=None, label_kind: str = "class") -> Dataset:
    """Read a comma-delimited file with a header row into an encoded :class:`Dataset`.

    Columns holding any non-numeric cell, and those named in ``categorical``,
    are one-hot encoded with categories in first-appearance order. Rows
    containing a missing cell (``?`` or empty) are dropped. Passing the
    ``spec`` and ``classes`` of a training set applies that encoding
    unchanged; categories absent from it encode as an all-zero block.

    ``label_kind`` is ``"class"`` (labels mapped to indices) or ``"numeric"``.
    """
    if label_kind not in ("class", "numeric"):
        raise ValueError(f"unknown label kind {label_kind!r}")
    header, body = _read_rows(path)
    if label is not None and label not in header:
        raise ValueError(f"label column {label!r} not found in {path}")
    feat_cols = [i for i, h in enumerate(header) if h != label]
    categorical = set(categorical)
    unknown = categorical - set(header)
    if unknown:
        raise ValueError(f"categorical columns not found: {', '.join(sorted(unknown))}")

    kept, dropped = [], 0
    for lineno, row in body:
        if any(row[i] in MISSING_TOKENS for i in range(len(row))):
            dropped += 1
        else:
            kept.append((lineno, row))

    if spec is None:
        spec = []
        for i in feat_cols:
            name = header[i]
            if name in categorical or not all(_is_number(r[i]) for _, r in kept):
                seen = dict.fromkeys(r[i] for _, r in kept)
                spec.append(ColumnSpec(name, CATEGORICAL, tuple(seen)))
            else:
                spec.append(ColumnSpec(name, NUMERIC))
        spec = tuple(spec)
    else:
        spec = tuple(spec)
        names = [header[i] for i in feat_cols]
        expected = [c.name for c in spec]
        if names != expected:
            missing = [n for n in expected if n not in names]
            extra = [n for n in names if n not in expected]
            parts = []
            if missing:
                parts.append("missing columns: " + ", ".join(missing))
            if extra:
                parts.append("unexpected columns: " + ", ".join(extra))
            if not parts:
                parts.append("columns out of order")
            raise ValueError(f"{path} does not match the model schema ({'; '.join(parts)})")

    width = sum(c.width for c in spec)
    X = np.zeros((len(kept), width))
    unseen = 0
    lookups = [{c: k for k, c in enumerate(s.categories)} for s in spec]
    for r, (lineno, row) in enumerate(kept):
        off = 0
        for s, lookup, i in zip(spec, lookups, feat_cols):
            cell = row[i]
            if s.kind == NUMERIC:
                try:
                    v = float(cell)
                except ValueError:
                    raise ValueError(f"{path} line {lineno}, column {s.name!r}: "
                                     f"cannot parse {cell!r} as a number") from None
                if not math.isfinite(v):
                    raise ValueError(f"{path} line {lineno}, column {s.name!r}: non-finite value")
                X[r, off] = v
            else:
                k = lookup.get(cell)
                if k is None:
                    unseen += 1
                else:
                    X[r, off + k] = 1.0
            off += s.width

    labels = None
    if label is not None:
        li = header.index(label)
        raw = [row[li] for _, row in kept]
        if label_kind == "numeric":
            try:
                labels = np.array([float(v) for v in raw])
            except ValueError as exc:
                raise ValueError(f"{path}: non-numeric value in label column {label!r}") from exc
        else:
            if classes is None:
                classes = tuple(dict.fromkeys(raw))
            index = {c: k for k, c in enumerate(classes)}
            bad = sorted(set(raw) - index.keys())
            if bad:
                raise ValueError(f"{path}: unknown classes in {label!r}: {', '.join(bad)}")
            labels = np.array([index[v] for v in raw], dtype=np.int64)
            classes = tuple(classes)
    if label_kind == "numeric" or label is None:
        classes = None
    return Dataset(X, labels, spec, label, classes, dropped, unseen)


def _format(v: float) -> str:
    return repr(float(v))


def write_csv(dataset: Dataset, path) -> None:
    """Write the encoded features (and labels) with a header row."""
    cols = dataset.feature_names
    labels = dataset.labels
    if labels is not None:
        cols = cols + [dataset.label_name or "label"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i, row in enumerate(dataset.features):
            cells = [_format(v) for v in row]
            if labels is not None:
                y = labels[i]
                cells.append(str(int(y)) if dataset.is_classification else _format(y))
            w.writerow(cells)


def _largest_remainder(counts, fraction):
    total = round(fraction * sum(counts))
    quotas = [c * fraction for c in counts]
    take = [math.floor(q) for q in quotas]
    order = sorted(range(len(counts)), key=lambda i: (-(quotas[i] - take[i]), i))
    for i in order[: total - sum(take)]:
        take[i] += 1
    return take


def split_indices(labels, n: int, fraction: float, seed: int = 0):
    """Train and test row indices (each sorted); stratified when ``labels`` are classes."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    groups = None
    if labels is not None:
        classes, counts = np.unique(labels, return_counts=True)
        if counts.min() < 2:
            warnings.warn("a class has fewer than 2 rows; falling back to an unstratified split")
        else:
            groups = [rng.permutation(np.flatnonzero(labels == c)) for c in classes]
    if groups is None:
        groups = [rng.permutation(n)]
    take = _largest_remainder([len(g) for g in groups], fraction)
    train = np.sort(np.concatenate([g[:t] for g, t in zip(groups, take)]))
    test = np.sort(np.concatenate([g[t:] for g, t in zip(groups, take)]))
    return train, test


def split(dataset: Dataset, fraction: float, seed: int = 0):
    labels = dataset.labels if dataset.is_classification else None
    train, test = split_indices(labels, dataset.n_rows, fraction, seed)
    return dataset.subset(train), dataset.subset(test)


def stratified_subsample(dataset: Dataset, n: int, seed: int = 0) -> Dataset:
    """Stratified random subset of ``n`` rows."""
    if not 0 < n <= dataset.n_rows:
        raise ValueError(f"subsample size must lie in [1, {dataset.n_rows}]")
    if n == dataset.n_rows:
        return dataset
    train, _ = split_indices(dataset.labels if dataset.is_classification else None,
                             dataset.n_rows, n / dataset.n_rows, seed)
    return dataset.subset(train)


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.assignments)
        if a.size and (a.min() < 0 or a.max() >= self.k):
            raise ValueError("fold index out of range")

    def test_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)


def kfold_assignments(labels, n: int, k: int, seed: int = 0) -> FoldPlan:
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of rows ({n})")
    rng = np.random.default_rng(seed)
    if labels is None:
        order = rng.permutation(n)
    else:
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c))
                                for c in np.unique(labels)])
    # dealing the class-grouped order round-robin keeps fold sizes within 1
    assignments = np.empty(n, dtype=np.int64)
    assignments[order] = np.arange(n) % k
    return FoldPlan(k, assignments)


def kfold(dataset: Dataset, k: int, seed: int = 0) -> FoldPlan:
    labels = dataset.labels if dataset.is_classification else None
    return kfold_assignments(labels, dataset.n_rows, k, seed)


def gen_circles(n: int, noise_std: float = 0.1, seed: int = 0) -> Dataset:
    """Two concentric circles of radius 1 (class 0) and 2 (class 1) with radial noise."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % 2)
    angle = rng.uniform(0.0, 2 * np.pi, n)
    radius = 1.0 + labels + rng.normal(0.0, 1.0, n) * noise_std
    X = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
    spec = (ColumnSpec("x0"), ColumnSpec("x1"))
    return Dataset(X, labels.astype(np.int64), spec, "label", ("0", "1"))


def gen_curve3d(n: int, seed: int = 0, jitter: float = 0.01) -> Dataset:
    """Points ``(t, sin t, cos t)`` with ``t ~ U[0, 3 pi]`` plus Gaussian jitter."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, 3 * np.pi, n)
    X = np.column_stack([t, np.sin(t), np.cos(t)]) + rng.normal(0.0, 1.0, (n, 3)) * jitter
    return Dataset(X, None, (ColumnSpec("x0"), ColumnSpec("x1"), ColumnSpec("x2")))
