"""Dataset ingestion, train-fitted normalization, fold plans and synthetic data."""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.model_selection import StratifiedKFold

from uvhl.errors import IntegrityError, ParseError, SchemaError, ShapeError

COVID = 0
CAP = 1
UNLABELED = -1

LABEL_NAMES = {COVID: "COVID", CAP: "CAP", UNLABELED: "UNKNOWN"}
LABEL_CODES = {name: code for code, name in LABEL_NAMES.items()}

# group name -> column-name prefixes; order fixes the column layout
DEFAULT_SCHEMA = {
    "regional": ("reg_",),
    "radiomics": ("rad_",),
    "demographic": ("age", "sex"),
}


@dataclass(frozen=True, eq=False)
class Dataset:
    ids: tuple
    features: np.ndarray
    groups: dict
    labels: np.ndarray
    feature_names: tuple = ()

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if features.ndim != 2 or features.shape[0] < 1:
            raise ShapeError("features must be a non-empty 2-D matrix")
        n, d = features.shape
        if len(self.ids) != n or labels.shape != (n,):
            raise ShapeError(f"ids/labels length must equal row count {n}")
        if not np.all(np.isfinite(features)):
            raise ValueError("features contain non-finite values")
        if not np.all(np.isin(labels, (COVID, CAP, UNLABELED))):
            raise ValueError("labels must be COVID (0), CAP (1) or UNLABELED (-1)")
        covered = np.zeros(d, dtype=int)
        for name, (start, stop) in self.groups.items():
            if not 0 <= start < stop <= d:
                raise SchemaError(f"group {name!r} range [{start}, {stop}) outside 0..{d}")
            covered[start:stop] += 1
        if not np.all(covered == 1):
            raise SchemaError("group column ranges must be disjoint and cover every column")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "groups", {k: tuple(v) for k, v in self.groups.items()})

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    def labeled(self):
        return np.flatnonzero(self.labels != UNLABELED)

    def unlabeled(self):
        return np.flatnonzero(self.labels == UNLABELED)

    def group_columns(self, name):
        start, stop = self.groups[name]
        return np.arange(start, stop)

    def columns_for(self, names):
        if not names:
            return np.arange(self.d)
        return np.concatenate([self.group_columns(g) for g in names])

    def with_labels(self, labels):
        return Dataset(self.ids, self.features, self.groups, labels, self.feature_names)


@dataclass(frozen=True, eq=False)
class NormalizationParams:
    min: np.ndarray
    max: np.ndarray
    fitted_on: int


@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    assignments: np.ndarray  # fold per row, -1 for rows outside the plan
    seed: int

    def test_rows(self, fold):
        return np.flatnonzero(self.assignments == fold)

    def train_rows(self, fold):
        return np.flatnonzero((self.assignments >= 0) & (self.assignments != fold))


def _match_group(column, schema):
    for name, prefixes in schema.items():
        if any(column.startswith(p) for p in prefixes):
            return name
    return None


def load_dataset(path, schema=None):
    """Read a case CSV into a Dataset.

    The file needs ``id`` and ``label`` columns; every other column is a
    feature assigned to a group by name prefix. Feature columns are laid out
    group by group in schema order, keeping the file order within a group.
    """
    schema = dict(DEFAULT_SCHEMA if schema is None else schema)
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row missing") from None
        rows = list(reader)

    if "label" not in header:
        raise SchemaError(f"{path}: missing 'label' column")
    if "id" not in header:
        raise SchemaError(f"{path}: missing 'id' column")
    id_col, label_col = header.index("id"), header.index("label")
    feature_cols = [j for j in range(len(header)) if j not in (id_col, label_col)]

    assigned = {name: [] for name in schema}
    for j in feature_cols:
        name = _match_group(header[j], schema)
        if name is None:
            raise SchemaError(f"{path}: column {header[j]!r} matches no feature group")
        assigned[name].append(j)
    order, groups, start = [], {}, 0
    for name, cols in assigned.items():
        if cols:
            groups[name] = (start, start + len(cols))
            start += len(cols)
            order.extend(cols)
    if not order:
        raise SchemaError(f"{path}: no feature columns")

    ids, labels = [], []
    features = np.empty((len(rows), len(order)))
    seen = set()
    for i, row in enumerate(rows):
        line = i + 2
        if len(row) != len(header):
            raise ParseError(f"{path}: line {line}: expected {len(header)} cells, got {len(row)}")
        case_id = row[id_col].strip()
        if case_id in seen:
            raise IntegrityError(f"{path}: line {line}: duplicate id {case_id!r}")
        seen.add(case_id)
        ids.append(case_id)
        label = row[label_col].strip().upper()
        if label not in LABEL_CODES:
            raise SchemaError(f"{path}: line {line}: label {row[label_col]!r} not in COVID/CAP/UNKNOWN")
        labels.append(LABEL_CODES[label])
        for out, j in enumerate(order):
            try:
                value = float(row[j])
            except ValueError:
                raise ParseError(
                    f"{path}: line {line}, column {header[j]!r}: non-numeric value {row[j]!r}"
                ) from None
            if not np.isfinite(value):
                raise ParseError(f"{path}: line {line}, column {header[j]!r}: non-finite value")
            features[i, out] = value
    if not ids:
        raise SchemaError(f"{path}: no data rows")
    return Dataset(ids, features, groups, np.array(labels), tuple(header[j] for j in order))


def save_dataset(dataset, path):
    names = dataset.feature_names or tuple(f"x{j}" for j in range(dataset.d))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label", *names])
        for case_id, label, row in zip(dataset.ids, dataset.labels, dataset.features):
            writer.writerow([case_id, LABEL_NAMES[int(label)], *(repr(float(v)) for v in row)])


def fit_normalization(dataset, train_rows):
    """Column-wise min/max over the given rows only."""
    train_rows = np.asarray(train_rows, dtype=int)
    if train_rows.size == 0:
        raise ValueError("train_rows must be non-empty")
    block = dataset.features[train_rows]
    return NormalizationParams(block.min(axis=0), block.max(axis=0), int(train_rows.size))


def apply_normalization(params, features):
    """Min-max scale with train-fitted bounds; no clamping, constant columns -> 0."""
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[1] != params.min.shape[0]:
        raise ShapeError(
            f"expected {params.min.shape[0]} columns, got shape {features.shape}"
        )
    span = params.max - params.min
    constant = span == 0
    out = (features - params.min) / np.where(constant, 1.0, span)
    out[:, constant] = 0.0
    return out


def stratified_kfold(dataset, k, seed, rows=None):
    """Assign labeled rows (or the given subset) to ``k`` stratified folds."""
    if k < 2:
        raise ValueError("k must be at least 2")
    rows = dataset.labeled() if rows is None else np.asarray(rows, dtype=int)
    y = dataset.labels[rows]
    if np.any(y == UNLABELED):
        raise ValueError("fold rows must be labeled")
    for c in (COVID, CAP):
        count = int(np.sum(y == c))
        if count < k:
            raise ValueError(f"class {LABEL_NAMES[c]} has {count} labeled rows, fewer than k={k}")
    assignments = np.full(dataset.n, -1, dtype=int)
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    for fold, (_, test) in enumerate(splitter.split(np.zeros(len(rows)), y)):
        assignments[rows[test]] = fold
    assignments.setflags(write=False)
    return FoldPlan(k, assignments, seed)


@dataclass(frozen=True, eq=False)
class SynthSpec:
    """Two Gaussian clusters; ``means`` is (2, d), ``covs`` is (2, d, d)."""

    means: np.ndarray
    covs: np.ndarray
    groups: dict = field(default_factory=dict)
    noise_inflation: float = 4.0

    @classmethod
    def separated(cls, d_regional=10, d_radiomics=10, separation=3.0, spread=1.0,
                  noise_inflation=4.0):
        """Isotropic clusters whose means sit ``separation`` apart along the diagonal."""
        d = d_regional + d_radiomics
        offset = separation / (2.0 * np.sqrt(d))
        means = np.stack([np.full(d, -offset), np.full(d, offset)])
        covs = np.stack([np.eye(d) * spread**2] * 2)
        groups = {"regional": (0, d_regional), "radiomics": (d_regional, d)}
        return cls(means, covs, groups, noise_inflation)


@dataclass(frozen=True, eq=False)
class NoiseMask:
    flipped: np.ndarray
    feature_noise: np.ndarray

    def save(self, path, ids):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["id", "flipped", "feature_noise"])
            for case_id, f, g in zip(ids, self.flipped, self.feature_noise):
                writer.writerow([case_id, int(f), int(g)])


def synth_generate(spec, n_per_class, label_noise=0.0, feature_noise=0.0, seed=0):
    """Sample a two-class dataset with recorded label flips and feature noise.

    Exactly ``round(rate * n_per_class)`` rows per class are flipped, and
    independently the same count per class get their deviation from the
    class mean multiplied by ``spec.noise_inflation``. Returns
    ``(dataset, NoiseMask)``.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be at least 1")
    for name, rate in (("label_noise", label_noise), ("feature_noise", feature_noise)):
        if not 0.0 <= rate <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1]")
    means = np.asarray(spec.means, dtype=float)
    covs = np.asarray(spec.covs, dtype=float)
    d = means.shape[1]
    if means.shape != (2, d) or covs.shape != (2, d, d):
        raise ShapeError("means must be (2, d) and covs (2, d, d)")

    rng = np.random.default_rng(seed)
    n = 2 * n_per_class
    features = np.empty((n, d))
    truth = np.repeat([COVID, CAP], n_per_class)
    flipped = np.zeros(n, dtype=bool)
    noisy = np.zeros(n, dtype=bool)
    n_flip = int(round(label_noise * n_per_class))
    n_noisy = int(round(feature_noise * n_per_class))
    for c in (COVID, CAP):
        try:
            chol = np.linalg.cholesky(covs[c])
        except np.linalg.LinAlgError:
            raise ValueError(f"covariance of class {c} is not positive definite") from None
        rows = np.arange(c * n_per_class, (c + 1) * n_per_class)
        deviation = rng.standard_normal((n_per_class, d)) @ chol.T
        pick_noisy = rng.permutation(n_per_class)[:n_noisy]
        deviation[pick_noisy] *= spec.noise_inflation
        features[rows] = means[c] + deviation
        noisy[rows[pick_noisy]] = True
        flipped[rows[rng.permutation(n_per_class)[:n_flip]]] = True

    labels = np.where(flipped, 1 - truth, truth)
    groups = dict(spec.groups) or {"features": (0, d)}
    prefix = {"regional": "reg_", "radiomics": "rad_"}
    names = []
    for name, (start, stop) in sorted(groups.items(), key=lambda kv: kv[1][0]):
        stem = prefix.get(name, f"{name}_")
        names.extend(f"{stem}{j:03d}" for j in range(stop - start))
    ids = [f"case{i:05d}" for i in range(n)]
    dataset = Dataset(ids, features, groups, labels, tuple(names))
    return dataset, NoiseMask(flipped, noisy)
