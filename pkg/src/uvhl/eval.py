"""Metrics, the cross-validation harness, K selection and ablation runs."""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from uvhl.data import (
    CAP,
    COVID,
    UNLABELED,
    apply_normalization,
    fit_normalization,
    stratified_kfold,
)
from uvhl.hypergraph import build_incidence, knn_hyperedges, theta
from uvhl.solver import predict_labels, solve_closed_form
from uvhl.uncertainty import TrainConfig, normalize_scores, score_cases, train

SCHEMA_VERSION = 1
METHODS = ("uvhl", "equal-weight", "aleatoric-only", "epistemic-only")
METRICS = ("acc", "sen", "spec", "bac", "ppv", "npv")
DEFAULT_K_POOL = tuple(range(2, 21))
# groups that feed the network but never spawn hyperedges
NON_EDGE_GROUPS = ("demographic",)


@dataclass(frozen=True)
class ConfusionMatrix:
    """COVID-19 is the positive class."""

    tp: int
    fn: int
    fp: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self):
        return self.tp + self.fn + self.fp + self.tn

    def __add__(self, other):
        return ConfusionMatrix(self.tp + other.tp, self.fn + other.fn,
                               self.fp + other.fp, self.tn + other.tn)


def confusion(pred, truth):
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if pred.shape != truth.shape:
        raise ValueError(f"pred and truth lengths differ: {pred.size} vs {truth.size}")
    if np.any(truth == UNLABELED):
        raise ValueError("truth contains unlabeled cases")
    pos_t, pos_p = truth == COVID, pred == COVID
    return ConfusionMatrix(
        tp=int(np.sum(pos_t & pos_p)),
        fn=int(np.sum(pos_t & ~pos_p)),
        fp=int(np.sum(~pos_t & pos_p)),
        tn=int(np.sum(~pos_t & ~pos_p)),
    )


def _ratio(num, den):
    return num / den if den else math.nan


def metrics(cm):
    """ACC, SEN, SPEC, BAC, PPV, NPV; a zero denominator yields NaN."""
    sen = _ratio(cm.tp, cm.tp + cm.fn)
    spec = _ratio(cm.tn, cm.tn + cm.fp)
    return {
        "acc": _ratio(cm.tp + cm.tn, cm.total),
        "sen": sen,
        "spec": spec,
        "bac": (sen + spec) / 2,
        "ppv": _ratio(cm.tp, cm.tp + cm.fp),
        "npv": _ratio(cm.tn, cm.tn + cm.fn),
    }


def welch_t_test(runs_a, runs_b):
    """Two-sided Welch t-test p-value.

    Two zero-variance samples give 1.0 when their means agree and 0.0
    otherwise.
    """
    a = np.asarray(runs_a, dtype=float)
    b = np.asarray(runs_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two runs")
    if np.var(a) == 0 and np.var(b) == 0:
        return 1.0 if a.mean() == b.mean() else 0.0
    p = stats.ttest_ind(a, b, equal_var=False).pvalue
    return float(min(max(p, 0.0), 1.0))


@dataclass(frozen=True)
class CVConfig:
    folds: int = 10
    repeats: int = 1
    seed: int = 0
    method: str = "uvhl"
    feature_groups: tuple = ()
    k_nn: int = None
    k_pool: tuple = DEFAULT_K_POOL
    inner_folds: int = 5
    lambda_u: float = -1.0
    lambda_r: float = 1.0
    lambda_r_grid: tuple = ()
    passes: int = 20
    train: TrainConfig = field(default_factory=TrainConfig)
    train_per_class: int = None
    tie_class: int = COVID

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.k_nn is None and not self.k_pool:
            raise ValueError("k_pool must be non-empty when k_nn is not fixed")

    def snapshot(self):
        out = asdict(self)
        out["train"]["hidden"] = list(self.train.hidden)
        for key in ("feature_groups", "k_pool", "lambda_r_grid"):
            out[key] = list(out[key])
        return out


def _seed(*keys):
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def edge_groups_for(dataset, config):
    """Feature groups that spawn hyperedges, and the columns the network sees."""
    groups = list(config.feature_groups) or [g for g in dataset.groups if g not in NON_EDGE_GROUPS]
    if not groups:
        groups = list(dataset.groups)
    for g in groups:
        if g not in dataset.groups:
            raise ValueError(f"unknown feature group {g!r}; have {sorted(dataset.groups)}")
    extra = [g for g in dataset.groups if g in NON_EDGE_GROUPS and g not in groups]
    return groups, dataset.columns_for(groups + extra)


@dataclass(frozen=True, eq=False)
class Scores:
    aleatoric: np.ndarray
    epistemic: np.ndarray


def uncertainty_scores(Xn, labels, config, seed):
    """Train on the labeled rows of ``Xn`` and score every row."""
    train_rows = np.flatnonzero(labels != UNLABELED)
    model = train(Xn[train_rows], labels[train_rows], replace(config.train, seed=seed))
    aleatoric, epistemic = score_cases(model, Xn, config.passes, seed)
    return Scores(aleatoric, epistemic)


def method_weights(scores, method, lambda_u, n):
    """Vertex weights for one ablation arm."""
    if method == "equal-weight":
        return np.ones(n)
    if method == "uvhl":
        raw = scores.epistemic
    elif method == "aleatoric-only":
        raw = scores.aleatoric
    elif method == "epistemic-only":
        raw = scores.epistemic - scores.aleatoric
    else:
        raise ValueError(f"unknown method {method!r}")
    return normalize_scores(raw, lambda_u, scores.aleatoric).weights


def label_matrix(labels):
    Y = np.zeros((labels.size, 2))
    known = labels != UNLABELED
    Y[known, labels[known]] = 1.0
    return Y


def propagate(Xn, labels, weights, group_columns, k_nn, lambda_r):
    """Build the weighted hypergraph over all rows and solve for F."""
    edges = {name: knn_hyperedges(Xn[:, cols], k_nn) for name, cols in group_columns.items()}
    hg = build_incidence(edges, weights)
    return solve_closed_form(theta(hg), hg.u, label_matrix(labels), lambda_r)


@dataclass(frozen=True, eq=False)
class FoldResult:
    F: np.ndarray
    weights: np.ndarray
    k_nn: int
    lambda_r: float
    scores: Scores = None


def run_fold(dataset, train_rows, config, seed, cache=None):
    """Transductive fit with only ``train_rows`` labels visible.

    Every row of the dataset is a vertex. Labels outside ``train_rows`` are
    hidden before anything else runs, so test labels cannot reach the
    normalization, the uncertainty model or K selection.
    """
    train_rows = np.asarray(train_rows, dtype=int)
    labels = np.full(dataset.n, UNLABELED)
    labels[train_rows] = dataset.labels[train_rows]
    if np.any(labels[train_rows] == UNLABELED):
        raise ValueError("train rows must be labeled")
    groups, net_cols = edge_groups_for(dataset, config)
    norm = fit_normalization(dataset, train_rows)
    Xn = apply_normalization(norm, dataset.features)
    group_columns = {g: dataset.group_columns(g) for g in groups}

    scores = None
    if config.method != "equal-weight":
        key = (train_rows.tobytes(), seed)
        if cache is not None and key in cache:
            scores = cache[key]
        else:
            scores = uncertainty_scores(Xn[:, net_cols], labels, config, seed)
            if cache is not None:
                cache[key] = scores
    weights = method_weights(scores, config.method, config.lambda_u, dataset.n)

    if config.k_nn is None or config.lambda_r_grid:
        k_nn, lambda_r = select_hyperparameters(dataset, train_rows, config, seed)
    else:
        k_nn, lambda_r = config.k_nn, config.lambda_r
    F = propagate(Xn, labels, weights, group_columns, k_nn, lambda_r)
    return FoldResult(F, weights, k_nn, lambda_r, scores)


def select_hyperparameters(dataset, train_rows, config, seed):
    """Inner stratified CV on the training rows over the K pool (and lambda_r grid).

    Vertices of the inner hypergraphs are the training rows only. Highest
    mean inner accuracy wins; ties go to the smallest K, then the smallest
    lambda_r.
    """
    pool = [config.k_nn] if config.k_nn is not None else sorted(set(config.k_pool))
    if not pool:
        raise ValueError("K pool is empty")
    lambdas = sorted(set(config.lambda_r_grid)) or [config.lambda_r]
    train_rows = np.asarray(train_rows, dtype=int)
    if len(pool) == 1 and len(lambdas) == 1:
        return pool[0], lambdas[0]

    plan = stratified_kfold(dataset, config.inner_folds, _seed(seed, 1), rows=train_rows)
    groups, net_cols = edge_groups_for(dataset, config)
    n_sub = train_rows.size
    position = np.full(dataset.n, -1)
    position[train_rows] = np.arange(n_sub)
    acc = np.zeros((len(pool), len(lambdas)))
    for fold in range(config.inner_folds):
        inner_train = plan.train_rows(fold)
        inner_test = plan.test_rows(fold)
        labels = np.full(n_sub, UNLABELED)
        labels[position[inner_train]] = dataset.labels[inner_train]
        norm = fit_normalization(dataset, inner_train)
        Xn = apply_normalization(norm, dataset.features[train_rows])
        scores = None
        if config.method != "equal-weight":
            scores = uncertainty_scores(Xn[:, net_cols], labels, config, _seed(seed, 2, fold))
        weights = method_weights(scores, config.method, config.lambda_u, n_sub)
        group_columns = {g: dataset.group_columns(g) for g in groups}
        truth = dataset.labels[inner_test]
        for i, k in enumerate(pool):
            if k >= n_sub:
                acc[i] = -np.inf
                continue
            edges = {g: knn_hyperedges(Xn[:, cols], k) for g, cols in group_columns.items()}
            hg = build_incidence(edges, weights)
            T = theta(hg)
            Y = label_matrix(labels)
            for j, lam in enumerate(lambdas):
                F = solve_closed_form(T, hg.u, Y, lam)
                pred = predict_labels(F, position[inner_test], config.tie_class)
                acc[i, j] += np.mean(pred == truth) / config.inner_folds
    # argmax returns the first maximum: smallest K, then smallest lambda_r
    i, j = np.unravel_index(np.argmax(acc), acc.shape)
    return pool[i], lambdas[j]


def select_k(dataset, train_rows, pool=DEFAULT_K_POOL, config=None, seed=0):
    """K with the best mean inner-CV accuracy on ``train_rows``; ties -> smallest."""
    if not pool:
        raise ValueError("K pool is empty")
    config = replace(config or CVConfig(), k_nn=None, k_pool=tuple(pool), lambda_r_grid=())
    return select_hyperparameters(dataset, train_rows, config, seed)[0]


def _subsample(dataset, rows, per_class, seed):
    rng = np.random.default_rng(seed)
    keep = []
    for c in (COVID, CAP):
        members = rows[dataset.labels[rows] == c]
        keep.append(rng.permutation(members)[:per_class])
    return np.sort(np.concatenate(keep))


def _clean(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


@dataclass
class EvalReport:
    config: dict
    rows: list
    repeats: list
    summary: dict
    schema_version: int = SCHEMA_VERSION

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "summary": self.summary,
            "repeats": self.repeats,
            "rows": self.rows,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def to_csv(self):
        fields = ["repeat", "fold", "method", "k_nn", "lambda_r", "n_test",
                  "tp", "fn", "fp", "tn", *METRICS, "weight_min", "weight_max", "weight_mean"]
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in fields})
        return buf.getvalue()

    def save(self, directory, stem="report"):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{stem}.json").write_text(self.to_json(), encoding="utf-8")
        (directory / f"{stem}.csv").write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def load(cls, path):
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if raw.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"{path}: unsupported report schema {raw.get('schema_version')}")
        return cls(raw["config"], raw["rows"], raw["repeats"], raw["summary"], raw["schema_version"])

    def metric(self, name, level="repeats"):
        source = self.repeats if level == "repeats" else self.rows
        return np.array([math.nan if r[name] is None else r[name] for r in source])


def _summarize(records):
    out = {}
    for name in METRICS:
        vals = np.array([math.nan if r[name] is None else r[name] for r in records])
        vals = vals[~np.isnan(vals)]
        mean = float(vals.mean()) if vals.size else None
        std = float(vals.std(ddof=1)) if vals.size > 1 else (0.0 if vals.size else None)
        out[name] = {"mean": mean, "std": std}
    return out


def cross_validate(dataset, config=CVConfig(), plans=None, cache=None):
    """Repeated stratified K-fold evaluation of one weighting method.

    Each fold normalizes on its training rows, trains the uncertainty model
    there, scores every vertex, selects K on the training rows (unless fixed),
    solves over all vertices and scores predictions on the held-out rows.
    ``plans`` optionally pins one FoldPlan per repeat.
    """
    rows, repeats = [], []
    for r in range(config.repeats):
        plan = plans[r] if plans is not None else stratified_kfold(
            dataset, config.folds, _seed(config.seed, r))
        pooled = ConfusionMatrix(0, 0, 0, 0)
        for fold in range(plan.k):
            train_rows, test_rows = plan.train_rows(fold), plan.test_rows(fold)
            fold_seed = _seed(config.seed, r, fold)
            if config.train_per_class is not None:
                train_rows = _subsample(dataset, train_rows, config.train_per_class, fold_seed)
            try:
                result = run_fold(dataset, train_rows, config, fold_seed, cache)
            except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
                exc.args = (f"repeat {r}, fold {fold}: {exc}", *exc.args[1:])
                raise
            pred = predict_labels(result.F, test_rows, config.tie_class)
            cm = confusion(pred, dataset.labels[test_rows])
            pooled = pooled + cm
            row = {"repeat": r, "fold": fold, "method": config.method,
                   "k_nn": int(result.k_nn), "lambda_r": float(result.lambda_r),
                   "n_test": int(test_rows.size), **asdict(cm)}
            row.update({k: _clean(v) for k, v in metrics(cm).items()})
            row.update(weight_min=float(result.weights.min()),
                       weight_max=float(result.weights.max()),
                       weight_mean=float(result.weights.mean()),
                       test_ids=[dataset.ids[i] for i in test_rows],
                       predictions=[int(p) for p in pred],
                       scores=[[float(a), float(b)] for a, b in result.F[test_rows]])
            rows.append(row)
        rep = {"repeat": r, **asdict(pooled)}
        rep.update({k: _clean(v) for k, v in metrics(pooled).items()})
        repeats.append(rep)
    summary = {"folds": _summarize(rows), "repeats": _summarize(repeats)}
    return EvalReport(config.snapshot(), rows, repeats, summary)


def ablation(dataset, config=CVConfig(), methods=METHODS):
    """Run each weighting method on identical folds; network scores are shared."""
    cache = {}
    plans = [stratified_kfold(dataset, config.folds, _seed(config.seed, r))
             for r in range(config.repeats)]
    return {m: cross_validate(dataset, replace(config, method=m), plans, cache) for m in methods}
