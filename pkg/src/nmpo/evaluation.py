"""Cross-validation, hyper-parameter search and leave-one-application-out runs."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import (ConfigError, CorpusError, DomainError, NmpoError, SchemaError, ShapeError,
                     with_context)
from .forest import CLASSIFICATION, REGRESSION, Hyperparams, RandomForestModel, fit_forest
from .ingest import RunRecord
from .metrics import LABEL_ORDER
from .rng import SplitMix64, split_seed
from .stats import build_matrix

LABELS = tuple(l.value for l in LABEL_ORDER)
ORIENTATION = "rows = actual, columns = predicted"
PREDICTED_IPC = "predicted_ipc"


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    assignment: tuple[int, ...]

    def folds(self) -> list[np.ndarray]:
        a = np.asarray(self.assignment)
        return [np.nonzero(a == f)[0] for f in range(self.k)]


def kfold_split(n: int, k: int, seed: int = 0) -> FoldAssignment:
    """Shuffle rows with the seeded generator, then cut into ``k`` contiguous
    folds; the first ``n % k`` folds get one extra row."""
    if k < 2 or k > n:
        raise ConfigError(f"k must satisfy 2 <= k <= n (k={k}, n={n})")
    perm = SplitMix64(seed).permutation(n)
    base, extra = divmod(n, k)
    assignment = [0] * n
    start = 0
    for fold in range(k):
        size = base + (1 if fold < extra else 0)
        for row in perm[start:start + size]:
            assignment[row] = fold
        start += size
    return FoldAssignment(k, tuple(assignment))


def rmse(predicted, actual) -> float:
    p = np.asarray(predicted, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape or p.ndim != 1:
        raise ShapeError(f"shape mismatch: {p.shape} vs {a.shape}")
    if p.size == 0:
        raise DomainError("rmse of empty vectors")
    d = p - a
    return math.sqrt(float(d @ d) / d.size)


def accuracy(predictions: Sequence, actuals: Sequence) -> float:
    if len(predictions) != len(actuals):
        raise ShapeError(f"{len(predictions)} predictions for {len(actuals)} actuals")
    if not predictions:
        raise DomainError("accuracy of zero predictions")
    correct = sum(str(p) == str(a) for p, a in zip(predictions, actuals))
    return correct / len(predictions)


@dataclass
class ConfusionMatrix:
    labels: list[str]
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        if self.total == 0:
            raise DomainError("accuracy of an empty confusion matrix")
        return int(np.trace(self.counts)) / self.total

    def row(self, actual: str) -> list[int]:
        return [int(c) for c in self.counts[self.labels.index(str(actual))]]

    def to_dict(self) -> dict:
        return {"orientation": ORIENTATION, "labels": list(self.labels),
                "counts": [[int(c) for c in row] for row in self.counts], "total": self.total}

    def to_csv(self) -> str:
        lines = ["actual\\predicted," + ",".join(self.labels)]
        for label, row in zip(self.labels, self.counts):
            lines.append(label + "," + ",".join(str(int(c)) for c in row))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max(len(l) for l in self.labels) + 2
        out = [f"confusion matrix ({ORIENTATION})",
               " " * width + "".join(f"{l:>{width}}" for l in self.labels)]
        for label, row in zip(self.labels, self.counts):
            out.append(f"{label:<{width}}" + "".join(f"{int(c):>{width}}" for c in row))
        return "\n".join(out)


def confusion(predictions: Sequence, actuals: Sequence, labels: Sequence[str] = LABELS) -> ConfusionMatrix:
    if len(predictions) != len(actuals):
        raise ShapeError(f"{len(predictions)} predictions for {len(actuals)} actuals")
    if not predictions:
        raise DomainError("confusion matrix of zero predictions")
    labels = [str(l) for l in labels]
    index = {l: i for i, l in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=int)
    for p, a in zip(predictions, actuals):
        try:
            counts[index[str(a)], index[str(p)]] += 1
        except KeyError as exc:
            raise DomainError(f"label {exc.args[0]!r} not in {labels}") from None
    return ConfusionMatrix(labels, counts)


@dataclass
class CvReport:
    """Per-fold scores; ``metric`` is ``rmse`` (regression) or ``accuracy``."""

    metric: str
    per_fold: list[float]
    cv_score: float
    hp: Hyperparams

    @property
    def per_fold_rmse(self) -> list[float]:
        if self.metric != "rmse":
            raise AttributeError("classification reports carry per-fold accuracy")
        return self.per_fold

    def to_dict(self) -> dict:
        return {"metric": self.metric, "per_fold": list(self.per_fold),
                "cv_score": self.cv_score, "hyperparams": self.hp.to_dict()}


def cv_score(per_fold: Sequence[float]) -> float:
    return sum(per_fold) / len(per_fold)


def cross_validate(X, y, hp: Hyperparams, k: int = 5, seed: int = 0, mode: str = REGRESSION,
                   class_labels: Sequence[str] | None = None, n_jobs: int | None = None) -> CvReport:
    """Fit on ``k - 1`` folds, score the held-out fold, average over folds."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=object if mode == CLASSIFICATION else float)
    folds = kfold_split(X.shape[0], k, seed).folds()
    scores = []
    for fold_id, test in enumerate(folds):
        train = np.setdiff1d(np.arange(X.shape[0]), test)
        try:
            model = fit_forest(X[train], y[train], hp, mode, class_labels=class_labels, n_jobs=n_jobs)
        except NmpoError as exc:
            raise with_context(exc, f"fold {fold_id}") from exc
        pred = model.predict(X[test])
        if mode == REGRESSION:
            scores.append(rmse(pred, y[test]))
        else:
            scores.append(accuracy(list(pred), list(y[test])))
    return CvReport("rmse" if mode == REGRESSION else "accuracy", scores, cv_score(scores), hp)


def expand_space(space: Mapping[str, Sequence]) -> list[dict]:
    """Every combination of ``space``; keys iterate in sorted order, values in
    the given order, the last key varying fastest."""
    if not space or any(len(v) == 0 for v in space.values()):
        raise ConfigError("search space must be a non-empty product")
    keys = sorted(space)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(space[k] for k in keys))]


@dataclass
class SearchResult:
    best: Hyperparams
    report: CvReport
    trials: list[CvReport] = field(default_factory=list)


def _better(mode, candidate: float, incumbent: float) -> bool:
    return candidate < incumbent if mode == REGRESSION else candidate > incumbent


def _search(points, X, y, base, k, seed, mode, class_labels, n_jobs) -> SearchResult:
    trials = []
    best = None
    for point in points:
        try:
            hp = replace(base, **point)
        except TypeError as exc:
            raise ConfigError(f"bad search point {point}: {exc}") from None
        rep = cross_validate(X, y, hp, k, seed, mode, class_labels, n_jobs)
        trials.append(rep)
        if best is None or _better(mode, rep.cv_score, best.cv_score):
            best = rep
    return SearchResult(best.hp, best, trials)


def grid_search(X, y, space: Mapping[str, Sequence], k: int = 5, seed: int = 0,
                mode: str = REGRESSION, base: Hyperparams | None = None,
                class_labels: Sequence[str] | None = None, n_jobs: int | None = None) -> SearchResult:
    """Exhaustive search: minimum CV RMSE (regression) or maximum CV accuracy
    (classification); the first point in :func:`expand_space` order wins ties."""
    return _search(expand_space(space), X, y, base or Hyperparams(), k, seed, mode,
                   class_labels, n_jobs)


def sample_space(space: Mapping[str, Sequence], n_draws: int, seed: int) -> list[dict]:
    if n_draws < 1:
        raise ConfigError("n_draws must be >= 1")
    expand_space(space)
    rng = SplitMix64(split_seed(seed, 0x5EA7C4))
    keys = sorted(space)
    return [{key: space[key][rng.below(len(space[key]))] for key in keys} for _ in range(n_draws)]


def random_search(X, y, space: Mapping[str, Sequence], n_draws: int, k: int = 5, seed: int = 0,
                  mode: str = REGRESSION, base: Hyperparams | None = None,
                  class_labels: Sequence[str] | None = None, n_jobs: int | None = None) -> SearchResult:
    """Like :func:`grid_search` over ``n_draws`` uniform draws (with replacement)."""
    return _search(sample_space(space, n_draws, seed), X, y, base or Hyperparams(), k, seed,
                   mode, class_labels, n_jobs)


# ---------------------------------------------------------------------------
# two-stage model and leave-one-application-out


@dataclass
class TwoStageModel:
    features: list[str]
    regressor: RandomForestModel
    classifier: RandomForestModel

    @property
    def classifier_features(self) -> list[str]:
        return list(self.features) + [PREDICTED_IPC]

    def predict_ipc(self, X) -> np.ndarray:
        return self.regressor.predict(X)

    def classify(self, X, ipc) -> tuple[np.ndarray, np.ndarray]:
        Z = np.column_stack([np.asarray(X, dtype=float), np.asarray(ipc, dtype=float)])
        return self.classifier.predict(Z), self.classifier.predict_proba(Z)

    def predict(self, X):
        ipc = self.predict_ipc(X)
        labels, proba = self.classify(X, ipc)
        return ipc, labels, proba


def fit_two_stage(records: Sequence[RunRecord], features: Sequence[str], reg_hp: Hyperparams,
                  clf_hp: Hyperparams, n_jobs: int | None = None) -> TwoStageModel:
    """Stage 1 regresses NMC IPC from host features; stage 2 classifies the
    offload label from host features plus the true IPC."""
    if not features:
        raise SchemaError("two-stage model needs at least one host feature")
    m = build_matrix(records, features)
    ipc = np.array([r.derived.nmc_ipc for r in records], dtype=float)
    labels = [str(r.label) for r in records]
    reg = fit_forest(m.values, ipc, reg_hp, REGRESSION, feature_names=features,
                     row_ids=m.row_ids, n_jobs=n_jobs)
    clf = fit_forest(np.column_stack([m.values, ipc]), labels, clf_hp, CLASSIFICATION,
                     feature_names=list(features) + [PREDICTED_IPC], class_labels=LABELS,
                     row_ids=m.row_ids, n_jobs=n_jobs)
    return TwoStageModel(list(features), reg, clf)


@dataclass
class LoaoResult:
    app: str
    run_ids: list[str]
    actual: list[str]
    predicted: list[str]
    probabilities: list[dict[str, float]]
    predicted_ipc: list[float]
    actual_ipc: list[float]
    train_row_ids: list[str]
    model: TwoStageModel = field(repr=False)

    @property
    def accuracy(self) -> float:
        return accuracy(self.predicted, self.actual)

    @property
    def confusion(self) -> ConfusionMatrix:
        return confusion(self.predicted, self.actual)


def labeled(records: Sequence[RunRecord]) -> list[RunRecord]:
    return [r for r in records if r.label is not None and r.derived is not None]


def leave_one_app_out(records: Sequence[RunRecord], app: str, features: Sequence[str],
                      reg_hp: Hyperparams, clf_hp: Hyperparams,
                      n_jobs: int | None = None) -> LoaoResult:
    """Train on every labeled record of the other applications, test on ``app``."""
    data = labeled(records)
    test = [r for r in data if r.spec.app == app]
    if not any(r.spec.app == app for r in records):
        raise SchemaError(f"application {app!r} not in corpus", [app])
    if not test:
        raise CorpusError(f"application {app!r} has no labeled records to evaluate")
    train = [r for r in data if r.spec.app != app]
    if not train:
        raise CorpusError(f"no labeled records outside {app!r} to train on")
    model = fit_two_stage(train, features, reg_hp, clf_hp, n_jobs)
    X = build_matrix(test, features).values
    ipc, labels, proba = model.predict(X)
    return LoaoResult(
        app=app,
        run_ids=[r.spec.run_id for r in test],
        actual=[str(r.label) for r in test],
        predicted=[str(l) for l in labels],
        probabilities=[dict(zip(LABELS, map(float, p))) for p in proba],
        predicted_ipc=[float(v) for v in ipc],
        actual_ipc=[r.derived.nmc_ipc for r in test],
        train_row_ids=[r.spec.run_id for r in train],
        model=model,
    )


@dataclass
class LoaoSummary:
    results: list[LoaoResult]

    @property
    def per_app_accuracy(self) -> dict[str, float]:
        return {r.app: r.accuracy for r in self.results}

    @property
    def mean_app_accuracy(self) -> float:
        acc = list(self.per_app_accuracy.values())
        return sum(acc) / len(acc)

    @property
    def pooled_accuracy(self) -> float:
        return self.confusion.accuracy

    @property
    def confusion(self) -> ConfusionMatrix:
        pred = [p for r in self.results for p in r.predicted]
        act = [a for r in self.results for a in r.actual]
        return confusion(pred, act)

    def rows(self) -> list[dict]:
        out = []
        for r in self.results:
            for i, run in enumerate(r.run_ids):
                row = {"app": r.app, "run": run, "actual": r.actual[i], "predicted": r.predicted[i],
                       "actual_ipc": r.actual_ipc[i], "predicted_ipc": r.predicted_ipc[i]}
                row.update({f"p_{l}": r.probabilities[i][l] for l in LABELS})
                out.append(row)
        return out


def evaluate_all_apps(records: Sequence[RunRecord], features: Sequence[str], reg_hp: Hyperparams,
                      clf_hp: Hyperparams, apps: Sequence[str] | None = None,
                      n_jobs: int | None = None) -> LoaoSummary:
    data = labeled(records)
    if apps is None:
        apps = sorted({r.spec.app for r in data})
    return LoaoSummary([leave_one_app_out(records, a, features, reg_hp, clf_hp, n_jobs) for a in apps])
