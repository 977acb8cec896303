"""CART decision trees and random forests, written from scratch.

Trees split greedily on midpoints between consecutive distinct values of a
feature: rows with ``x <= threshold`` go left. The split criterion is the
summed squared error of the two children (regression) or their
size-weighted Gini impurity (classification). Among splits whose criterion
is within a relative 1e-10 of the best, the lowest feature index wins and
then the lowest threshold.

At every node a random subset of ``max_features`` features is examined,
drawn without replacement. Features that are constant within the node are
skipped and do not count towards the subset, so a node only becomes a leaf
for lack of candidates when every feature is constant there.

Randomness comes from :mod:`nmpo.rng`. Tree ``i`` of a forest is driven
entirely by ``split_seed(hp.seed, i)``, so the forest does not depend on the
order or the thread in which trees are built.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, FitError, IntegrityError, ShapeError, VersionError
from .rng import SplitMix64, split_seed

REGRESSION = "regression"
CLASSIFICATION = "classification"
MODES = (REGRESSION, CLASSIFICATION)
FOREST_FORMAT = "nmpo-forest"
FOREST_VERSION = 1
TIE_RTOL = 1e-10


@dataclass(frozen=True)
class Hyperparams:
    n_estimators: int = 100
    max_features: Any = None  # "sqrt", "third", "all", an int, or None for the mode default
    max_depth: Optional[int] = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.n_estimators, int) or self.n_estimators < 1:
            raise ConfigError(f"n_estimators must be a positive integer, got {self.n_estimators!r}")
        mf = self.max_features
        if not (mf is None or mf in ("sqrt", "third", "all")
                or (isinstance(mf, int) and not isinstance(mf, bool) and mf >= 1)):
            raise ConfigError(f"invalid max_features {mf!r}")
        if self.max_depth is not None and (not isinstance(self.max_depth, int) or self.max_depth < 1):
            raise ConfigError(f"max_depth must be a positive integer or None, got {self.max_depth!r}")
        if not isinstance(self.min_samples_split, int) or self.min_samples_split < 2:
            raise ConfigError("min_samples_split must be an integer >= 2")
        if not isinstance(self.min_samples_leaf, int) or self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf must be an integer >= 1")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an integer in [0, 2**64)")

    def n_split_features(self, n_features: int, mode: str) -> int:
        mf = self.max_features
        if mf is None:
            mf = "sqrt" if mode == CLASSIFICATION else "third"
        if mf == "all":
            k = n_features
        elif mf == "sqrt":
            k = int(math.sqrt(n_features))
        elif mf == "third":
            k = n_features // 3
        else:
            k = mf
        return max(1, min(n_features, k))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown hyper-parameter(s): {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass
class DecisionTree:
    """Node arrays; node 0 is the root and ``feature[i] == -1`` marks a leaf."""

    mode: str
    n_features: int
    feature: list[int] = field(default_factory=list)
    threshold: list[Optional[float]] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[Any] = field(default_factory=list)
    n_samples: list[int] = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def depth(self) -> int:
        best = 0
        stack = [(0, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if not self.is_leaf(node):
                stack.append((self.left[node], d + 1))
                stack.append((self.right[node], d + 1))
        return best

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = np.asarray(X, dtype=float)
        feat = np.asarray(self.feature)
        thr = np.array([0.0 if t is None else t for t in self.threshold])
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        node = np.zeros(X.shape[0], dtype=int)
        rows = np.arange(X.shape[0])
        active = feat[node] >= 0
        while active.any():
            n = node[active]
            go_left = X[rows[active], feat[n]] <= thr[n]
            node[active] = np.where(go_left, left[n], right[n])
            active = feat[node] >= 0
        return node

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        leaves = self.apply(X)
        return np.array([self.value[i] for i in leaves], dtype=float)

    def predict_vote(self, X: np.ndarray) -> np.ndarray:
        """Class index voted by the tree; ties go to the lowest index."""
        leaves = self.apply(X)
        return np.array([int(np.argmax(self.value[i])) for i in leaves], dtype=int)

    def to_dict(self) -> dict:
        return {
            "feature": list(self.feature),
            "threshold": list(self.threshold),
            "left": list(self.left),
            "right": list(self.right),
            "value": list(self.value),
            "n_samples": list(self.n_samples),
        }


def _midpoints(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    mid = (lo + hi) / 2.0
    # adjacent floats: the midpoint may round up to hi, which would send hi left
    return np.where(mid >= hi, lo, mid)


def _split_criteria(x: np.ndarray, y: np.ndarray, mode: str, n_classes: int, min_leaf: int):
    """Criterion and threshold of every admissible split of one feature."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order]
    n = xs.size
    pos = np.nonzero(xs[1:] > xs[:-1])[0] + 1
    pos = pos[(pos >= min_leaf) & (n - pos >= min_leaf)]
    if pos.size == 0:
        return None
    nl = pos.astype(float)
    nr = n - nl
    if mode == REGRESSION:
        c = ys - ys.mean()
        s1 = np.cumsum(c)
        s2 = np.cumsum(c * c)
        l1, l2 = s1[pos - 1], s2[pos - 1]
        r1, r2 = s1[-1] - l1, s2[-1] - l2
        crit = (l2 - l1 * l1 / nl) + (r2 - r1 * r1 / nr)
    else:
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), ys] = 1.0
        cum = np.cumsum(onehot, axis=0)
        L = cum[pos - 1]
        R = cum[-1] - L
        crit = (nl - (L * L).sum(axis=1) / nl) + (nr - (R * R).sum(axis=1) / nr)
    return crit, _midpoints(xs[pos - 1], xs[pos])


def node_impurity(y: np.ndarray, mode: str, n_classes: int) -> float:
    """Node impurity on the same scale as the split criterion."""
    if mode == REGRESSION:
        c = y - y.mean()
        return float(c @ c)
    counts = np.bincount(y, minlength=n_classes).astype(float)
    n = counts.sum()
    return float(n - (counts @ counts) / n)


def fit_tree(X, y, hp: Hyperparams, rng: SplitMix64, mode: str = REGRESSION,
             n_classes: int | None = None) -> DecisionTree:
    """Grow one CART tree.

    For classification ``y`` holds integer class indices in ``[0, n_classes)``
    and leaves store per-class counts; for regression leaves store the mean.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise FitError("cannot fit a tree on zero rows")
    if mode == CLASSIFICATION:
        y = np.asarray(y, dtype=int)
        if n_classes is None:
            n_classes = int(y.max()) + 1
        if y.min() < 0 or y.max() >= n_classes:
            raise DataError("class index out of range")
    else:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise DataError("regression targets must be finite")
        n_classes = 0
    if y.shape != (X.shape[0],):
        raise ShapeError(f"{y.shape[0] if y.ndim else 0} targets for {X.shape[0]} rows")
    if not np.all(np.isfinite(X)):
        raise DataError("feature values must be finite")

    p = X.shape[1]
    k = hp.n_split_features(p, mode)
    tree = DecisionTree(mode=mode, n_features=p)

    def new_node(idx):
        tree.feature.append(-1)
        tree.threshold.append(None)
        tree.left.append(-1)
        tree.right.append(-1)
        ys = y[idx]
        if mode == REGRESSION:
            tree.value.append(float(ys.mean()))
        else:
            tree.value.append([int(c) for c in np.bincount(ys, minlength=n_classes)])
        tree.n_samples.append(int(idx.size))
        return len(tree.feature) - 1

    root = new_node(np.arange(X.shape[0]))
    stack = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if idx.size < hp.min_samples_split:
            continue
        if hp.max_depth is not None and depth >= hp.max_depth:
            continue
        ys = y[idx]
        parent = node_impurity(ys, mode, n_classes)
        if parent <= 0.0 or (mode == REGRESSION and np.all(ys == ys[0])):
            continue

        order = list(range(p))
        evaluated = {}
        visited = 0
        i = 0
        while i < p and visited < k:
            j = i + rng.below(p - i)
            order[i], order[j] = order[j], order[i]
            f = order[i]
            i += 1
            xf = X[idx, f]
            if xf.min() == xf.max():
                continue
            visited += 1
            res = _split_criteria(xf, ys, mode, n_classes, hp.min_samples_leaf)
            if res is not None:
                evaluated[f] = res
        if not evaluated:
            continue

        best = min(float(c.min()) for c, _ in evaluated.values())
        tol = TIE_RTOL * max(parent, 1e-300)
        for f in sorted(evaluated):
            crit, thr = evaluated[f]
            hits = np.nonzero(crit <= best + tol)[0]
            if hits.size:
                threshold = float(thr[hits[0]])
                break
        go_left = X[idx, f] <= threshold
        li, ri = idx[go_left], idx[~go_left]
        tree.feature[node] = f
        tree.threshold[node] = threshold
        tree.left[node] = new_node(li)
        tree.right[node] = new_node(ri)
        stack.append((tree.right[node], ri, depth + 1))
        stack.append((tree.left[node], li, depth + 1))
    return tree


def default_jobs() -> int:
    """Worker count from ``NMPO_THREADS`` (unset or 0 means one per CPU)."""
    raw = os.environ.get("NMPO_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"NMPO_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError("NMPO_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


@dataclass
class RandomForestModel:
    trees: list[DecisionTree]
    hp: Hyperparams
    mode: str
    per_tree_seeds: list[int]
    n_features: int
    feature_names: list[str] = field(default_factory=list)
    class_labels: list[str] = field(default_factory=list)
    # bootstrap row ids per tree; kept in memory only
    inbag: list[list] = field(default_factory=list, repr=False, compare=False)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(f"expected {self.n_features} features, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise DataError("feature values must be finite")
        return X

    def tree_values(self, X) -> np.ndarray:
        """Per-tree regression outputs, shape (n_trees, n_rows)."""
        X = self._check(X)
        return np.stack([t.predict_value(X) for t in self.trees])

    def predict(self, X) -> np.ndarray:
        if self.mode == REGRESSION:
            return self.tree_values(X).mean(axis=0)
        votes = self.vote_counts(X)
        return np.array([self.class_labels[i] for i in np.argmax(votes, axis=1)], dtype=object)

    def vote_counts(self, X) -> np.ndarray:
        """Number of trees voting each class, shape (n_rows, n_classes)."""
        if self.mode != CLASSIFICATION:
            raise ConfigError("vote counts need a classification forest")
        X = self._check(X)
        votes = np.zeros((X.shape[0], len(self.class_labels)), dtype=int)
        rows = np.arange(X.shape[0])
        for t in self.trees:
            votes[rows, t.predict_vote(X)] += 1
        return votes

    def predict_proba(self, X) -> np.ndarray:
        return self.vote_counts(X) / len(self.trees)

    def to_dict(self) -> dict:
        return {
            "format": FOREST_FORMAT,
            "version": FOREST_VERSION,
            "mode": self.mode,
            "hyperparams": self.hp.to_dict(),
            "per_tree_seeds": list(self.per_tree_seeds),
            "n_features": self.n_features,
            "feature_names": list(self.feature_names),
            "class_labels": list(self.class_labels),
            "trees": [t.to_dict() for t in self.trees],
        }

    def dumps(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict, where: str = "model") -> "RandomForestModel":
        return forest_from_dict(d, where)


def fit_forest(X, y, hp: Hyperparams, mode: str = REGRESSION, *,
               feature_names: Sequence[str] | None = None,
               class_labels: Sequence[str] | None = None,
               row_ids: Sequence | None = None,
               n_jobs: int | None = None) -> RandomForestModel:
    """Fit ``hp.n_estimators`` trees, each on a bootstrap resample when enabled.

    ``class_labels`` fixes the class order for classification; it doubles as
    the tie-break priority (earlier wins). ``row_ids`` tags rows so the
    bootstrap membership of every tree can be audited through ``model.inbag``.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise FitError("cannot fit a forest on an empty matrix")
    n, p = X.shape
    if feature_names is not None and len(feature_names) != p:
        raise ShapeError(f"{len(feature_names)} feature names for {p} columns")
    if row_ids is not None and len(row_ids) != n:
        raise ShapeError(f"{len(row_ids)} row ids for {n} rows")
    if mode == CLASSIFICATION:
        raw = [str(v) for v in y]
        labels = list(class_labels) if class_labels is not None else sorted(set(raw))
        labels = [str(c) for c in labels]
        index = {c: i for i, c in enumerate(labels)}
        try:
            yy = np.array([index[v] for v in raw], dtype=int)
        except KeyError as exc:
            raise DataError(f"label {exc.args[0]!r} not among class labels {labels}") from None
    else:
        labels = []
        yy = np.asarray(y, dtype=float)
    if yy.shape != (n,):
        raise ShapeError(f"{len(yy)} targets for {n} rows")

    seeds = [split_seed(hp.seed, i) for i in range(hp.n_estimators)]

    def grow(i):
        rng = SplitMix64(seeds[i])
        if hp.bootstrap:
            idx = np.array([rng.below(n) for _ in range(n)], dtype=int)
        else:
            idx = np.arange(n)
        tree = fit_tree(X[idx], yy[idx], hp, rng, mode, len(labels) or None)
        return tree, idx

    jobs = default_jobs() if n_jobs is None else max(1, n_jobs)
    if jobs == 1 or hp.n_estimators == 1:
        results = [grow(i) for i in range(hp.n_estimators)]
    else:
        with ThreadPoolExecutor(max_workers=min(jobs, hp.n_estimators)) as pool:
            results = list(pool.map(grow, range(hp.n_estimators)))

    ids = list(row_ids) if row_ids is not None else list(range(n))
    return RandomForestModel(
        trees=[t for t, _ in results],
        hp=hp,
        mode=mode,
        per_tree_seeds=seeds,
        n_features=p,
        feature_names=list(feature_names) if feature_names is not None else [],
        class_labels=labels,
        inbag=[[ids[j] for j in idx] for _, idx in results],
    )


def canonical_json(obj) -> str:
    """Deterministic JSON text (sorted keys, no whitespace, no NaN)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _expect(cond, where, msg):
    if not cond:
        raise IntegrityError(f"{where}: {msg}")


def _tree_from_dict(d, mode, n_features, n_classes, where) -> DecisionTree:
    _expect(isinstance(d, dict), where, "tree must be an object")
    keys = ("feature", "threshold", "left", "right", "value", "n_samples")
    for k in keys:
        _expect(isinstance(d.get(k), list), where, f"missing node array {k!r}")
    m = len(d["feature"])
    _expect(m >= 1, where, "tree has no nodes")
    _expect(all(len(d[k]) == m for k in keys), where, "node arrays differ in length")
    for i in range(m):
        f, t, l, r, v = (d[k][i] for k in keys[:5])
        loc = f"{where}.node[{i}]"
        _expect(isinstance(f, int) and f < n_features, loc, f"bad feature index {f!r}")
        if f < 0:
            _expect(l == -1 and r == -1 and t is None, loc, "leaf with children or threshold")
        else:
            _expect(isinstance(t, (int, float)) and math.isfinite(t), loc, "bad threshold")
            _expect(isinstance(l, int) and isinstance(r, int) and i < l < m and i < r < m,
                    loc, "child index out of range")
        if mode == REGRESSION:
            _expect(isinstance(v, (int, float)) and math.isfinite(v), loc, "bad leaf value")
        else:
            _expect(isinstance(v, list) and len(v) == n_classes
                    and all(isinstance(c, int) and c >= 0 for c in v), loc, "bad class counts")
    return DecisionTree(
        mode=mode, n_features=n_features,
        feature=list(d["feature"]),
        threshold=[None if t is None else float(t) for t in d["threshold"]],
        left=list(d["left"]), right=list(d["right"]),
        value=[float(v) for v in d["value"]] if mode == REGRESSION else [list(v) for v in d["value"]],
        n_samples=list(d["n_samples"]),
    )


def forest_from_dict(d: dict, where: str = "model") -> RandomForestModel:
    _expect(isinstance(d, dict), where, "model must be an object")
    if d.get("format") != FOREST_FORMAT:
        raise IntegrityError(f"{where}: not a forest document")
    if d.get("version") != FOREST_VERSION:
        raise VersionError(f"{where}: unsupported forest version {d.get('version')!r}")
    mode = d.get("mode")
    _expect(mode in MODES, where, f"unknown mode {mode!r}")
    try:
        hp = Hyperparams.from_dict(d.get("hyperparams") or {})
    except (ConfigError, TypeError) as exc:
        raise IntegrityError(f"{where}.hyperparams: {exc}") from None
    n_features = d.get("n_features")
    _expect(isinstance(n_features, int) and n_features >= 1, where, "bad n_features")
    labels = d.get("class_labels", [])
    _expect(isinstance(labels, list), where, "bad class_labels")
    if mode == CLASSIFICATION:
        _expect(len(labels) >= 1, where, "classification model without class labels")
    trees_raw = d.get("trees")
    _expect(isinstance(trees_raw, list), where, "missing trees")
    _expect(len(trees_raw) == hp.n_estimators, where,
            f"{len(trees_raw)} trees but n_estimators = {hp.n_estimators}")
    seeds = d.get("per_tree_seeds")
    _expect(isinstance(seeds, list) and len(seeds) == hp.n_estimators, where, "bad per_tree_seeds")
    _expect(len(set(seeds)) == len(seeds), where, "per-tree seeds are not distinct")
    names = d.get("feature_names", [])
    _expect(isinstance(names, list) and (not names or len(names) == n_features), where,
            "feature_names length mismatch")
    trees = [_tree_from_dict(t, mode, n_features, len(labels), f"{where}.trees[{i}]")
             for i, t in enumerate(trees_raw)]
    return RandomForestModel(trees=trees, hp=hp, mode=mode, per_tree_seeds=list(seeds),
                             n_features=n_features, feature_names=list(names),
                             class_labels=list(labels))


def loads_forest(text: str) -> RandomForestModel:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"model: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return forest_from_dict(d)


def predict_regression(model: RandomForestModel, row) -> float:
    if model.mode != REGRESSION:
        raise ConfigError("predict_regression needs a regression forest")
    return float(model.predict(row)[0])


def predict_proba(model: RandomForestModel, row) -> dict[str, float]:
    votes = model.vote_counts(row)[0]
    n = len(model.trees)
    return {c: int(v) / n for c, v in zip(model.class_labels, votes)}


def predict_class(model: RandomForestModel, row) -> str:
    votes = model.vote_counts(row)[0]
    return model.class_labels[int(np.argmax(votes))]
