import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nmpo.errors import ConfigError, CorpusError, DomainError, SchemaError, ShapeError
from nmpo.evaluation import (
    LABELS,
    ORIENTATION,
    accuracy,
    confusion,
    cross_validate,
    cv_score,
    evaluate_all_apps,
    expand_space,
    grid_search,
    kfold_split,
    leave_one_app_out,
    random_search,
    rmse,
    sample_space,
)
from nmpo.forest import CLASSIFICATION, Hyperparams, fit_forest
from nmpo.metrics import HOST_FEATURES

from . import oracles

MEMORIZE = Hyperparams(n_estimators=1, bootstrap=False, max_features="all")


def test_kfold_examples():
    a = kfold_split(10, 5, seed=1)
    folds = a.folds()
    assert [len(f) for f in folds] == [2] * 5
    assert sorted(np.concatenate(folds).tolist()) == list(range(10))
    assert sorted(len(f) for f in kfold_split(10, 3).folds()) == [3, 3, 4]
    assert kfold_split(10, 3, 9) == kfold_split(10, 3, 9)


@given(st.integers(2, 60), st.integers(2, 60), st.integers(0, 2 ** 64 - 1))
def test_kfold_partition_property(n, k, seed):
    if k > n:
        with pytest.raises(ConfigError):
            kfold_split(n, k, seed)
        return
    folds = kfold_split(n, k, seed).folds()
    sizes = [len(f) for f in folds]
    assert sizes == oracles.kfold_sizes(n, k)
    assert sorted(np.concatenate(folds).tolist()) == list(range(n))


def test_kfold_errors():
    with pytest.raises(ConfigError):
        kfold_split(5, 1)
    with pytest.raises(ConfigError):
        kfold_split(3, 4)


def test_rmse_examples():
    assert rmse([1, 2, 3], [1, 2, 3]) == 0.0
    assert rmse([1, 3], [2, 2]) == 1.0
    assert rmse([0, 0, 0], [3, 0, 0]) == pytest.approx(3 ** 0.5, rel=1e-15)
    with pytest.raises(ShapeError):
        rmse([1, 2], [1])
    with pytest.raises(DomainError):
        rmse([], [])


@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)), min_size=1, max_size=30))
def test_rmse_matches_oracle(pairs):
    p, a = zip(*pairs)
    assert rmse(p, a) == pytest.approx(oracles.rmse(p, a), rel=1e-9, abs=1e-9)


def test_cv_score_mean():
    assert cv_score([1.0, 2.0, 3.0]) == 2.0


def test_cv_report_score_is_exact_mean():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(23, 2))
    rep = cross_validate(X, rng.normal(size=23), Hyperparams(n_estimators=3), k=4, seed=2)
    assert len(rep.per_fold_rmse) == 4
    assert rep.cv_score == sum(rep.per_fold_rmse) / 4


def test_constant_target_zero_cv():
    X = np.arange(12.0).reshape(-1, 1)
    assert cross_validate(X, [4.2] * 12, MEMORIZE, k=3).cv_score == 0.0


def test_leave_one_out_matches_nearest_leaf_oracle():
    x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    y = [2 * v + 1 for v in x]
    rep = cross_validate(np.array(x)[:, None], y, MEMORIZE, k=6, seed=4)
    folds = kfold_split(6, 6, 4).folds()
    want = []
    for test in folds:
        i = int(test[0])
        others = [j for j in range(6) if j != i]
        # memorizing tree with midpoint thresholds: nearest training x, ties to the left (lower x)
        nearest = min(others, key=lambda j: (abs(x[j] - x[i]), x[j]))
        want.append(abs(y[nearest] - y[i]))
    assert rep.per_fold_rmse == pytest.approx(want, rel=1e-12)


def test_cross_validate_error_names_fold():
    X = np.arange(6.0).reshape(-1, 1)
    y = ["yes", "no", "yes", "oops", "no", "yes"]
    with pytest.raises(Exception, match="fold"):
        cross_validate(X, y, MEMORIZE, k=3, mode=CLASSIFICATION, class_labels=LABELS)


def _nonlinear(n=40, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-3, 3, size=(n, 2))
    return X, np.sin(2 * X[:, 0]) + (X[:, 1] > 0)


def test_expand_space_order():
    pts = expand_space({"b": [1, 2], "a": ["x", "y"]})
    assert pts == [{"a": "x", "b": 1}, {"a": "x", "b": 2}, {"a": "y", "b": 1}, {"a": "y", "b": 2}]
    assert pts == oracles.grid_points({"b": [1, 2], "a": ["x", "y"]})


def test_grid_single_point():
    X, y = _nonlinear()
    res = grid_search(X, y, {"max_depth": [3]}, k=4, base=Hyperparams(n_estimators=3))
    assert res.best.max_depth == 3 and len(res.trials) == 1


def test_grid_prefers_memorizer_on_constant_pieces():
    X = np.repeat(np.arange(5.0), 4)[:, None]
    y = np.repeat([0.0, 5.0, 1.0, 7.0, 2.0], 4)
    res = grid_search(X, y, {"max_depth": [1, None]}, k=4, base=MEMORIZE)
    assert res.best.max_depth is None
    assert res.report.cv_score == 0.0


def test_grid_equals_brute_force_min():
    X, y = _nonlinear(seed=3)
    space = {"max_depth": [1, None], "min_samples_leaf": [1, 4]}
    base = Hyperparams(n_estimators=5, seed=9)
    res = grid_search(X, y, space, k=5, seed=1, base=base)
    scores = []
    for point in oracles.grid_points(space):
        hp = Hyperparams(**{**base.to_dict(), **point})
        scores.append((cross_validate(X, y, hp, 5, 1).cv_score, point))
    best = min(s for s, _ in scores)
    first = next(p for s, p in scores if s == best)
    assert res.report.cv_score == best
    assert {"max_depth": res.best.max_depth, "min_samples_leaf": res.best.min_samples_leaf} == first


def test_grid_classification_maximizes_accuracy():
    X = np.repeat(np.arange(6.0), 3)[:, None]
    y = [LABELS[i % 3] for i in range(6) for _ in range(3)]
    res = grid_search(X, y, {"max_depth": [1, None]}, k=3, mode=CLASSIFICATION, base=MEMORIZE,
                      class_labels=LABELS)
    assert res.best.max_depth is None and res.report.cv_score == 1.0


def test_grid_tie_first_point_wins():
    X = np.arange(10.0)[:, None]
    res = grid_search(X, [1.0] * 10, {"min_samples_leaf": [2, 1]}, k=2, base=MEMORIZE)
    assert res.best.min_samples_leaf == 2


def test_empty_space_is_config_error():
    with pytest.raises(ConfigError):
        grid_search(np.zeros((4, 1)), [0.0] * 4, {"max_depth": []}, k=2)


def test_random_search_draws():
    space = {"max_depth": [1, 2, 3], "min_samples_leaf": [1, 2]}
    assert sample_space(space, 5, 3) == sample_space(space, 5, 3)
    X, y = _nonlinear()
    res = random_search(X, y, space, n_draws=1, k=3, base=Hyperparams(n_estimators=2))
    assert len(res.trials) == 1
    with pytest.raises(ConfigError):
        sample_space(space, 0, 1)


def test_grid_is_never_beaten_by_random_search():
    X, y = _nonlinear(30, seed=5)
    space = {"max_depth": [1, 3], "min_samples_leaf": [1, 5]}
    base = Hyperparams(n_estimators=3, seed=1)
    for seed in range(20):
        # same seed, same folds: only the visited points differ
        grid = grid_search(X, y, space, k=3, seed=seed, base=base)
        rnd = random_search(X, y, space, n_draws=4, k=3, seed=seed, base=base)
        assert grid.report.cv_score <= rnd.report.cv_score
        drawn = {tuple(sorted(p.items())) for p in sample_space(space, 4, seed)}
        if len(drawn) == 4:
            assert rnd.report.cv_score == grid.report.cv_score


def test_accuracy_examples():
    assert accuracy(["yes"] * 8 + ["no"] * 2, ["yes"] * 10) == 0.8
    assert accuracy(["no", "yes"], ["no", "yes"]) == 1.0
    with pytest.raises(DomainError):
        accuracy([], [])


def test_confusion_fig8_row():
    cm = confusion(["yes"] * 8 + ["maybe"], ["yes"] * 9)
    assert cm.row("yes") == [8, 1, 0]
    assert cm.total == 9
    assert ORIENTATION in cm.to_text()
    assert cm.to_csv().splitlines()[1] == "yes,8,1,0"


def test_confusion_perfect_is_diagonal():
    labels = ["yes", "maybe", "no", "no"]
    cm = confusion(labels, labels)
    assert np.array_equal(cm.counts, np.diag([1, 1, 2]))


def test_confusion_rejects_unknown_label():
    with pytest.raises(DomainError):
        confusion(["sure"], ["yes"])


def test_accuracy_equals_trace_over_total_random_pairings():
    rng = random.Random(0)
    for _ in range(1000):
        n = rng.randint(1, 30)
        p = [rng.choice(LABELS) for _ in range(n)]
        a = [rng.choice(LABELS) for _ in range(n)]
        cm = confusion(p, a)
        assert cm.total == n
        assert accuracy(p, a) == int(np.trace(cm.counts)) / cm.total


FEATS = ["host_flop_per_byte", "host_gflops_per_s"]
SMALL = Hyperparams(n_estimators=5, seed=1)


def test_loao_two_apps_trains_on_other(small_corpus):
    from nmpo.ingest import load_corpus
    from nmpo.metrics import annotate
    recs = [r for r in annotate(load_corpus(small_corpus.manifest)) if r.spec.app in ("app01", "app02")]
    res = leave_one_app_out(recs, "app01", FEATS, SMALL, SMALL)
    assert all(rid.startswith("app02/") for rid in res.train_row_ids)
    assert all(rid.startswith("app01/") for rid in res.run_ids)


def test_loao_never_bootstraps_held_out_rows(synth_records):
    res = leave_one_app_out(synth_records, "app05", list(HOST_FEATURES), SMALL, SMALL)
    for forest in (res.model.regressor, res.model.classifier):
        for bag in forest.inbag:
            assert not any(rid.startswith("app05/") for rid in bag)


def test_loao_errors(synth_records):
    with pytest.raises(SchemaError):
        leave_one_app_out(synth_records, "nope", FEATS, SMALL, SMALL)
    only = [r for r in synth_records if r.spec.app == "app01"]
    with pytest.raises(CorpusError):
        leave_one_app_out(only, "app01", FEATS, SMALL, SMALL)


def test_loao_summary_aggregations(small_corpus):
    from nmpo.ingest import load_corpus
    from nmpo.metrics import annotate
    recs = annotate(load_corpus(small_corpus.manifest))
    summary = evaluate_all_apps(recs, FEATS, SMALL, SMALL)
    per_app = {}
    hits = []
    for row in summary.rows():
        ok = row["actual"] == row["predicted"]
        per_app.setdefault(row["app"], []).append(ok)
        hits.append(ok)
    assert summary.per_app_accuracy == {a: sum(v) / len(v) for a, v in per_app.items()}
    assert summary.mean_app_accuracy == pytest.approx(sum(sum(v) / len(v) for v in per_app.values()) / 3)
    assert summary.pooled_accuracy == sum(hits) / len(hits)
    for row in summary.rows():
        assert sum(row[f"p_{l}"] for l in LABELS) == pytest.approx(1.0)


def test_fit_forest_provenance_tags():
    m = fit_forest(np.arange(8.0)[:, None], np.arange(8.0), Hyperparams(n_estimators=3),
                   row_ids=[f"r{i}" for i in range(8)])
    assert all(len(bag) == 8 and set(bag) <= {f"r{i}" for i in range(8)} for bag in m.inbag)
