import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmpo.errors import DegenerateVarianceError, DomainError, SampleSizeError, SchemaError, ShapeError
from nmpo.stats import (
    DEFAULT_LEAKAGE,
    CorrelationMatrix,
    FeatureMatrix,
    correlation_matrix,
    pearson,
    select_features,
)

from . import oracles


def test_pearson_examples():
    assert pearson([1, 2, 3], [2, 4, 6]) == 1.0
    assert pearson([1, 2, 3], [3, 2, 1]) == -1.0
    # cov-sum 4 over dev-norms sqrt(5)*sqrt(5)
    cov, d2 = oracles.pearson_exact([1, 2, 3, 4], [1, 3, 2, 4])
    assert (cov, d2) == (4, 25)
    assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, rel=1e-15)


def test_pearson_errors():
    with pytest.raises(ShapeError):
        pearson([1, 2], [1, 2, 3])
    with pytest.raises(DegenerateVarianceError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(SampleSizeError):
        pearson([1], [2])


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=3, max_size=20))
def test_pearson_matches_exact_oracle(pairs):
    x, y = zip(*pairs)
    if len(set(x)) < 2 or len(set(y)) < 2:
        return
    assert pearson(x, y) == pytest.approx(oracles.pearson(x, y), rel=1e-12, abs=1e-12)


def _matrix(cols: dict):
    names = list(cols)
    return FeatureMatrix(names, np.column_stack([cols[n] for n in names]))


def test_correlation_matrix_identical_columns_and_symmetry():
    rng = np.random.default_rng(1)
    a = rng.normal(size=30)
    cm = correlation_matrix(_matrix({"a": a, "b": a.copy(), "c": rng.normal(size=30)}))
    assert cm.get("a", "b") == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(cm.r, cm.r.T, atol=1e-12)
    assert np.all(np.diag(cm.r) == 1.0)


def test_correlation_constant_column_undefined_not_fatal():
    cm = correlation_matrix(_matrix({"a": [1.0, 2, 3], "t": [8.0, 8, 8]}))
    assert cm.undefined == ["t"]
    assert cm.get("a", "t") == 0.0 and cm.get("t", "t") == 0.0


def test_correlation_needs_two_rows():
    with pytest.raises(SampleSizeError):
        correlation_matrix(_matrix({"a": [1.0]}))


def test_correlation_csv_has_all_entries():
    cm = correlation_matrix(_matrix({"a": [1.0, 2, 3], "b": [2.0, 1, 5]}))
    lines = cm.to_csv().strip().splitlines()
    assert lines[0] == "feature,a,b"
    assert len(lines) == 3 and all(len(l.split(",")) == 3 for l in lines)


def test_ipc_has_strongest_correlation_with_speedup():
    # 11-feature corpus with ipc an affine image of speedup plus small noise
    rng = np.random.default_rng(7)
    s = rng.uniform(0.3, 3.2, size=60)
    cols = {f"h{i}": rng.normal(size=60) + 0.3 * i * s for i in range(6)}
    cols.update(nmc_ipc=0.05 + 0.3 * s + rng.normal(0, 0.01, 60),
                nmc_total_time_ns=rng.normal(size=60), nmc_trace_energy_pj=rng.normal(size=60),
                nmc_edp_js=rng.normal(size=60) - 0.2 * s, edp_speedup=s)
    cm = correlation_matrix(_matrix(cols))
    k = cm.index("edp_speedup")
    row = [(abs(cm.r[k, j]), cm.names[j]) for j in range(len(cm.names)) if j != k]
    assert max(row)[1] == "nmc_ipc"


def _cm(r_to_target: dict):
    names = list(r_to_target) + ["target"]
    r = np.eye(len(names))
    for i, n in enumerate(r_to_target):
        r[i, -1] = r[-1, i] = r_to_target[n]
    return CorrelationMatrix(names, r)


def test_select_features_example():
    cm = _cm({"A": 0.9, "B": 0.4, "C": 0.7})
    assert select_features(cm, "target", 0.5, exclude=()) == ["A", "C"]


def test_select_features_against_filter_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        vals = {f"f{i}": float(rng.uniform(-1, 1)) for i in range(8)}
        t = float(rng.uniform(0, 1))
        want = sorted((n for n, v in vals.items() if abs(v) >= t), key=lambda n: (-abs(vals[n]), n))
        assert select_features(_cm(vals), "target", t, exclude=()) == want


def test_select_features_threshold_extremes():
    cm = _cm({"A": 0.9, "nmc_ipc": 0.99, "B": -0.1})
    assert select_features(cm, "target", 0.0) == ["A", "B"]
    assert select_features(cm, "target", 1.01, must_keep=["B"]) == ["B"]
    assert "nmc_ipc" in DEFAULT_LEAKAGE


def test_select_features_negative_r_uses_magnitude():
    assert select_features(_cm({"A": -0.8, "B": 0.5}), "target", 0.6, exclude=()) == ["A"]


def test_select_features_errors():
    cm = _cm({"A": 0.9})
    with pytest.raises(SchemaError):
        select_features(cm, "nope")
    with pytest.raises(SchemaError):
        select_features(cm, "target", must_keep=["Z"])
    with pytest.raises(DomainError):
        select_features(cm, "target", -0.1)
