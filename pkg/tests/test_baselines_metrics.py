import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabinr.baselines import impute_knn, impute_mean_mode
from tabinr.metrics import MetricsReport, auroc, auroc_binary, nrmse, score_imputation
from tabinr.missingness import mask_mcar
from tabinr.table import (CATEGORICAL, NUMERIC, Column, TableSchema, fit_scaling, hide_cells, table_from_arrays,
                          unscale)

from conftest import numeric_table


# ---------------------------------------------------------------- mean/mode

def test_mean_fill_example():
    out, scores = impute_mean_mode(numeric_table([[1.0], [np.nan], [3.0]]))
    np.testing.assert_allclose(out[:, 0], [1, 2, 3])
    assert np.isnan(scores).all()


def test_mode_tie_goes_to_first_category():
    schema = TableSchema((Column("c", CATEGORICAL, ("a", "b")),))
    t = table_from_arrays(schema, np.array([[0, 1], [1, 0], [0, 1], [1, 0], [np.nan, np.nan]]))
    out, scores = impute_mean_mode(t)
    np.testing.assert_array_equal(out[4], [1, 0])
    np.testing.assert_allclose(scores[4], [0.5, 0.5])


def test_mean_mode_uses_only_available_cells(mixed_table):
    mask = np.zeros(mixed_table.shape, bool)
    mask[0, 0] = True
    out, _ = impute_mean_mode(mixed_table, mask)
    assert out[0, 0] == pytest.approx(np.mean([2, 3, 4, 5, 6]))
    assert out[5, 4] == pytest.approx(np.mean([10, 20, 30, 40, 50]))
    np.testing.assert_array_equal(out[4, 1:4], [1, 0, 0])
    np.testing.assert_array_equal(out[1], mixed_table.values[1])


def test_mean_mode_fully_missing_column_errors():
    with pytest.raises(ValueError, match="no observed"):
        impute_mean_mode(numeric_table([[1.0, 2.0], [3.0, 4.0]]), np.array([[True, False], [True, False]]))


def test_mean_is_optimal_constant():
    x = np.random.default_rng(0).gamma(2.0, 3.0, 50)
    col = np.append(x, np.nan)[:, None]
    fill = impute_mean_mode(numeric_table(col))[0][-1, 0]
    best = np.mean((x - fill) ** 2)
    for c in np.linspace(x.min(), x.max(), 201):
        assert best <= np.mean((x - c) ** 2) + 1e-12


def test_mean_imputation_nrmse_is_one_on_gaussian():
    t = numeric_table(np.random.default_rng(0).standard_normal((10_000, 3)))
    pair = mask_mcar(t, 0.3, seed=1)
    out, scores = impute_mean_mode(hide_cells(t, pair.mask))
    num, _ = score_imputation(t, out, scores, pair.mask)
    assert abs(num.mean - 1.0) < 0.05


# ---------------------------------------------------------------- KNN

def knn_oracle(table, k):
    """Exhaustive KNN written with plain loops over a scaled table."""
    n = table.n_rows
    vals, obs = table.values, table.observed
    num = list(table.numeric_cols)
    cats = table.categorical_groups

    def label(r, g):
        return int(np.argmax(vals[r, g]))

    out = vals.copy()
    for r in range(n):
        if obs[r].all():
            continue
        cand = []
        for s in range(n):
            if s == r:
                continue
            total, cnt = 0.0, 0
            for j in num:
                if obs[r, j] and obs[s, j]:
                    total += (vals[r, j] - vals[s, j]) ** 2
                    cnt += 1
            for g in cats:
                if obs[r, g[0]] and obs[s, g[0]]:
                    total += float(label(r, g) != label(s, g))
                    cnt += 1
            if cnt:
                cand.append((math.sqrt(total / cnt), s))
        cand.sort()
        for j in num:
            if obs[r, j]:
                continue
            donors = [s for _, s in cand if obs[s, j]][:k]
            pool = donors if donors else [s for s in range(n) if obs[s, j]]
            out[r, j] = sum(vals[s, j] for s in pool) / len(pool)
        for g in cats:
            if obs[r, g[0]]:
                continue
            donors = [s for _, s in cand if obs[s, g[0]]][:k]
            if not donors:
                donors = [s for s in range(n) if obs[s, g[0]]]
                counts = [sum(label(s, g) == c for s in donors) for c in range(len(g))]
                win = counts.index(max(counts))
            else:
                counts = [sum(label(s, g) == c for s in donors) for c in range(len(g))]
                top = max(counts)
                win = next(label(s, g) for s in donors if counts[label(s, g)] == top)
            out[r, g] = np.eye(len(g))[win]
    span = np.where(table.is_binary, 1.0, table.scale_max - table.scale_min)
    lo = np.where(table.is_binary, 0.0, table.scale_min)
    return out * span + lo


def _random_mixed(n, m_num, n_levels, p, seed):
    rng = np.random.default_rng(seed)
    cols = [Column(f"x{j}", NUMERIC) for j in range(m_num)]
    blocks = [rng.normal(size=(n, m_num)).round(2)]
    if n_levels:
        cols.append(Column("c", CATEGORICAL, tuple("abcd"[:n_levels])))
        blocks.append(np.eye(n_levels)[rng.integers(0, n_levels, n)])
    t = table_from_arrays(TableSchema(tuple(cols)), np.hstack(blocks))
    orig = rng.random((n, len(cols))) < p
    orig[0] = False  # every column keeps an observed cell
    mask = np.concatenate([np.repeat(orig[:, [k]], len(g), axis=1) for k, g in enumerate(t.groups)], axis=1)
    return fit_scaling(hide_cells(t, mask))


def test_knn_matches_brute_force_30x4_k3():
    t = _random_mixed(30, 4, 0, 0.25, seed=7)
    np.testing.assert_allclose(impute_knn(t, k=3)[0], knn_oracle(t, 3), rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.integers(1, 5), st.sampled_from([0, 2, 3]), st.floats(0.0, 0.6),
       st.integers(1, 8), st.integers(0, 10_000))
def test_knn_matches_brute_force_property(n, m_num, levels, p, k, seed):
    t = _random_mixed(n, m_num, levels, p, seed)
    np.testing.assert_allclose(impute_knn(t, k=k)[0], knn_oracle(t, k), rtol=1e-12, atol=1e-12)


def test_knn_duplicate_row_k1():
    x = np.array([[0.0, 1.0, 5.0], [3.0, 2.0, 7.0], [9.0, 4.0, 1.0], [3.0, 2.0, np.nan]])
    out, _ = impute_knn(numeric_table(x), k=1)
    assert out[3, 2] == pytest.approx(7.0, abs=1e-12)


def test_knn_large_k_equals_mean():
    # column 0 fully observed, so every other row is a valid donor
    rng = np.random.default_rng(3)
    x = rng.normal(size=(20, 3))
    x[:, 1:][rng.random((20, 2)) < 0.3] = np.nan
    x[0] = 1.0
    t = numeric_table(x)
    np.testing.assert_allclose(impute_knn(t, k=100)[0], impute_mean_mode(t)[0], atol=1e-12)


def test_knn_rejects_bad_k():
    with pytest.raises(ValueError):
        impute_knn(numeric_table([[1.0]]), k=0)


def test_knn_keeps_available_cells():
    t = _random_mixed(15, 3, 3, 0.3, seed=5)
    out, _ = impute_knn(t, k=2)
    np.testing.assert_allclose(out[t.observed], unscale(t, t.values)[t.observed], atol=1e-12)
    assert np.isfinite(out).all()


# ---------------------------------------------------------------- NRMSE

def nrmse_oracle(truth, imputed, mask):
    per = []
    for j in range(len(truth[0])):
        col = [row[j] for row in truth]
        cells = [i for i in range(len(truth)) if mask[i][j]]
        if not cells:
            continue
        mu = sum(col) / len(col)
        sd = math.sqrt(sum((v - mu) ** 2 for v in col) / len(col))
        err = math.sqrt(sum((imputed[i][j] - truth[i][j]) ** 2 for i in cells) / len(cells))
        per.append(err / sd)
    return sum(per) / len(per)


def test_nrmse_hand_example():
    s = nrmse(np.array([[0.0], [2.0]]), np.array([[1.0], [1.0]]), np.ones((2, 1), bool), [0])
    assert s.mean == 1.0


def test_nrmse_perfect_is_zero():
    x = np.random.default_rng(0).normal(size=(10, 3))
    assert nrmse(x, x, np.ones_like(x, bool), range(3)).mean == 0.0


def test_nrmse_matches_scalar_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        truth = rng.normal(size=(12, 4))
        imputed = truth + rng.normal(size=truth.shape)
        mask = rng.random(truth.shape) < 0.4
        mask[0] = True
        got = nrmse(truth, imputed, mask, range(4)).mean
        assert abs(got - nrmse_oracle(truth.tolist(), imputed.tolist(), mask.tolist())) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 10_000))
def test_nrmse_scale_equivariance(c, seed):
    rng = np.random.default_rng(seed)
    truth = rng.normal(size=(8, 2))
    imputed = rng.normal(size=(8, 2))
    mask = np.ones((8, 2), bool)
    a = nrmse(truth, imputed, mask, [0, 1]).mean
    b = nrmse(c * truth, c * imputed, mask, [0, 1]).mean
    assert b == pytest.approx(a, rel=1e-10)


def test_nrmse_zero_std_column_excluded_with_warning():
    truth = np.array([[1.0, 0.0], [1.0, 2.0]])
    with pytest.warns(UserWarning, match="zero std"):
        s = nrmse(truth, np.ones((2, 2)), np.ones((2, 2), bool), [0, 1], ["a", "b"])
    assert list(s.per_feature) == ["b"] and s.mean == 1.0


def test_nrmse_without_masked_cells_is_absent():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert nrmse(np.ones((2, 1)), np.ones((2, 1)), np.zeros((2, 1), bool), [0]).mean is None


# ---------------------------------------------------------------- AUROC

def auroc_pairs(labels, scores):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    hits = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return hits / (len(pos) * len(neg))


def test_auroc_matches_pair_counting():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 60))
        labels = rng.random(n) < 0.5
        labels[0], labels[1] = True, False
        scores = rng.integers(0, 6, n) / 5.0 if rng.random() < 0.5 else rng.random(n)
        assert abs(auroc_binary(labels, scores) - auroc_pairs(labels, scores)) < 1e-12


def test_auroc_edge_cases():
    assert auroc_binary([1, 1, 0, 0], [0.9, 0.8, 0.2, 0.1]) == 1.0
    assert auroc_binary([1, 0, 1, 0], [0.3] * 4) == 0.5
    assert auroc_binary([1, 1], [0.1, 0.2]) is None


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100), st.floats(-50, 50))
def test_auroc_monotone_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    labels = rng.random(30) < 0.5
    labels[:2] = [True, False]
    scores = rng.normal(size=30)
    base = auroc_binary(labels, scores)
    assert auroc_binary(labels, a * scores + b) == pytest.approx(base, abs=1e-12)
    assert auroc_binary(labels, np.exp(scores)) == pytest.approx(base, abs=1e-12)


def test_auroc_levels_and_degenerate_components():
    truth = np.array([[1, 0, 0], [0, 1, 0], [1, 0, 0], [0, 1, 0]], float)
    scores = np.array([[0.9, 0.1, 0.0], [0.2, 0.8, 0.0], [0.6, 0.4, 0.0], [0.7, 0.3, 0.0]])
    mask = np.ones_like(truth, bool)
    comp = auroc(truth, scores, mask, [np.array([0, 1, 2])])
    assert set(comp.per_feature) == {"0", "1"}  # column 2 has no positives
    assert comp.mean == pytest.approx(np.mean([auroc_pairs(truth[:, j], scores[:, j]) for j in (0, 1)]))
    grp = auroc(truth, scores, mask, [np.array([0, 1, 2])], level="group")
    assert grp.mean == pytest.approx(comp.mean)
    assert auroc(truth, scores, np.zeros_like(mask), [np.array([0, 1, 2])]).mean is None
    with pytest.raises(ValueError):
        auroc(truth, scores, mask, [], level="pair")


def test_metrics_report_json_roundtrip():
    import json
    rep = MetricsReport("d", "MCAR", 0.3, 0, "knn", {"a": 0.5}, 0.5, {}, None, 1.2)
    back = json.loads(rep.to_json())
    assert back["nrmse_mean"] == 0.5 and back["auroc_mean"] is None
