"""Reference imputers: column mean / mode and k-nearest neighbours.

Both return ``(completed, scores)``: the completed expanded matrix in
original units, and per-cell probabilities for one-hot columns (NaN for
numeric columns) that the AUROC metric consumes. Cells in ``target_mask``
and cells unobserved in the table are filled.
"""

from __future__ import annotations

import numpy as np

from .table import EncodedTable, fit_scaling, unscale


def _available(table: EncodedTable, target_mask) -> tuple[np.ndarray, np.ndarray]:
    target_mask = np.zeros(table.shape, bool) if target_mask is None else np.asarray(target_mask, bool)
    if target_mask.shape != table.shape:
        raise ValueError(f"mask shape {target_mask.shape} != table shape {table.shape}")
    avail = table.observed & ~target_mask
    return avail, ~avail


def _scaled(table: EncodedTable) -> EncodedTable:
    return table if table.is_scaled else fit_scaling(table)


def _column_stats(table: EncodedTable, avail: np.ndarray):
    """Per-column fill values (scaled units) and one-hot frequencies."""
    fill = np.full(table.n_cols, np.nan)
    freq = np.full(table.n_cols, np.nan)
    names = table.schema.names
    for k, (col, g) in enumerate(zip(table.schema.columns, table.groups)):
        rows = avail[:, g[0]]
        if not rows.any():
            raise ValueError(f"column {names[k]!r} has no observed cells to impute from")
        block = table.values[np.ix_(rows, g)]
        if len(g) == 1 and not table.is_binary[g[0]]:
            fill[g[0]] = block[:, 0].mean()
        else:
            counts = block.sum(axis=0)
            hot = np.zeros(len(g))
            hot[int(np.argmax(counts))] = 1.0
            fill[g] = hot
            freq[g] = counts / counts.sum()
    return fill, freq


def impute_mean_mode(table: EncodedTable, target_mask=None):
    t = _scaled(table)
    avail, fill_mask = _available(t, target_mask)
    fill, freq = _column_stats(t, avail)
    out = np.where(fill_mask, fill[None, :], t.values)
    scores = np.where(t.is_binary[None, :], np.broadcast_to(freq, t.shape), np.nan)
    return unscale(t, out), scores


def _label_matrix(table: EncodedTable, avail: np.ndarray):
    cat_groups = table.categorical_groups
    labels = np.full((table.n_rows, len(cat_groups)), -1, dtype=int)
    have = np.zeros((table.n_rows, len(cat_groups)), dtype=bool)
    for q, g in enumerate(cat_groups):
        have[:, q] = avail[:, g[0]]
        labels[have[:, q], q] = np.argmax(table.values[np.ix_(have[:, q], g)], axis=1)
    return labels, have


def row_distances(x: np.ndarray, xm: np.ndarray, labels: np.ndarray, lm: np.ndarray, r: int):
    """Distances from row r to every row, plus co-observed feature counts.

    Squared differences over co-observed numeric columns plus 0/1 mismatch
    over co-observed categorical columns, divided by the co-observed count,
    square-rooted. Rows sharing nothing get +inf.
    """
    co = xm & xm[r]
    diff = np.where(co, x - x[r], 0.0)
    total = (diff * diff).sum(axis=1)
    cnt = co.sum(axis=1)
    if labels.shape[1]:
        coc = lm & lm[r]
        total = total + (coc & (labels != labels[r])).sum(axis=1)
        cnt = cnt + coc.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = np.where(cnt > 0, np.sqrt(total / np.maximum(cnt, 1)), np.inf)
    return dist, cnt


def impute_knn(table: EncodedTable, target_mask=None, k: int = 5):
    """KNN imputation over mixed columns (distances on min-max scaled values).

    Numeric cells take the mean of the k nearest donors that have the column;
    categorical cells take the majority label, ties going to the label of the
    nearest tied donor. Distance ties break toward the lower row index. A
    cell with no donor falls back to the column mean / mode.
    """
    if k <= 0:
        raise ValueError("k must be >= 1")
    t = _scaled(table)
    avail, fill_mask = _available(t, target_mask)
    fallback, _ = _column_stats(t, avail)
    num_cols = t.numeric_cols
    cat_groups = t.categorical_groups
    x = np.where(avail[:, num_cols], t.values[:, num_cols], 0.0)
    xm = avail[:, num_cols]
    labels, lm = _label_matrix(t, avail)
    n = t.n_rows
    out = np.where(fill_mask, np.nan, t.values)
    scores = np.full(t.shape, np.nan)
    idx = np.arange(n)

    for r in np.flatnonzero(fill_mask.any(axis=1)):
        dist, cnt = row_distances(x, xm, labels, lm, r)
        valid = (cnt > 0) & (idx != r)
        order = np.lexsort((idx, dist))
        for j in num_cols:
            if not fill_mask[r, j]:
                continue
            donors = order[(valid & avail[:, j])[order]][:k]
            out[r, j] = t.values[donors, j].mean() if donors.size else fallback[j]
        for q, g in enumerate(cat_groups):
            if not fill_mask[r, g[0]]:
                continue
            donors = order[(valid & lm[:, q])[order]][:k]
            if donors.size == 0:
                out[r, g] = fallback[g]
                continue
            votes = np.bincount(labels[donors, q], minlength=len(g))
            top = np.flatnonzero(votes == votes.max())
            winner = next(labels[d, q] for d in donors if labels[d, q] in top)
            hot = np.zeros(len(g))
            hot[winner] = 1.0
            out[r, g] = hot
            scores[r, g] = votes / donors.size

    # rows untouched by the loop keep NaN scores; give them the column frequencies
    _, freq = _column_stats(t, avail)
    scores = np.where(np.isnan(scores) & t.is_binary[None, :], freq[None, :], scores)
    return unscale(t, out), scores
