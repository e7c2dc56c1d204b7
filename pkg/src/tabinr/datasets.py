"""Synthetic tables for offline tests, plus loaders for the UCI benchmark files.

UCI files are not downloaded; point ``load_uci`` at a local copy.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .table import CATEGORICAL, NUMERIC, Column, EncodedTable, TableSchema, load_table, table_from_arrays


def _numeric_schema(m: int, prefix: str = "x") -> TableSchema:
    return TableSchema(tuple(Column(f"{prefix}{j}", NUMERIC) for j in range(m)))


def rank1(n: int = 500, m: int = 8, seed: int = 0, noise: float = 0.0) -> EncodedTable:
    """x_ij = a_i * b_j (+ optional Gaussian noise), a, b ~ N(0, 1)."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(n)
    b = rng.standard_normal(m)
    x = np.outer(a, b)
    if noise:
        x = x + noise * rng.standard_normal(x.shape)
    return table_from_arrays(_numeric_schema(m), x)


def linear(n: int = 100, m: int = 8, rank: int = 2, seed: int = 0) -> EncodedTable:
    """Rows are linear combinations of ``rank`` latent factors."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, rank))
    w = rng.standard_normal((rank, m))
    return table_from_arrays(_numeric_schema(m), z @ w)


def correlated_gaussian(n: int = 1000, m: int = 8, rank: int = 2, noise: float = 0.3,
                        seed: int = 0) -> EncodedTable:
    """Gaussian rows with covariance W W^T + noise^2 I (W is m x rank)."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((m, rank))
    z = rng.standard_normal((n, rank))
    x = z @ w.T + noise * rng.standard_normal((n, m))
    return table_from_arrays(_numeric_schema(m), x)


def logistic_categorical(n: int = 1000, m_numeric: int = 6, n_categorical: int = 2, n_classes: int = 3,
                         rank: int = 2, seed: int = 0) -> EncodedTable:
    """Correlated numeric columns plus categorical columns drawn from a
    softmax over linear functions of the same latent factors."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, rank))
    x = z @ rng.standard_normal((rank, m_numeric)) + 0.2 * rng.standard_normal((n, m_numeric))
    cols = [Column(f"x{j}", NUMERIC) for j in range(m_numeric)]
    blocks = [x]
    for g in range(n_categorical):
        logits = 2.0 * z @ rng.standard_normal((rank, n_classes))
        p = np.exp(logits - logits.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        u = rng.random((n, 1))
        labels = np.minimum((u > np.cumsum(p, axis=1)).sum(axis=1), n_classes - 1)
        blocks.append(np.eye(n_classes)[labels])
        cols.append(Column(f"c{g}", CATEGORICAL, tuple(f"k{k}" for k in range(n_classes))))
    return table_from_arrays(TableSchema(tuple(cols)), np.concatenate(blocks, axis=1))


def letter_like(n: int = 2000, m_numeric: int = 16, n_classes: int = 26, seed: int = 0) -> EncodedTable:
    """Stand-in shaped like UCI letter: 16 bounded integer-ish features driven
    by a class label and a few latent factors, plus the 26-way label column."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_classes, n)
    centers = rng.normal(0.0, 1.0, (n_classes, 4))
    z = centers[labels] + 0.6 * rng.standard_normal((n, 4))
    w = rng.standard_normal((4, m_numeric))
    x = np.tanh(0.5 * z @ w) * 5 + 7.5 + 0.7 * rng.standard_normal((n, m_numeric))
    x = np.clip(np.round(x), 0, 15)
    cats = tuple(string.ascii_uppercase[:n_classes])
    cols = tuple(Column(f"f{j}", NUMERIC) for j in range(m_numeric)) + (Column("lettr", CATEGORICAL, cats),)
    return table_from_arrays(TableSchema(cols), np.concatenate([x, np.eye(n_classes)[labels]], axis=1))


SYNTHETIC = {
    "rank1": rank1,
    "linear": linear,
    "correlated_gaussian": correlated_gaussian,
    "logistic_categorical": logistic_categorical,
    "letter_like": letter_like,
}


def make_synthetic(kind: str, **kwargs) -> EncodedTable:
    try:
        fn = SYNTHETIC[kind]
    except KeyError:
        raise ValueError(f"unknown synthetic dataset {kind!r}; choose from {sorted(SYNTHETIC)}") from None
    return fn(**kwargs)


@dataclass(frozen=True)
class UciDataset:
    name: str
    title: str
    rows: int
    features: int
    task: str
    # None: the file has a header row. Otherwise the column names to use.
    names: tuple[str, ...] | None = None
    categorical: tuple[str, ...] = ()


_LETTER_NAMES = ("lettr", "x-box", "y-box", "width", "high", "onpix", "x-bar", "y-bar", "x2bar",
                 "y2bar", "xybar", "x2ybr", "xy2br", "x-ege", "xegvy", "y-ege", "yegvx")

UCI = {
    d.name: d for d in [
        UciDataset("housing", "California Housing", 20640, 9, "regression", categorical=("ocean_proximity",)),
        UciDataset("climate", "Climate Model Simulation Crashes", 540, 18, "classification",
                   categorical=("outcome",)),
        UciDataset("concrete", "Concrete Compressive Strength", 1030, 9, "regression"),
        UciDataset("diabetes", "Diabetes", 442, 10, "regression"),
        UciDataset("obesity", "Estimation of Obesity Levels", 2111, 17, "classification"),
        UciDataset("credit", "Credit Approval", 690, 15, "classification"),
        UciDataset("wine", "Wine Quality", 1599, 12, "classification", categorical=("quality",)),
        UciDataset("raisin", "Raisin", 900, 8, "classification", categorical=("Class",)),
        UciDataset("spam", "Spambase", 4601, 57, "classification"),
        UciDataset("bike", "Bike Sharing Demand", 8760, 14, "classification"),
        UciDataset("letter", "Letter Recognition", 20000, 16, "classification", names=_LETTER_NAMES,
                   categorical=("lettr",)),
        UciDataset("yacht", "Yacht Hydrodynamics", 308, 7, "regression"),
    ]
}


def load_uci(name: str, path: str | Path, schema: dict | None = None) -> EncodedTable:
    """Load a local copy of one of the benchmark datasets.

    Column kinds are inferred (numeric if every value parses) unless a
    schema mapping is given; registry-listed label columns are forced
    categorical. Row counts are not enforced since mirrors differ slightly.
    """
    info = UCI[name]
    header = info.names is None
    if schema is None:
        inferred = load_table(Path(path), None, header=header, names=info.names)
        spec = inferred.schema.to_json()
        for col in info.categorical:
            if col in spec and spec[col]["kind"] == NUMERIC:
                spec[col] = {"kind": CATEGORICAL}
        schema = spec
    return load_table(Path(path), schema, header=header, names=info.names)
