"""Mixed-type table ingestion: one-hot expansion, min-max scaling, observed-cell bookkeeping."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"


class TableError(ValueError):
    """Raised when a table or schema fails validation."""


class MaskedAccessError(RuntimeError):
    """Raised when code reads the value of a cell that is not observed."""


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    categories: tuple[str, ...] = ()

    @property
    def width(self) -> int:
        return len(self.categories) if self.kind == CATEGORICAL else 1


@dataclass(frozen=True)
class TableSchema:
    columns: tuple[Column, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise TableError(f"duplicate column names in schema: {names}")
        for c in self.columns:
            if c.kind not in (NUMERIC, CATEGORICAL):
                raise TableError(f"column {c.name!r}: unknown kind {c.kind!r}")
            if c.kind == CATEGORICAL:
                if len(c.categories) < 2:
                    raise TableError(f"column {c.name!r}: categorical needs >= 2 categories")
                if len(set(c.categories)) != len(c.categories):
                    raise TableError(f"column {c.name!r}: repeated category labels")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def width(self) -> int:
        return sum(c.width for c in self.columns)

    def to_json(self) -> dict:
        out = {}
        for c in self.columns:
            if c.kind == NUMERIC:
                out[c.name] = {"kind": NUMERIC}
            else:
                out[c.name] = {"kind": CATEGORICAL, "categories": list(c.categories)}
        return out

    def digest(self) -> str:
        """Stable hash used to check that a checkpoint matches a schema."""
        blob = json.dumps(self.to_json(), sort_keys=False, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def expanded_names(self) -> list[str]:
        out = []
        for c in self.columns:
            if c.kind == NUMERIC:
                out.append(c.name)
            else:
                out.extend(f"{c.name}={cat}" for cat in c.categories)
        return out

    def permuted(self, order: Sequence[int]) -> "TableSchema":
        return TableSchema(tuple(self.columns[k] for k in order))


def schema_from_json(spec: dict, rows: list[dict] | None = None) -> TableSchema:
    """Build a schema from its JSON mapping.

    Categorical columns without a ``categories`` list get them from ``rows``
    in first-appearance order.
    """
    columns = []
    for name, entry in spec.items():
        kind = entry.get("kind")
        if kind == NUMERIC:
            columns.append(Column(name, NUMERIC))
        elif kind == CATEGORICAL:
            cats = entry.get("categories")
            if cats is None:
                if rows is None:
                    raise TableError(f"column {name!r}: categories missing and no data to infer from")
                seen: dict[str, None] = {}
                for r in rows:
                    v = r.get(name, "")
                    if v != "":
                        seen.setdefault(v, None)
                cats = list(seen)
            columns.append(Column(name, CATEGORICAL, tuple(str(c) for c in cats)))
        else:
            raise TableError(f"column {name!r}: unknown kind {kind!r}")
    return TableSchema(tuple(columns))


def read_schema(path: str | Path, rows: list[dict] | None = None) -> TableSchema:
    with open(path, encoding="utf-8") as fh:
        return schema_from_json(json.load(fh), rows)


def infer_schema(rows: list[dict], names: Sequence[str]) -> TableSchema:
    """Numeric when every non-empty cell parses as a float, categorical otherwise."""
    spec = {}
    for name in names:
        kind = NUMERIC
        for r in rows:
            v = r[name]
            if v == "":
                continue
            try:
                float(v)
            except ValueError:
                kind = CATEGORICAL
                break
        spec[name] = {"kind": kind}
    return schema_from_json(spec, rows)


@dataclass(frozen=True, eq=False)
class EncodedTable:
    """Numeric matrix after one-hot expansion.

    ``values`` holds NaN wherever ``observed`` is false. ``groups[g]`` lists the
    expanded column indices of original column g. Arrays are read-only.
    """

    schema: TableSchema
    values: np.ndarray
    observed: np.ndarray
    groups: tuple[np.ndarray, ...]
    scale_min: np.ndarray | None = None
    scale_max: np.ndarray | None = None
    row_names: tuple[str, ...] | None = field(default=None, repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        observed = np.array(self.observed, dtype=bool)
        if values.ndim != 2 or values.shape != observed.shape:
            raise TableError(f"values {values.shape} and mask {observed.shape} disagree")
        if values.shape[1] != self.schema.width:
            raise TableError(f"expected {self.schema.width} expanded columns, got {values.shape[1]}")
        values[~observed] = np.nan
        if not np.all(np.isfinite(values[observed])):
            raise TableError("observed cells must be finite")
        for g in self.groups:
            if len(g) > 1 and not np.all(observed[:, g] == observed[:, g[:1]]):
                raise TableError("one-hot group partially observed")
        values.flags.writeable = False
        observed.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "observed", observed)
        for name in ("scale_min", "scale_max"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr, dtype=np.float64)
                arr.flags.writeable = False
                object.__setattr__(self, name, arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def is_scaled(self) -> bool:
        return self.scale_min is not None

    @property
    def numeric_cols(self) -> np.ndarray:
        return np.array([int(g[0]) for g, c in zip(self.groups, self.schema.columns)
                         if c.kind == NUMERIC], dtype=int)

    @property
    def binary_cols(self) -> np.ndarray:
        out = [g for g, c in zip(self.groups, self.schema.columns) if c.kind == CATEGORICAL]
        return np.concatenate(out).astype(int) if out else np.zeros(0, dtype=int)

    @property
    def is_binary(self) -> np.ndarray:
        """Boolean per expanded column: True for one-hot components."""
        flags = np.zeros(self.n_cols, dtype=bool)
        flags[self.binary_cols] = True
        return flags

    @property
    def categorical_groups(self) -> list[np.ndarray]:
        return [g for g, c in zip(self.groups, self.schema.columns) if c.kind == CATEGORICAL]

    def group_of_column(self) -> np.ndarray:
        owner = np.empty(self.n_cols, dtype=int)
        for k, g in enumerate(self.groups):
            owner[g] = k
        return owner

    def row_support(self, i: int) -> np.ndarray:
        """Observed expanded-column indices of row i."""
        return np.flatnonzero(self.observed[i])

    def cell_values(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Gather cell values; refuses to read any unobserved cell."""
        rows = np.asarray(rows, dtype=int)
        cols = np.asarray(cols, dtype=int)
        ok = self.observed[rows, cols]
        if not np.all(ok):
            bad = int(np.flatnonzero(~ok)[0])
            raise MaskedAccessError(f"read of unobserved cell ({rows[bad]}, {cols[bad]})")
        return self.values[rows, cols]

    def original_observed(self) -> np.ndarray:
        """n x m boolean mask at original-column granularity."""
        return np.stack([self.observed[:, g[0]] for g in self.groups], axis=1)


def _groups_for(schema: TableSchema) -> tuple[np.ndarray, ...]:
    groups, start = [], 0
    for c in schema.columns:
        groups.append(np.arange(start, start + c.width))
        start += c.width
    return tuple(groups)


def encode_rows(rows: Sequence[Sequence[str]], schema: TableSchema) -> tuple[np.ndarray, np.ndarray]:
    """Encode raw string rows (already in schema column order) into values/observed."""
    n, width = len(rows), schema.width
    values = np.full((n, width), np.nan)
    observed = np.zeros((n, width), dtype=bool)
    groups = _groups_for(schema)
    lookup = [{cat: k for k, cat in enumerate(c.categories)} for c in schema.columns]
    for i, row in enumerate(rows):
        if len(row) != len(schema.columns):
            raise TableError(f"row {i}: expected {len(schema.columns)} fields, got {len(row)}")
        for k, (col, text) in enumerate(zip(schema.columns, row)):
            text = text.strip()
            if text == "":
                continue
            g = groups[k]
            if col.kind == NUMERIC:
                try:
                    x = float(text)
                except ValueError:
                    raise TableError(f"row {i}, column {col.name!r}: non-numeric {text!r}") from None
                if not np.isfinite(x):
                    raise TableError(f"row {i}, column {col.name!r}: non-finite {text!r}")
                values[i, g[0]] = x
                observed[i, g[0]] = True
            else:
                if text not in lookup[k]:
                    raise TableError(f"row {i}, column {col.name!r}: unknown category {text!r}")
                values[i, g] = 0.0
                values[i, g[lookup[k][text]]] = 1.0
                observed[i, g] = True
    return values, observed


def load_table(source, schema: TableSchema | dict | None = None, *, header: bool = True,
               names: Sequence[str] | None = None) -> EncodedTable:
    """Read a CSV (path, text, or file object) into an unscaled EncodedTable.

    ``schema`` may be a TableSchema, a JSON-style mapping, or None to infer.
    Headerless files need ``names``. Empty cells are missing.
    """
    is_path = isinstance(source, Path) or (
        isinstance(source, str) and "\n" not in source and "," not in source)
    if is_path:
        with open(source, encoding="utf-8", newline="") as fh:
            raw = list(csv.reader(fh))
    elif hasattr(source, "read"):
        raw = list(csv.reader(source))
    else:
        raw = list(csv.reader(io.StringIO(str(source))))
    raw = [r for r in raw if r]
    if header:
        if not raw:
            raise TableError("empty table")
        head, body = [h.strip() for h in raw[0]], raw[1:]
    else:
        if names is None:
            raise TableError("headerless CSV requires column names")
        head, body = list(names), raw
    if not body:
        raise TableError("empty table")
    if len(set(head)) != len(head):
        raise TableError(f"duplicate header names: {head}")
    dict_rows = [dict(zip(head, r)) for r in body]

    if schema is None:
        schema = infer_schema(dict_rows, head)
    elif isinstance(schema, dict):
        schema = schema_from_json(schema, dict_rows)
    if set(head) != set(schema.names) or len(head) != len(schema.names):
        raise TableError(f"header {head} does not match schema {schema.names}")
    pos = [head.index(name) for name in schema.names]
    ordered = []
    for i, r in enumerate(body):
        if len(r) != len(head):
            raise TableError(f"row {i}: expected {len(head)} fields, got {len(r)}")
        ordered.append([r[p] for p in pos])
    values, observed = encode_rows(ordered, schema)
    return EncodedTable(schema, values, observed, _groups_for(schema))


def table_from_arrays(schema: TableSchema, values: np.ndarray, observed: np.ndarray | None = None) -> EncodedTable:
    values = np.asarray(values, dtype=np.float64)
    if observed is None:
        observed = np.isfinite(values)
    return EncodedTable(schema, values, observed, _groups_for(schema))


def fit_scaling(table: EncodedTable) -> EncodedTable:
    """Min-max scale numeric columns with statistics from observed cells only.

    Constant columns map to 0 and invert back to the constant.
    """
    vals = np.array(table.values)
    lo = np.full(table.n_cols, np.nan)
    hi = np.full(table.n_cols, np.nan)
    for j in table.numeric_cols:
        obs = table.observed[:, j]
        if not obs.any():
            raise TableError(f"numeric column {table.schema.expanded_names()[j]!r} has no observed entries")
        col = vals[obs, j]
        lo[j], hi[j] = col.min(), col.max()
        span = hi[j] - lo[j]
        vals[obs, j] = (col - lo[j]) / span if span > 0 else 0.0
    return replace(table, values=vals, scale_min=lo, scale_max=hi)


def unscale(table: EncodedTable, matrix: np.ndarray) -> np.ndarray:
    """Map scaled numeric columns of ``matrix`` back to original units."""
    if not table.is_scaled:
        raise TableError("table carries no scaling metadata")
    out = np.array(matrix, dtype=np.float64)
    cols = table.numeric_cols
    lo, hi = table.scale_min[cols], table.scale_max[cols]
    out[..., cols] = out[..., cols] * (hi - lo) + lo
    return out


def scale_values(table: EncodedTable, matrix: np.ndarray) -> np.ndarray:
    """Apply the table's stored scaling to raw numeric values (inverse of ``unscale``)."""
    if not table.is_scaled:
        raise TableError("table carries no scaling metadata")
    out = np.array(matrix, dtype=np.float64)
    cols = table.numeric_cols
    lo, hi = table.scale_min[cols], table.scale_max[cols]
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out[..., cols] = np.where(span > 0, (out[..., cols] - lo) / safe, 0.0)
    return out


def observed_pairs(table: EncodedTable) -> list[tuple[int, int]]:
    rows, cols = np.nonzero(table.observed)
    return list(zip(rows.tolist(), cols.tolist()))


def hide_cells(table: EncodedTable, mask: np.ndarray) -> EncodedTable:
    """Copy of ``table`` with the masked cells turned unobserved."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != table.shape:
        raise TableError(f"mask shape {mask.shape} != table shape {table.shape}")
    observed = table.observed & ~mask
    return replace(table, values=np.where(observed, table.values, np.nan), observed=observed)


def permute_table(table: EncodedTable, row_order: Sequence[int] | None = None,
                  col_order: Sequence[int] | None = None) -> EncodedTable:
    """Reorder rows and original columns; one-hot groups move as units."""
    n, m = table.n_rows, len(table.groups)
    row_order = np.arange(n) if row_order is None else np.asarray(row_order)
    col_order = np.arange(m) if col_order is None else np.asarray(col_order)
    expanded = np.concatenate([table.groups[k] for k in col_order])
    schema = table.schema.permuted(col_order)
    return EncodedTable(schema, table.values[np.ix_(row_order, expanded)],
                        table.observed[np.ix_(row_order, expanded)], _groups_for(schema),
                        None if table.scale_min is None else table.scale_min[expanded],
                        None if table.scale_max is None else table.scale_max[expanded])


def expand_original_mask(table: EncodedTable, mask: np.ndarray) -> np.ndarray:
    """n x m (original columns) mask -> n x m' mask covering whole groups."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (table.n_rows, len(table.groups)):
        raise TableError(f"original-shape mask must be {(table.n_rows, len(table.groups))}, got {mask.shape}")
    out = np.zeros(table.shape, dtype=bool)
    for k, g in enumerate(table.groups):
        out[:, g] = mask[:, [k]]
    return out


def read_mask_csv(path: str | Path, table: EncodedTable, original_shape: bool = False) -> np.ndarray:
    arr = np.loadtxt(path, delimiter=",", dtype=int, ndmin=2)
    if original_shape:
        return expand_original_mask(table, arr.astype(bool))
    if arr.shape != table.shape:
        raise TableError(f"mask shape {arr.shape} != expanded table shape {table.shape}")
    return arr.astype(bool)


def write_mask_csv(path: str | Path, mask: np.ndarray) -> None:
    np.savetxt(path, np.asarray(mask, dtype=int), fmt="%d", delimiter=",")


def decode_rows(schema: TableSchema, matrix: np.ndarray) -> list[list[str]]:
    """Expanded matrix (original units) back to CSV text rows; NaN becomes empty."""
    out = []
    groups = _groups_for(schema)
    for row in np.atleast_2d(matrix):
        fields = []
        for col, g in zip(schema.columns, groups):
            if col.kind == NUMERIC:
                x = row[g[0]]
                fields.append("" if not np.isfinite(x) else repr(float(x)))
            else:
                seg = row[g]
                fields.append("" if not np.all(np.isfinite(seg)) else col.categories[int(np.argmax(seg))])
        out.append(fields)
    return out


def write_table_csv(path: str | Path, schema: TableSchema, matrix: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(schema.names)
        w.writerows(decode_rows(schema, matrix))
