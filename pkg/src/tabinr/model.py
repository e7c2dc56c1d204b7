"""TabINR: a table as f(row embedding, feature embedding) -> cell value.

The shared MLP sees the concatenation [lambda_i ; c_j]. Numeric columns are
regressed in min-max scaled units with squared error; one-hot components are
logits trained with BCE. Row and feature embeddings are optimized jointly
with the network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .table import EncodedTable, TableSchema, schema_from_json, unscale

log = logging.getLogger(__name__)

MAGIC = b"TABINR\x00\x01"
VERSION = "tabinr-v1"


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    latent_dim: int = 32
    hidden_layers: int = 2
    hidden_units: int = 256
    dropout: float = 0.1
    activation: str = "siren"
    omega0: float = 30.0
    hidden_omega0: float | None = None
    beta: float = 8.0
    lr: float = 1e-3
    eta_min: float = 0.0
    epochs: int = 500
    batch_rows: int = 64
    # "rows": a batch is batch_rows rows with all their train cells;
    # "cells": a batch is batch_rows individual train cells.
    batch_unit: str = "rows"
    masking_ratio: float = 0.3
    early_stop_patience: int | None = 20
    # std of the normal draw for row and feature embeddings
    embedding_init_std: float = 0.01
    # "holdout": masking_ratio of observed cells form a static validation split.
    # "resample": a fixed 10% validation split, plus a fresh masking_ratio of
    # training cells dropped from the loss every epoch.
    mask_strategy: str = "holdout"
    seed: int = 0

    def __post_init__(self):
        for name in ("latent_dim", "hidden_layers", "hidden_units", "batch_rows"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.embedding_init_std > 0:
            raise ValueError("embedding_init_std must be positive")
        if not 0.0 < self.masking_ratio < 1.0:
            raise ValueError("masking_ratio must be in (0, 1)")
        if self.mask_strategy not in ("holdout", "resample"):
            raise ValueError(f"unknown mask_strategy {self.mask_strategy!r}")
        if self.batch_unit not in ("rows", "cells"):
            raise ValueError(f"unknown batch_unit {self.batch_unit!r}")
        if self.activation not in nn.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def dims(self) -> list[int]:
        return [2 * self.latent_dim] + [self.hidden_units] * self.hidden_layers + [1]

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


# Overrides for small low-rank tables (a few hundred rows): no dropout, a
# smaller validation split, more patience and more steps per epoch.
LOW_RANK_PRESET = {"dropout": 0.0, "masking_ratio": 0.1, "early_stop_patience": 50, "batch_rows": 16}


@dataclass(eq=False)
class TabInrModel:
    net: nn.MlpNet
    row_emb: np.ndarray
    feat_emb: np.ndarray
    groups: tuple[np.ndarray, ...]
    is_binary: np.ndarray
    scale_min: np.ndarray
    scale_max: np.ndarray
    schema: TableSchema
    config: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.row_emb.shape[1] != self.feat_emb.shape[1]:
            raise ValueError("row and feature embeddings differ in width")
        if self.net.input_dim != 2 * self.latent_dim:
            raise ValueError("network input width must be twice the latent size")
        if self.feat_emb.shape[0] != self.is_binary.shape[0]:
            raise ValueError("one feature embedding per expanded column required")

    @property
    def latent_dim(self) -> int:
        return self.row_emb.shape[1]

    @property
    def n_rows(self) -> int:
        return self.row_emb.shape[0]

    @property
    def n_cols(self) -> int:
        return self.feat_emb.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        p = self.net.params()
        p["row_emb"] = self.row_emb
        p["feat_emb"] = self.feat_emb
        return p

    def copy(self) -> "TabInrModel":
        return TabInrModel(self.net.copy(), self.row_emb.copy(), self.feat_emb.copy(), self.groups,
                           self.is_binary, self.scale_min, self.scale_max, self.schema, self.config)

    def categorical_groups(self) -> list[np.ndarray]:
        return [g for g in self.groups if self.is_binary[g[0]]]


def _inputs(row_vecs: np.ndarray, feat_vecs: np.ndarray) -> np.ndarray:
    return np.concatenate([row_vecs, feat_vecs], axis=1)


def predict_cell(model: TabInrModel, i: int, j: int) -> float:
    """Raw network output for cell (i, j): scaled value or logit."""
    if not (0 <= i < model.n_rows and 0 <= j < model.n_cols):
        raise IndexError(f"cell ({i}, {j}) outside {model.n_rows}x{model.n_cols}")
    x = np.concatenate([model.row_emb[i], model.feat_emb[j]])
    return nn.forward(model.net, x)[0]


def predict_cells(model: TabInrModel, rows: np.ndarray, cols: np.ndarray,
                  row_emb: np.ndarray | None = None) -> np.ndarray:
    emb = model.row_emb if row_emb is None else row_emb
    return nn.predict(model.net, _inputs(emb[rows], model.feat_emb[cols]))


def predict_matrix(model: TabInrModel, row_emb: np.ndarray | None = None) -> np.ndarray:
    emb = model.row_emb if row_emb is None else np.atleast_2d(row_emb)
    n, m = emb.shape[0], model.n_cols
    rows, cols = np.repeat(np.arange(n), m), np.tile(np.arange(m), n)
    return predict_cells(model, rows, cols, emb).reshape(n, m)


def cell_losses(pred: np.ndarray, target: np.ndarray, binary: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell loss and d(loss)/d(pred). BCE uses the log-sum-exp form."""
    sq = (pred - target) ** 2
    bce = np.maximum(pred, 0.0) - pred * target + np.log1p(np.exp(-np.abs(pred)))
    loss = np.where(binary, bce, sq)
    grad = np.where(binary, _sigmoid(pred) - target, 2.0 * (pred - target))
    return loss, grad


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _loss_and_grads(model: TabInrModel, rows: np.ndarray, cols: np.ndarray, target: np.ndarray,
                    binary: np.ndarray, train: bool = False, rng: np.random.Generator | None = None):
    d = model.latent_dim
    pred, cache = nn.forward_batch(model.net, _inputs(model.row_emb[rows], model.feat_emb[cols]), train, rng)
    losses, dpred = cell_losses(pred, target, binary)
    count = len(rows)
    grads, dx = nn.backward_batch(model.net, cache, dpred / count)
    g_row = np.zeros_like(model.row_emb)
    g_feat = np.zeros_like(model.feat_emb)
    np.add.at(g_row, rows, dx[:, :d])
    np.add.at(g_feat, cols, dx[:, d:])
    grads["row_emb"] = g_row
    grads["feat_emb"] = g_feat
    return float(losses.sum() / count), grads


def mixed_loss(model: TabInrModel, cells, targets: np.ndarray, binary: np.ndarray | None = None):
    """Mean mixed loss over ``cells`` [(i, j), ...] with gradients for the
    network, row embeddings and feature embeddings (inference-mode net).

    ``binary`` defaults to the model's per-column flags.
    """
    cells = np.asarray(cells, dtype=int).reshape(-1, 2)
    if cells.shape[0] == 0:
        raise ValueError("mixed_loss needs at least one cell")
    rows, cols = cells[:, 0], cells[:, 1]
    targets = np.asarray(targets, dtype=np.float64)
    if binary is None:
        binary = model.is_binary[cols]
    binary = np.asarray(binary, dtype=bool)
    bad = binary & ~np.isin(targets, (0.0, 1.0))
    if bad.any():
        raise ValueError(f"binary cell target outside {{0, 1}}: {targets[bad][0]}")
    return _loss_and_grads(model, rows, cols, targets, binary)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    initial_val_loss: float = float("nan")
    best_val_loss: float = float("nan")
    best_epoch: int = -1
    stopped_early: bool = False
    n_train_cells: int = 0
    n_val_cells: int = 0

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,train_loss,val_loss,lr\n")
            for r in self.epochs:
                fh.write(f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.lr!r}\n")


def _child_seeds(seed: int, k: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(k)


def _canonical(rows: np.ndarray, cols: np.ndarray, row_ids: np.ndarray, col_ids: np.ndarray):
    order = np.lexsort((col_ids[cols], row_ids[rows]))
    return rows[order], cols[order]


def split_cells(table: EncodedTable, ratio: float, rng: np.random.Generator,
                row_ids: np.ndarray, col_ids: np.ndarray) -> np.ndarray:
    """Boolean n x m' validation mask. One uniform per (row, group) drawn in
    identity space, so the split follows rows/columns under permutation."""
    n, m = table.shape
    u = rng.random((n, m))
    key = np.empty(m, dtype=int)
    for g in table.groups:
        key[g] = col_ids[g].min()
    draws = u[np.ix_(row_ids, key)]
    return (draws < ratio) & table.observed


def train_split(table: EncodedTable, config: TrainConfig, row_ids=None, col_ids=None):
    """(train, validation) cell masks that ``train`` uses for this config."""
    n, m = table.shape
    row_ids = np.arange(n) if row_ids is None else np.asarray(row_ids)
    col_ids = np.arange(m) if col_ids is None else np.asarray(col_ids)
    s_split = _child_seeds(config.seed, 4)[2]
    val_ratio = config.masking_ratio if config.mask_strategy == "holdout" else 0.1
    val = split_cells(table, val_ratio, np.random.default_rng(s_split), row_ids, col_ids)
    return table.observed & ~val, val


def init_model(table: EncodedTable, config: TrainConfig, row_ids=None, col_ids=None) -> TabInrModel:
    n, m = table.shape
    row_ids = np.arange(n) if row_ids is None else np.asarray(row_ids)
    col_ids = np.arange(m) if col_ids is None else np.asarray(col_ids)
    s_emb, s_net, _, _ = _child_seeds(config.seed, 4)
    rng = np.random.default_rng(s_emb)
    sd = config.embedding_init_std
    lam = sd * rng.standard_normal((n, config.latent_dim))[row_ids]
    c = sd * rng.standard_normal((m, config.latent_dim))[col_ids]
    net = nn.init_net(config.dims, config.activation, int(s_net.generate_state(1)[0]),
                      omega0=config.omega0, beta=config.beta, dropout=config.dropout,
                      hidden_omega0=config.hidden_omega0)
    if not table.is_scaled:
        raise ValueError("table must be scaled (fit_scaling) before training")
    return TabInrModel(net, lam, c, table.groups, table.is_binary, table.scale_min, table.scale_max,
                       table.schema, config)


def _mean_loss(model: TabInrModel, rows, cols, target, binary, chunk: int = 8192) -> float:
    if len(rows) == 0:
        return float("nan")
    total = 0.0
    for s in range(0, len(rows), chunk):
        r, c = rows[s:s + chunk], cols[s:s + chunk]
        pred = nn.predict(model.net, _inputs(model.row_emb[r], model.feat_emb[c]))
        total += cell_losses(pred, target[s:s + chunk], binary[s:s + chunk])[0].sum()
    return float(total / len(rows))


def train(table: EncodedTable, config: TrainConfig | None = None, *, row_ids=None, col_ids=None,
          callback=None) -> tuple[TabInrModel, TrainLog]:
    """Fit embeddings and network on the observed cells of a scaled table.

    ``row_ids``/``col_ids`` give each row / expanded column an identity used
    for every random draw and for the order cells are visited in. Training a
    permuted table with the matching permuted ids reproduces the unpermuted
    run exactly.
    """
    config = config or TrainConfig()
    n, m = table.shape
    row_ids = np.arange(n) if row_ids is None else np.asarray(row_ids)
    col_ids = np.arange(m) if col_ids is None else np.asarray(col_ids)
    if not table.observed.any():
        raise ValueError("table has no observed cells")
    model = init_model(table, config, row_ids, col_ids)
    log_ = TrainLog()
    if config.epochs == 0:
        return model, log_

    _, _, _, s_loop = _child_seeds(config.seed, 4)
    trn, val = train_split(table, config, row_ids, col_ids)
    if not val.any() or not trn.any():
        raise ValueError("all observed cells fell into one split; table too small for masking_ratio")

    tr_rows, tr_cols = _canonical(*np.nonzero(trn), row_ids, col_ids)
    va_rows, va_cols = _canonical(*np.nonzero(val), row_ids, col_ids)
    tr_y = table.cell_values(tr_rows, tr_cols)
    va_y = table.cell_values(va_rows, va_cols)
    tr_bin = table.is_binary[tr_cols]
    va_bin = table.is_binary[va_cols]
    log_.n_train_cells, log_.n_val_cells = len(tr_rows), len(va_rows)

    # train cells are sorted by row identity: slice bounds per identity
    tr_row_id = row_ids[tr_rows]
    starts = np.searchsorted(tr_row_id, np.arange(n), side="left")
    ends = np.searchsorted(tr_row_id, np.arange(n), side="right")
    drop_key = None
    if config.mask_strategy == "resample":
        drop_key = (row_ids[tr_rows], col_ids[tr_cols])

    rng = np.random.default_rng(s_loop)
    state = nn.OptimizerState(lr=config.lr, t_max=config.epochs, eta_min=config.eta_min)
    params = model.params()

    best_val = _mean_loss(model, va_rows, va_cols, va_y, va_bin)
    log_.initial_val_loss = best_val
    best = (model.net.copy(), model.row_emb.copy(), model.feat_emb.copy())
    best_epoch, wait = -1, 0

    for epoch in range(config.epochs):
        keep = None
        if drop_key is not None:
            u = rng.random((n, m))
            keep = u[drop_key] >= config.masking_ratio
        lr_now = state.current_lr
        tot, cnt = 0.0, 0
        for idx in _batches(rng, config, n, starts, ends, len(tr_rows)):
            if keep is not None:
                idx = idx[keep[idx]]
            if idx.size == 0:
                continue
            loss, grads = _loss_and_grads(model, tr_rows[idx], tr_cols[idx], tr_y[idx], tr_bin[idx],
                                          train=True, rng=rng)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            nn.adam_step(params, grads, state)
            tot += loss * idx.size
            cnt += idx.size
        state.epoch += 1
        val_loss = _mean_loss(model, va_rows, va_cols, va_y, va_bin)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(epoch)
        rec = EpochRecord(epoch, tot / max(cnt, 1), val_loss, lr_now)
        log_.epochs.append(rec)
        if callback is not None:
            callback(rec)
        if val_loss < best_val:
            best_val, best_epoch, wait = val_loss, epoch, 0
            best = (model.net.copy(), model.row_emb.copy(), model.feat_emb.copy())
        else:
            wait += 1
            if config.early_stop_patience is not None and wait >= config.early_stop_patience:
                log_.stopped_early = True
                log.debug("early stop at epoch %d (best %d)", epoch, best_epoch)
                break

    net, lam, c = best
    model = TabInrModel(net, lam, c, model.groups, model.is_binary, model.scale_min, model.scale_max,
                        model.schema, config)
    log_.best_val_loss, log_.best_epoch = best_val, best_epoch
    return model, log_


def _batches(rng, config: TrainConfig, n: int, starts, ends, n_cells: int):
    """Yield index arrays into the canonical train-cell list, each sorted."""
    if config.batch_unit == "cells":
        order = rng.permutation(n_cells)
        for s in range(0, n_cells, config.batch_rows):
            yield np.sort(order[s:s + config.batch_rows])
        return
    order_ids = rng.permutation(n)
    for s in range(0, n, config.batch_rows):
        ids = np.sort(order_ids[s:s + config.batch_rows])
        yield np.concatenate([np.arange(starts[k], ends[k]) for k in ids])


def decode_groups(raw: np.ndarray, groups, fill: np.ndarray) -> np.ndarray:
    """Winner-takes-all: within each group, rows flagged in ``fill`` get a
    one-hot at the arg max logit (first index on ties)."""
    out = np.array(raw)
    for g in groups:
        rows = np.flatnonzero(fill[:, g[0]])
        if rows.size == 0:
            continue
        seg = raw[np.ix_(rows, g)]
        hot = np.zeros_like(seg)
        hot[np.arange(rows.size), np.argmax(seg, axis=1)] = 1.0
        out[np.ix_(rows, g)] = hot
    return out


def impute(model: TabInrModel, table: EncodedTable, target_mask: np.ndarray | None = None,
           return_scores: bool = False, original: np.ndarray | None = None):
    """Completed matrix in original units.

    Cells in ``target_mask`` and cells unobserved in ``table`` are predicted;
    everything else is copied. Copied cells go through unscaling unless
    ``original`` (the unscaled values) is given, in which case they are
    passed through bit for bit. With ``return_scores`` also returns sigmoid
    probabilities for one-hot columns (NaN for numeric columns).
    """
    if table.shape != (model.n_rows, model.n_cols):
        raise ValueError(f"table shape {table.shape} does not match model {(model.n_rows, model.n_cols)}")
    target_mask = np.zeros(table.shape, bool) if target_mask is None else np.asarray(target_mask, bool)
    fill = target_mask | ~table.observed
    raw = predict_matrix(model)
    return _complete(model, table.values, fill, raw, return_scores, original)


def _complete(model: TabInrModel, scaled_values: np.ndarray, fill: np.ndarray, raw: np.ndarray,
              return_scores: bool, original: np.ndarray | None = None):
    decoded = decode_groups(raw, model.categorical_groups(), fill)
    filled = np.where(fill, decoded, scaled_values)
    out = unscale(ScaleView(model), filled)
    if original is not None:
        out = np.where(fill, out, original)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("imputation produced non-finite values")
    if return_scores:
        scores = np.where(model.is_binary, _sigmoid(raw), np.nan)
        return out, scores
    return out


class ScaleView:
    """Adapter so ``table.unscale`` can read a model's scaling metadata."""

    def __init__(self, model: TabInrModel):
        self.scale_min = model.scale_min
        self.scale_max = model.scale_max
        self.numeric_cols = np.flatnonzero(~model.is_binary)
        self.is_scaled = True


# -- checkpoints ------------------------------------------------------------

def _tensors(model: TabInrModel) -> list[tuple[str, np.ndarray]]:
    out = list(model.net.params().items())
    out += [("row_emb", model.row_emb), ("feat_emb", model.feat_emb),
            ("scale_min", model.scale_min), ("scale_max", model.scale_max)]
    return out


def save_model(model: TabInrModel, path: str | Path, extra: dict | None = None) -> None:
    """Binary checkpoint: magic, uint32 header length, JSON header, then all
    tensors as little-endian float64 in row-major order."""
    tensors = _tensors(model)
    header = {
        "version": VERSION,
        "net": {"dims": model.net.dims, "activation": model.net.activation, "omega0": model.net.omega0,
                "beta": model.net.beta, "dropout": model.net.dropout, "seed": model.net.seed,
                "hidden_omega0": model.net.hidden_omega0},
        # ordered pairs: the header is written with sorted keys
        "schema": [[name, entry] for name, entry in model.schema.to_json().items()],
        "schema_digest": model.schema.digest(),
        "groups": [g.tolist() for g in model.groups],
        "is_binary": model.is_binary.astype(int).tolist(),
        "config": asdict(model.config),
        "tensors": [[name, list(arr.shape)] for name, arr in tensors],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    return _parse(data)[0]


def _parse(data: bytes) -> tuple[dict, int]:
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a TabINR checkpoint (bad magic bytes)")
    off = len(MAGIC)
    if len(data) < off + 4:
        raise CheckpointError("truncated checkpoint header")
    (hlen,) = struct.unpack("<I", data[off:off + 4])
    off += 4
    if len(data) < off + hlen:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(data[off:off + hlen])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    if header.get("version") != VERSION:
        raise CheckpointError(f"checkpoint version {header.get('version')!r}, expected {VERSION!r}")
    return header, off + hlen


def load_model(path: str | Path) -> TabInrModel:
    with open(path, "rb") as fh:
        data = fh.read()
    header, off = _parse(data)
    arrays = {}
    for name, shape in header["tensors"]:
        size = int(np.prod(shape)) if shape else 1
        nbytes = 8 * size
        if len(data) < off + nbytes:
            raise CheckpointError(f"truncated checkpoint while reading {name}")
        arrays[name] = np.frombuffer(data[off:off + nbytes], dtype="<f8").astype(np.float64).reshape(shape)
        off += nbytes
    if off != len(data):
        raise CheckpointError("trailing bytes after checkpoint tensors")
    meta = header["net"]
    n_layers = len(meta["dims"]) - 1
    net = nn.MlpNet([arrays[f"W{l}"] for l in range(n_layers)], [arrays[f"b{l}"] for l in range(n_layers)],
                    meta["activation"], meta["omega0"], meta["beta"], meta["dropout"], meta["seed"],
                    meta.get("hidden_omega0"))
    schema = schema_from_json(dict(header["schema"]))
    return TabInrModel(net, arrays["row_emb"], arrays["feat_emb"],
                       tuple(np.array(g, dtype=int) for g in header["groups"]),
                       np.array(header["is_binary"], dtype=bool), arrays["scale_min"], arrays["scale_max"],
                       schema, TrainConfig.from_dict(header["config"]))


def param_checksum(arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()
