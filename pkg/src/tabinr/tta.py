"""Test-time adaptation: fit a fresh row embedding for an unseen partial row.

The network and feature embeddings stay frozen; only lambda_new is optimized
(Adam) on the row's observed cells, then the missing cells are predicted
from [lambda_new ; c_j] like any training row.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .model import TabInrModel, ScaleView, _complete, cell_losses, param_checksum, predict_matrix
from .table import TableError, encode_rows, scale_values


class TtaDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True, eq=False)
class PartialRow:
    """One encoded row in scaled units; unobserved entries are NaN.

    ``raw`` optionally holds the same row in original units so that
    imputation can pass observed entries through unchanged.
    """

    values: np.ndarray
    observed: np.ndarray
    raw: np.ndarray | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).ravel()
        observed = np.array(self.observed, dtype=bool).ravel()
        if values.shape != observed.shape:
            raise ValueError("values and observed differ in length")
        if not observed.any():
            raise ValueError("partial row has no observed cells")
        if not np.all(np.isfinite(values[observed])):
            raise ValueError("observed entries must be finite")
        values = np.where(observed, values, np.nan)
        values.flags.writeable = False
        observed.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "observed", observed)
        if self.raw is not None:
            raw = np.array(self.raw, dtype=np.float64).ravel()
            if raw.shape != values.shape:
                raise ValueError("raw and values differ in length")
            raw.flags.writeable = False
            object.__setattr__(self, "raw", raw)

    @property
    def width(self) -> int:
        return self.values.shape[0]

    @property
    def support(self) -> np.ndarray:
        """Expanded column indices with an observed value, Omega(P)."""
        return np.flatnonzero(self.observed)

    def check_groups(self, groups) -> None:
        for g in groups:
            obs = self.observed[g]
            if obs.any() and not obs.all():
                raise ValueError(f"one-hot group at columns {g.tolist()} is partially observed")
            if len(g) > 1 and obs.all():
                v = self.values[g]
                if not (np.isin(v, (0.0, 1.0)).all() and v.sum() == 1.0):
                    raise ValueError(f"one-hot group at columns {g.tolist()} is not a valid one-hot")


def partial_row_from_fields(model: TabInrModel, fields) -> PartialRow:
    """Encode raw string fields (schema order, empty = missing) and scale
    them with the model's training-time scaling."""
    values, observed = encode_rows([list(fields)], model.schema)
    scaled = scale_values(ScaleView(model), values)
    return PartialRow(scaled[0], observed[0], values[0])


def parse_row_text(model: TabInrModel, text: str) -> list[PartialRow]:
    """Parse one or more CSV lines (no header) into partial rows. A first
    line equal to the schema's column names is skipped."""
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(f.strip() for f in r)]
    if rows and [f.strip() for f in rows[0]] == model.schema.names:
        rows = rows[1:]
    if not rows:
        raise TableError("no data rows")
    return [partial_row_from_fields(model, r) for r in rows]


@dataclass
class TtaConfig:
    lr: float = 1e-3
    max_steps: int = 200
    # stop once the best loss improved by less than tol (relative to its level
    # `window` steps ago) and the current loss sits within tol of the best.
    # Adam oscillates on these fits; best-so-far alone stalls mid-swing.
    tol: float = 1e-6
    window: int = 10
    # None: use the std the model's embeddings were initialized with
    init_std: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")


@dataclass
class TtaTrace:
    losses: list[float] = field(default_factory=list)
    best_loss: float = float("inf")
    best_step: int = -1
    restarts: int = 0

    @property
    def steps(self) -> int:
        return len(self.losses)

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(np.asarray(self.losses)) if self.losses else np.empty(0)

    def to_dict(self) -> dict:
        return {"steps": self.steps, "final_loss": self.best_loss, "best_step": self.best_step,
                "restarts": self.restarts, "losses": list(self.losses)}


def _frozen_checksum(model: TabInrModel) -> str:
    return param_checksum(list(model.net.params().values()) + [model.feat_emb])


def _fit(model: TabInrModel, row: PartialRow, config: TtaConfig, seed_seq: np.random.SeedSequence,
         trace: TtaTrace) -> np.ndarray:
    cols = row.support
    target = row.values[cols]
    binary = model.is_binary[cols]
    feats = model.feat_emb[cols]
    d = model.latent_dim
    std = config.init_std if config.init_std is not None else model.config.embedding_init_std
    lam = std * np.random.default_rng(seed_seq).standard_normal(d)
    params = {"lam": lam}
    state = nn.OptimizerState(lr=config.lr)
    best, best_lam = np.inf, lam.copy()
    history = []
    for step in range(config.max_steps):
        x = np.concatenate([np.broadcast_to(lam, (len(cols), d)), feats], axis=1)
        pred, cache = nn.forward_batch(model.net, x)
        losses, dpred = cell_losses(pred, target, binary)
        loss = float(losses.mean())
        if not np.isfinite(loss):
            raise TtaDivergedError(f"non-finite TTA loss at step {step}")
        trace.losses.append(loss)
        if loss < best:
            best, best_lam = loss, lam.copy()
            trace.best_loss, trace.best_step = loss, len(trace.losses) - 1
        history.append(best)
        if len(history) > config.window:
            ref = history[-1 - config.window]
            if ref - best < config.tol * ref and loss - best <= config.tol * best:
                break
        _, dx = nn.backward_batch(model.net, cache, dpred / len(cols))
        try:
            nn.adam_step(params, {"lam": dx[:, :d].sum(axis=0)}, state)
        except nn.NonFiniteGradientError:
            raise TtaDivergedError(f"non-finite TTA gradient at step {step}") from None
    return best_lam


def adapt_row(model: TabInrModel, row: PartialRow, config: TtaConfig | None = None):
    """Optimize a fresh row embedding on the observed cells of ``row``.

    Returns ``(lambda_new, trace)`` where lambda_new is the best iterate.
    A diverging fit is restarted once from a fresh seed.
    """
    config = config or TtaConfig()
    if row.width != model.n_cols:
        raise ValueError(f"row width {row.width} != model width {model.n_cols}")
    row.check_groups(model.groups)
    before = _frozen_checksum(model)
    first, second = np.random.SeedSequence(config.seed).spawn(2)
    trace = TtaTrace()
    try:
        lam = _fit(model, row, config, first, trace)
    except TtaDivergedError:
        trace = TtaTrace(restarts=1)
        lam = _fit(model, row, config, second, trace)
    if _frozen_checksum(model) != before:
        raise RuntimeError("frozen parameters changed during test-time adaptation")
    return lam, trace


def impute_row(model: TabInrModel, lam: np.ndarray, row: PartialRow, return_scores: bool = False):
    """Complete ``row`` in original units: observed entries pass through,
    missing ones come from the network with the adapted embedding."""
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (model.latent_dim,):
        raise ValueError(f"embedding shape {lam.shape} != ({model.latent_dim},)")
    if row.width != model.n_cols:
        raise ValueError(f"row width {row.width} != model width {model.n_cols}")
    raw = predict_matrix(model, lam[None, :])
    fill = ~row.observed[None, :]
    original = None if row.raw is None else np.asarray(row.raw, dtype=np.float64)[None, :]
    res = _complete(model, row.values[None, :], fill, raw, return_scores, original)
    if return_scores:
        return res[0][0], res[1][0]
    return res[0]


def adapt_rows(model: TabInrModel, rows, config: TtaConfig | None = None):
    """Adapt and impute each row independently. Row k uses seed
    ``config.seed + k`` so results do not depend on batch composition
    beyond position. Returns (completed matrix, list of traces)."""
    config = config or TtaConfig()
    out, traces = [], []
    for k, row in enumerate(rows):
        cfg = TtaConfig(config.lr, config.max_steps, config.tol, config.window, config.init_std,
                        config.seed + k)
        lam, trace = adapt_row(model, row, cfg)
        out.append(impute_row(model, lam, row))
        traces.append(trace)
    return np.array(out), traces
