"""Synthetic MCAR / MAR / MNAR masks over an encoded table.

Masks are drawn at original-column granularity, so a categorical cell hides
its whole one-hot group. Only natively observed cells are ever masked.

RNG stream (shared by MAR and MNAR, which is what makes the MNAR mask a
superset of the MAR mask for the same seed):

1. ``rng.permutation(m)``: the first ``ceil(frac * m)`` entries are the
   always-observed columns.
2. ``rng.standard_normal((n_inputs, n_maskable))``: logistic weights.
3. ``rng.random((n, m))``: one uniform per (row, original column), row-major.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .table import EncodedTable, expand_original_mask

MECHANISMS = ("MCAR", "MAR", "MNAR")


@dataclass(frozen=True)
class MissingnessSpec:
    mechanism: str = "MCAR"
    p_miss: float = 0.3
    observed_subset_fraction: float = 0.3
    seed: int = 0
    # which columns get the extra Bernoulli stage under MNAR: "subset" or "all"
    mnar_second_stage: str = "subset"

    def __post_init__(self):
        mech = self.mechanism.upper()
        if mech not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        object.__setattr__(self, "mechanism", mech)
        if not 0.0 <= self.p_miss <= 1.0:
            raise ValueError(f"p_miss must be in [0, 1], got {self.p_miss}")
        if not 0.0 < self.observed_subset_fraction < 1.0:
            raise ValueError("observed_subset_fraction must be in (0, 1)")
        if self.mnar_second_stage not in ("subset", "all"):
            raise ValueError(f"unknown mnar_second_stage {self.mnar_second_stage!r}")


@dataclass(frozen=True, eq=False)
class MaskPair:
    """``mask`` is True where a cell was artificially hidden; ``truth`` holds
    those cells' values and NaN everywhere else."""

    mask: np.ndarray
    truth: np.ndarray
    spec: MissingnessSpec
    realized_rate: float
    overall_rate: float
    always_observed: tuple[int, ...] = ()


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def calibrate_intercept(probability_fn: Callable[[float], float], target_rate: float,
                        lo: float = -50.0, hi: float = 50.0, tol: float = 1e-6) -> float:
    """Bisection for b with probability_fn(b) == target_rate (increasing fn).

    The bracket is widened tenfold once before giving up.
    """
    if not 0.0 < target_rate < 1.0:
        raise ValueError(f"target_rate must be in (0, 1), got {target_rate}")
    for attempt in range(2):
        f_lo, f_hi = probability_fn(lo), probability_fn(hi)
        if f_lo - tol <= target_rate <= f_hi + tol:
            break
        if attempt == 1:
            raise ValueError(f"target rate {target_rate} unreachable in [{lo}, {hi}]")
        lo, hi = lo * 10, hi * 10
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = probability_fn(mid)
        if abs(f_mid - target_rate) <= tol:
            return mid
        if f_mid < target_rate:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    if abs(probability_fn(mid) - target_rate) > tol:
        raise ValueError("bisection failed to reach tolerance (degenerate scores)")
    return mid


def _finish(table: EncodedTable, orig_mask: np.ndarray, spec: MissingnessSpec,
            eligible: np.ndarray, subset: tuple[int, ...] = ()) -> MaskPair:
    orig_obs = table.original_observed()
    orig_mask = orig_mask & orig_obs
    mask = expand_original_mask(table, orig_mask)
    truth = np.where(mask, table.values, np.nan)
    n_elig = int((orig_obs & eligible).sum())
    realized = float(orig_mask[eligible & orig_obs].sum() / n_elig) if n_elig else 0.0
    n_obs = int(orig_obs.sum())
    overall = float(orig_mask.sum() / n_obs) if n_obs else 0.0
    return MaskPair(mask, truth, spec, realized, overall, subset)


def mask_mcar(table: EncodedTable, p_miss: float, seed: int) -> MaskPair:
    spec = MissingnessSpec("MCAR", p_miss, seed=seed)
    rng = np.random.default_rng(seed)
    u = rng.random((table.n_rows, len(table.groups)))
    eligible = np.ones_like(u, dtype=bool)
    return _finish(table, u < p_miss, spec, eligible)


def _standardized_inputs(table: EncodedTable, subset: np.ndarray) -> np.ndarray:
    cols = np.concatenate([table.groups[k] for k in subset])
    x = np.array(table.values[:, cols])
    obs = table.observed[:, cols]
    for t in range(x.shape[1]):
        col = x[obs[:, t], t]
        mu = col.mean() if col.size else 0.0
        sd = col.std() if col.size else 0.0
        x[:, t] = (x[:, t] - mu) / (sd if sd > 0 else 1.0)
    x[~obs] = 0.0
    return x


def _logistic_stage(table: EncodedTable, spec: MissingnessSpec):
    n, m = table.n_rows, len(table.groups)
    if m < 2:
        raise ValueError("MAR/MNAR need at least 2 columns")
    n_keep = math.ceil(spec.observed_subset_fraction * m)
    if n_keep < 1 or n_keep >= m:
        raise ValueError(f"subset fraction {spec.observed_subset_fraction} leaves no maskable columns")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(m)
    subset = np.sort(perm[:n_keep])
    maskable = np.sort(perm[n_keep:])
    x = _standardized_inputs(table, subset)
    weights = rng.standard_normal((x.shape[1], maskable.size))
    u = rng.random((n, m))
    scores = x @ weights

    probs = np.zeros((n, maskable.size))
    p = spec.p_miss
    for t in range(maskable.size):
        if p <= 0.0:
            continue
        if p >= 1.0:
            probs[:, t] = 1.0
            continue
        s = scores[:, t]
        b = calibrate_intercept(lambda b: float(sigmoid(s + b).mean()), p)
        probs[:, t] = sigmoid(s + b)
    orig_mask = np.zeros((n, m), dtype=bool)
    orig_mask[:, maskable] = u[:, maskable] < probs
    return orig_mask, subset, maskable, u


def mask_mar(table: EncodedTable, spec: MissingnessSpec) -> MaskPair:
    orig_mask, subset, maskable, _ = _logistic_stage(table, spec)
    eligible = np.zeros_like(orig_mask)
    eligible[:, maskable] = True
    return _finish(table, orig_mask, spec, eligible, tuple(int(k) for k in subset))


def mask_mnar(table: EncodedTable, spec: MissingnessSpec) -> MaskPair:
    orig_mask, subset, maskable, u = _logistic_stage(table, spec)
    if spec.mnar_second_stage == "subset":
        orig_mask[:, subset] = u[:, subset] < spec.p_miss
    else:
        # a second uniform draw so cells already past the logistic stage get a fresh coin
        rng = np.random.default_rng([spec.seed, 1])
        extra = rng.random(orig_mask.shape) < spec.p_miss
        orig_mask[:, subset] = u[:, subset] < spec.p_miss
        orig_mask[:, maskable] |= extra[:, maskable]
    eligible = np.ones_like(orig_mask)
    return _finish(table, orig_mask, spec, eligible, tuple(int(k) for k in subset))


def synthesize(table: EncodedTable, spec: MissingnessSpec) -> MaskPair:
    if spec.mechanism == "MCAR":
        pair = mask_mcar(table, spec.p_miss, spec.seed)
        return MaskPair(pair.mask, pair.truth, spec, pair.realized_rate, pair.overall_rate)
    if spec.mechanism == "MAR":
        return mask_mar(table, spec)
    return mask_mnar(table, spec)
