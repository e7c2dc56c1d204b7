"""Benchmark and ablation orchestration.

A run is the product datasets x methods x mechanisms x rates x seeds. Each
cell synthesizes a mask, imputes, scores, and yields one JSON record; a
failing cell records its error and the run continues.

Seed splitting: every task derives its seeds from
``SeedSequence([master_seed, crc32(dataset), mechanism index, round(rate * 1000), seed, stream])``
with stream 0 for the mask and 1 for the model. The method is not part of
the key, so all methods in a cell see the same mask.
"""

from __future__ import annotations

import csv
import json
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .baselines import impute_knn, impute_mean_mode
from .datasets import SYNTHETIC, UCI, load_uci, make_synthetic
from .metrics import MetricsReport, score_imputation
from .missingness import MECHANISMS, MissingnessSpec, synthesize
from .model import TrainConfig, impute, train
from .table import EncodedTable, fit_scaling, hide_cells, load_table, table_from_arrays

METHODS = ("tabinr", "mean_mode", "knn")
RATES = (0.1, 0.3, 0.5, 0.7)
ABLATION_AXES = ("depth", "latent", "width", "activation", "dataset_size", "feature_count", "rate")
_AXIS_FIELD = {"depth": "hidden_layers", "latent": "latent_dim", "width": "hidden_units",
               "activation": "activation"}


class ConfigError(ValueError):
    pass


@dataclass
class BenchConfig:
    datasets: list[dict]
    methods: list[str] = field(default_factory=lambda: ["tabinr", "mean_mode", "knn"])
    mechanisms: list[str] = field(default_factory=lambda: ["MCAR"])
    rates: list[float] = field(default_factory=lambda: [0.3])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    master_seed: int = 0
    # TrainConfig defaults unless overridden
    defaults: dict = field(default_factory=dict)
    knn_k: int = 5
    auroc_level: str = "component"
    observed_subset_fraction: float = 0.3
    workers: int = 1

    def __post_init__(self):
        if not self.datasets:
            raise ConfigError("config lists no datasets")
        for d in self.datasets:
            if "name" not in d:
                raise ConfigError(f"dataset entry without a name: {d}")
            if "path" not in d and d.get("synthetic", d["name"]) not in SYNTHETIC:
                raise ConfigError(f"dataset {d['name']!r} needs a 'path' or a known 'synthetic' kind")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
        self.mechanisms = [m.upper() for m in self.mechanisms]
        for m in self.mechanisms:
            if m not in MECHANISMS:
                raise ConfigError(f"unknown mechanism {m!r}")
        for r in self.rates:
            if not 0.0 <= r <= 1.0:
                raise ConfigError(f"rate {r} outside [0, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            TrainConfig.from_dict(self.defaults)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad defaults block: {exc}") from None

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known - {"sweep"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**{k: v for k, v in d.items() if k in known})
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def read_config(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def task_seeds(master_seed: int, dataset: str, mechanism: str, rate: float, seed: int) -> tuple[int, int]:
    """(mask seed, model seed) for one benchmark cell."""
    key = [master_seed, zlib.crc32(dataset.encode()), MECHANISMS.index(mechanism.upper()),
           int(round(rate * 1000)), seed]
    mask = np.random.SeedSequence(key + [0]).generate_state(1)[0]
    model = np.random.SeedSequence(key + [1]).generate_state(1)[0]
    return int(mask), int(model)


@lru_cache(maxsize=8)
def _load_cached(spec_json: str, seed: int) -> EncodedTable:
    spec = json.loads(spec_json)
    if "path" in spec:
        if spec["name"] in UCI:
            return load_uci(spec["name"], spec["path"], spec.get("schema"))
        return load_table(Path(spec["path"]), spec.get("schema"))
    params = dict(spec.get("params", {}))
    params.setdefault("seed", seed)
    return make_synthetic(spec.get("synthetic", spec["name"]), **params)


def load_dataset(spec: dict, seed: int = 0) -> EncodedTable:
    """Synthetic datasets without an explicit ``params.seed`` are drawn with
    the run seed; file datasets are the same for every seed."""
    table = _load_cached(json.dumps(spec, sort_keys=True), seed)
    return subsample(table, spec.get("max_rows"), spec.get("max_features"), spec.get("subsample_seed", 0))


def subsample(table: EncodedTable, n_rows: int | None = None, n_features: int | None = None,
              seed: int = 0) -> EncodedTable:
    """Random ``n_rows`` rows (kept in file order) and the first ``n_features`` original columns."""
    values, observed, schema = table.values, table.observed, table.schema
    if n_rows is not None and n_rows < table.n_rows:
        keep = np.sort(np.random.default_rng(seed).choice(table.n_rows, n_rows, replace=False))
        values, observed = values[keep], observed[keep]
    if n_features is not None and n_features < len(schema.columns):
        cols = np.concatenate(table.groups[:n_features])
        schema = type(schema)(schema.columns[:n_features])
        values, observed = values[:, cols], observed[:, cols]
    if values is table.values:
        return table
    return table_from_arrays(schema, values, observed)


@dataclass
class Task:
    dataset: dict
    method: str
    mechanism: str
    rate: float
    seed: int
    master_seed: int
    train: dict
    knn_k: int = 5
    auroc_level: str = "component"
    observed_subset_fraction: float = 0.3


def run_task(task: Task) -> dict:
    """Run one cell; never raises. Errors land in the record's ``error``."""
    name = task.dataset["name"]
    mask_seed, model_seed = task_seeds(task.master_seed, name, task.mechanism, task.rate, task.seed)
    resolved = {"dataset": task.dataset, "mask_seed": mask_seed, "master_seed": task.master_seed,
                "observed_subset_fraction": task.observed_subset_fraction, "auroc_level": task.auroc_level}
    if task.method == "tabinr":
        resolved["train"] = {**task.train, "seed": model_seed}
    elif task.method == "knn":
        resolved["k"] = task.knn_k
    report = MetricsReport(name, task.mechanism, task.rate, task.seed, task.method, {}, None, {}, None, 0.0,
                           config=resolved)
    t0 = time.perf_counter()
    try:
        full = load_dataset(task.dataset, task.seed)
        spec = MissingnessSpec(task.mechanism, task.rate, task.observed_subset_fraction, mask_seed)
        pair = synthesize(full, spec)
        resolved["realized_rate"] = pair.realized_rate
        if not pair.mask.any():
            raise ValueError("mask hides no cells; nothing to evaluate")
        table = fit_scaling(hide_cells(full, pair.mask))
        if task.method == "tabinr":
            model, log = train(table, TrainConfig.from_dict(resolved["train"]))
            completed, scores = impute(model, table, pair.mask, return_scores=True)
            resolved["epochs_run"] = len(log.epochs)
            resolved["best_epoch"] = log.best_epoch
        elif task.method == "mean_mode":
            completed, scores = impute_mean_mode(table, pair.mask)
        else:
            completed, scores = impute_knn(table, pair.mask, task.knn_k)
        num, auc = score_imputation(full, completed, scores, pair.mask, task.auroc_level)
        report.nrmse_per_feature, report.nrmse_mean = num.per_feature, num.mean
        report.rmse_per_feature = num.rmse
        report.auroc_per_group, report.auroc_mean = auc.per_feature, auc.mean
    except Exception as exc:  # crash isolation: record and move on
        report.error = f"{type(exc).__name__}: {exc}"
    report.wall_time_s = time.perf_counter() - t0
    return asdict(report)


def make_tasks(cfg: BenchConfig) -> list[Task]:
    base = asdict(TrainConfig.from_dict(cfg.defaults))
    base.pop("seed")
    return [Task(ds, method, mech, float(rate), int(seed), cfg.master_seed, dict(base), cfg.knn_k,
                 cfg.auroc_level, cfg.observed_subset_fraction)
            for ds in cfg.datasets for method in cfg.methods for mech in cfg.mechanisms
            for rate in cfg.rates for seed in cfg.seeds]


def run_tasks(tasks: list[Task], workers: int = 1, progress=None) -> list[dict]:
    """Records in task order regardless of worker count."""
    if workers <= 1 or len(tasks) <= 1:
        out = []
        for t in tasks:
            out.append(run_task(t))
            if progress:
                progress(out[-1])
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        out = []
        for rec in pool.map(run_task, tasks):
            out.append(rec)
            if progress:
                progress(rec)
        return out


def _std(xs: list[float]) -> float:
    return float(np.std(xs, ddof=1)) if len(xs) > 1 else 0.0


SUMMARY_FIELDS = ["dataset", "method", "mechanism", "rate", "n_runs", "n_failed", "nrmse_mean", "nrmse_std",
                  "auroc_mean", "auroc_std", "wall_time_mean_s"]


def summarize(records: list[dict]) -> list[dict]:
    """Mean and sample std (ddof=1, 0 for a single run) of the per-run means
    per (dataset, method, mechanism, rate), in first-appearance order."""
    groups: dict[tuple, list[dict]] = {}
    for r in records:
        groups.setdefault((r["dataset"], r["method"], r["mechanism"], r["rate"]), []).append(r)
    rows = []
    for (ds, method, mech, rate), recs in groups.items():
        ok = [r for r in recs if not r.get("error")]
        nr = [r["nrmse_mean"] for r in ok if r["nrmse_mean"] is not None]
        au = [r["auroc_mean"] for r in ok if r["auroc_mean"] is not None]
        rows.append({
            "dataset": ds, "method": method, "mechanism": mech, "rate": rate,
            "n_runs": len(recs), "n_failed": len(recs) - len(ok),
            "nrmse_mean": float(np.mean(nr)) if nr else None, "nrmse_std": _std(nr) if nr else None,
            "auroc_mean": float(np.mean(au)) if au else None, "auroc_std": _std(au) if au else None,
            "wall_time_mean_s": float(np.mean([r["wall_time_s"] for r in recs])),
        })
    return rows


def write_records(path: str | Path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_records(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_csv(path: str | Path, rows: list[dict], fields: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if r.get(k) is None else r.get(k) for k in fields})


def run_benchmark(cfg: BenchConfig, out_dir: str | Path, workers: int | None = None, progress=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = run_tasks(make_tasks(cfg), workers or cfg.workers, progress)
    write_records(out_dir / "records.jsonl", records)
    summary = summarize(records)
    write_csv(out_dir / "summary.csv", summary, SUMMARY_FIELDS)
    return records, summary


# -- ablation ----------------------------------------------------------------

ABLATION_FIELDS = ["axis", "value", "n_runs", "n_failed", "nrmse_mean", "nrmse_std", "auroc_mean", "auroc_std",
                   "wall_time_mean_s"]


def parse_sweep(d: dict) -> tuple[str, list]:
    sweep = d.get("sweep")
    if not isinstance(sweep, dict) or not sweep:
        raise ConfigError("ablation config needs a 'sweep' object with one axis")
    if len(sweep) > 1:
        raise ConfigError(f"conflicting sweep axes {sorted(sweep)}; sweep one axis per run")
    (axis, values), = sweep.items()
    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {ABLATION_AXES}")
    if not isinstance(values, list) or not values:
        raise ConfigError("sweep values must be a non-empty list")
    if axis == "rate" and len(d.get("rates", [0.3])) > 1:
        raise ConfigError("sweeping 'rate' conflicts with several base rates")
    return axis, values


def ablation_tasks(cfg: BenchConfig, axis: str, values: list) -> list[tuple[object, Task]]:
    if len(cfg.datasets) != 1:
        raise ConfigError("ablation runs on exactly one dataset")
    out = []
    for v in values:
        c = BenchConfig(**{**asdict(cfg), "methods": ["tabinr"]})
        if axis in _AXIS_FIELD:
            c.defaults = {**c.defaults, _AXIS_FIELD[axis]: v}
        elif axis == "rate":
            c.rates = [float(v)]
        elif axis == "dataset_size":
            c.datasets = [{**c.datasets[0], "max_rows": int(v)}]
        elif axis == "feature_count":
            c.datasets = [{**c.datasets[0], "max_features": int(v)}]
        c.__post_init__()
        out += [(v, t) for t in make_tasks(c)]
    return out


def run_ablation(d: dict, out_path: str | Path, workers: int | None = None, progress=None):
    axis, values = parse_sweep(d)
    cfg = BenchConfig.from_dict(d)
    pairs = ablation_tasks(cfg, axis, values)
    records = run_tasks([t for _, t in pairs], workers or cfg.workers, progress)
    rows = []
    for v in values:
        recs = [r for (val, _), r in zip(pairs, records) if val == v]
        s = summarize(recs)[0]
        rows.append({"axis": axis, "value": v, **{k: s[k] for k in ABLATION_FIELDS[2:]}})
    out_path = Path(out_path)
    write_csv(out_path, rows, ABLATION_FIELDS)
    write_records(out_path.with_suffix(".jsonl"), records)
    return rows, records

