"""Command-line interface.

Exit codes: 0 success, 2 bad arguments or config, 3 I/O failure,
4 data validation failure (bad table, mask, checkpoint or lineage).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench
from .missingness import MissingnessSpec, synthesize
from .model import (CheckpointError, TrainConfig, TrainingDivergedError, ScaleView, impute, load_model, read_header,
                    save_model, train)
from .table import (EncodedTable, MaskedAccessError, TableError, TableSchema, decode_rows, expand_original_mask,
                    fit_scaling, hide_cells, load_table, read_schema, scale_values, schema_from_json, write_mask_csv,
                    write_table_csv)
from .tta import TtaConfig, TtaDivergedError, adapt_row, impute_row, parse_row_text

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DATA = 0, 2, 3, 4

log = logging.getLogger("tabinr")


class LineageError(ValueError):
    """Data schema does not match the checkpoint it is used with."""


class UsageError(ValueError):
    pass


def _sidecar(path: str | Path) -> Path:
    return Path(path).with_suffix(".json")


def _load_data(args, schema: TableSchema | dict | None = None) -> EncodedTable:
    if not args.data:
        raise UsageError("--data is required")
    if schema is None and args.schema:
        schema = read_schema(args.schema)
    return load_table(Path(args.data), schema)


def _read_mask(path: str | Path, table: EncodedTable) -> np.ndarray:
    """Mask CSV of 0/1, either one column per original feature or one per
    expanded (one-hot) column."""
    arr = np.loadtxt(path, delimiter=",", dtype=int, ndmin=2)
    if arr.size == 0:
        arr = arr.reshape(0, len(table.groups))
    if not np.isin(arr, (0, 1)).all():
        raise TableError(f"{path}: mask entries must be 0 or 1")
    if arr.shape == (table.n_rows, len(table.groups)):
        return expand_original_mask(table, arr.astype(bool))
    if arr.shape == table.shape:
        mask = arr.astype(bool)
        for g in table.groups:
            if (mask[:, g].any(axis=1) != mask[:, g].all(axis=1)).any():
                raise TableError(f"{path}: mask splits a one-hot group")
        return mask
    raise TableError(f"{path}: mask shape {arr.shape} matches neither {(table.n_rows, len(table.groups))} "
                     f"nor {table.shape}")


def _read_json(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: {exc}") from None


# -- subcommands -------------------------------------------------------------

def cmd_synthesize(args) -> int:
    table = _load_data(args)
    if args.rate is None or not 0.0 <= args.rate <= 1.0:
        raise UsageError("--rate must be given and lie in [0, 1]")
    spec = MissingnessSpec(args.mechanism, args.rate, args.subset_fraction, args.seed)
    pair = synthesize(table, spec)
    orig = np.stack([pair.mask[:, g[0]] for g in table.groups], axis=1)
    out = Path(args.out or "mask.csv")
    write_mask_csv(out, orig)
    side = {"mechanism": spec.mechanism, "rate": spec.p_miss, "seed": spec.seed,
            "observed_subset_fraction": spec.observed_subset_fraction,
            "realized_rate": pair.realized_rate, "overall_rate": pair.overall_rate,
            "always_observed": [table.schema.names[k] for k in pair.always_observed],
            "n_rows": table.n_rows, "n_columns": len(table.groups), "schema_digest": table.schema.digest()}
    with open(_sidecar(out), "w", encoding="utf-8") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)
    print(f"wrote {out} (realized rate {pair.realized_rate:.4f})")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    d = _read_json(args.config) if args.config else {}
    d = dict(d.get("defaults", d))
    if args.seed is not None:
        d["seed"] = args.seed
    if args.epochs is not None:
        d["epochs"] = args.epochs
    try:
        return TrainConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad training config: {exc}") from None


def cmd_train(args) -> int:
    config = _train_config(args)
    table = _load_data(args)
    if args.mask:
        table = hide_cells(table, _read_mask(args.mask, table))
    table = fit_scaling(table)

    def report(rec):
        log.info("epoch %d train %.6g val %.6g lr %.3g", rec.epoch, rec.train_loss, rec.val_loss, rec.lr)

    model, tlog = train(table, config, callback=report)
    out = Path(args.out or "model.tabinr")
    save_model(model, out, extra={"data": str(args.data), "best_epoch": tlog.best_epoch,
                                  "best_val_loss": tlog.best_val_loss})
    loss_csv = args.loss_csv or str(out) + ".losses.csv"
    tlog.to_csv(loss_csv)
    print(f"wrote {out}; {len(tlog.epochs)} epochs, best {tlog.best_epoch} (val {tlog.best_val_loss:.6g}); "
          f"losses in {loss_csv}")
    return EXIT_OK


def _checked_schema(args, header: dict) -> TableSchema:
    """Schema stored in the checkpoint; a --schema file must hash to the same digest."""
    stored = schema_from_json(dict(header["schema"]))
    if stored.digest() != header["schema_digest"]:
        raise CheckpointError("checkpoint schema does not match its recorded digest")
    if args.schema:
        given = read_schema(args.schema)
        if given.digest() != stored.digest():
            raise LineageError(f"schema {args.schema} (digest {given.digest()}) does not match the checkpoint "
                               f"(digest {stored.digest()})")
    return stored


def cmd_impute(args) -> int:
    if not args.model:
        raise UsageError("--model is required")
    header = read_header(args.model)
    schema = _checked_schema(args, header)
    model = load_model(args.model)
    table = _load_data(args, schema)
    if table.shape != (model.n_rows, model.n_cols):
        raise LineageError(f"data has shape {table.shape}, checkpoint was trained on {(model.n_rows, model.n_cols)}")
    mask = _read_mask(args.mask, table) if args.mask else np.zeros(table.shape, bool)
    holder = ScaleView(model)
    scaled = replace(table, values=scale_values(holder, table.values), scale_min=model.scale_min,
                     scale_max=model.scale_max)
    completed = impute(model, scaled, mask, original=table.values)
    if args.out:
        write_table_csv(args.out, table.schema, completed)
        print(f"wrote {args.out}")
    else:
        w = csv.writer(sys.stdout)
        w.writerow(table.schema.names)
        w.writerows(decode_rows(table.schema, completed))
    return EXIT_OK


def cmd_tta(args) -> int:
    if not args.model or not args.row:
        raise UsageError("--model and --row are required")
    header = read_header(args.model)
    _checked_schema(args, header)
    model = load_model(args.model)
    text = Path(args.row).read_text(encoding="utf-8") if os.path.isfile(args.row) else args.row
    rows = parse_row_text(model, text)
    tcfg = TtaConfig(seed=args.seed if args.seed is not None else 0)
    completed, traces = [], []
    for k, row in enumerate(rows):
        lam, trace = adapt_row(model, row, replace(tcfg, seed=tcfg.seed + k))
        completed.append(impute_row(model, lam, row))
        traces.append({"row": k, "steps": trace.steps, "final_loss": trace.best_loss,
                       "restarts": trace.restarts})
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(model.schema.names)
    w.writerows(decode_rows(model.schema, np.array(completed)))
    trace_json = json.dumps(traces if len(traces) > 1 else traces[0], indent=2)
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
        _sidecar(args.out).write_text(trace_json, encoding="utf-8")
        print(f"wrote {args.out} and {_sidecar(args.out)}")
    else:
        sys.stdout.write(buf.getvalue())
        sys.stderr.write(trace_json + "\n")
    return EXIT_OK


def _bench_config(args) -> dict:
    if not args.config:
        raise UsageError("--config is required")
    d = bench.read_config(args.config)
    if args.seed is not None:
        d["master_seed"] = args.seed
    for ds in d.get("datasets", []):
        if "path" in ds and not Path(ds["path"]).is_file():
            raise FileNotFoundError(f"dataset file not found: {ds['path']}")
    return d


def _progress(rec):
    status = rec["error"] or f"nrmse {rec['nrmse_mean']} auroc {rec['auroc_mean']}"
    log.info("%s %s %s %.2f seed %d: %s", rec["dataset"], rec["method"], rec["mechanism"], rec["rate"],
             rec["seed"], status)


def cmd_benchmark(args) -> int:
    cfg = bench.BenchConfig.from_dict(_bench_config(args))
    out = Path(args.out or "bench_out")
    records, summary = bench.run_benchmark(cfg, out, args.workers, _progress)
    failed = sum(1 for r in records if r["error"])
    print(f"wrote {out / 'records.jsonl'} ({len(records)} records, {failed} failed) and {out / 'summary.csv'}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    d = _bench_config(args)
    out = Path(args.out or "ablation.csv")
    rows, _ = bench.run_ablation(d, out, args.workers, _progress)
    print(f"wrote {out} ({len(rows)} rows)")
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.data:
        raise UsageError("--data (a records.jsonl file) is required")
    summary = bench.summarize(bench.read_records(args.data))
    if args.out:
        bench.write_csv(args.out, summary, bench.SUMMARY_FIELDS)
        print(f"wrote {args.out}")
    else:
        w = csv.DictWriter(sys.stdout, fieldnames=bench.SUMMARY_FIELDS)
        w.writeheader()
        for r in summary:
            w.writerow({k: "" if r[k] is None else r[k] for k in bench.SUMMARY_FIELDS})
    return EXIT_OK


COMMANDS = {
    "synthesize": (cmd_synthesize, "write a synthetic missingness mask for a CSV"),
    "train": (cmd_train, "fit a TabINR model on the observed cells of a CSV"),
    "impute": (cmd_impute, "complete a CSV with a trained model"),
    "tta": (cmd_tta, "complete new partial rows by test-time adaptation"),
    "benchmark": (cmd_benchmark, "run a benchmark grid from a JSON config"),
    "ablate": (cmd_ablate, "sweep one hyperparameter axis from a JSON config"),
    "report": (cmd_report, "re-aggregate benchmark records into a summary CSV"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tabinr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        s = sub.add_parser(name, help=help_)
        s.add_argument("--data", help="input CSV (report: records.jsonl)")
        s.add_argument("--schema", help="schema JSON {column: {kind, categories}}")
        s.add_argument("--mask", help="0/1 mask CSV (1 = hide / evaluate)")
        s.add_argument("--model", help="model checkpoint")
        s.add_argument("--config", help="JSON config")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--out", help="output path")
        s.add_argument("--workers", type=int, default=None)
        s.add_argument("--mechanism", default="MCAR", type=str.upper, choices=["MCAR", "MAR", "MNAR"])
        s.add_argument("--rate", type=float, default=None)
        if name == "synthesize":
            s.add_argument("--subset-fraction", type=float, default=0.3,
                           help="fraction of columns kept fully observed under MAR / MNAR")
        if name == "train":
            s.add_argument("--epochs", type=int, default=None)
            s.add_argument("--loss-csv", default=None)
        if name == "tta":
            s.add_argument("--row", help="CSV line(s) or a file of rows; empty fields are missing")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "synthesize" and args.seed is None:
        args.seed = 0
    if args.workers is not None and args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    fn = COMMANDS[args.command][0]
    try:
        return fn(args)
    except (UsageError, bench.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TableError, MaskedAccessError, CheckpointError, LineageError, TrainingDivergedError,
            TtaDivergedError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
