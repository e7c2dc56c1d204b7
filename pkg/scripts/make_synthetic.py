#!/usr/bin/env python3
"""Write a synthetic table as CSV plus its schema JSON.

    python scripts/make_synthetic.py rank1 --n 500 --m 8 --out data/rank1.csv
"""

import argparse
import json
from pathlib import Path

from tabinr.datasets import SYNTHETIC, make_synthetic
from tabinr.table import write_table_csv


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("kind", choices=sorted(SYNTHETIC))
    p.add_argument("--n", type=int, default=None, help="rows")
    p.add_argument("--m", type=int, default=None, help="numeric columns (rank1, linear, correlated_gaussian)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    args = p.parse_args()

    kwargs = {"seed": args.seed}
    if args.n is not None:
        kwargs["n"] = args.n
    if args.m is not None:
        kwargs["m_numeric" if args.kind in ("logistic_categorical", "letter_like") else "m"] = args.m
    table = make_synthetic(args.kind, **kwargs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_table_csv(out, table.schema, table.values)
    schema_path = out.with_suffix(".schema.json")
    schema_path.write_text(json.dumps(table.schema.to_json(), indent=2))
    print(f"wrote {out} ({table.n_rows} rows, {len(table.groups)} columns) and {schema_path}")


if __name__ == "__main__":
    main()
