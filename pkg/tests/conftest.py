import numpy as np
import pytest

from tabinr.model import LOW_RANK_PRESET as LOW_RANK  # noqa: F401
from tabinr.table import CATEGORICAL, NUMERIC, Column, TableSchema, table_from_arrays


@pytest.fixture
def mixed_schema():
    return TableSchema((Column("x", NUMERIC), Column("c", CATEGORICAL, ("a", "b", "z")), Column("y", NUMERIC)))


@pytest.fixture
def mixed_table(mixed_schema):
    """6 rows: x, one-hot c (3 levels), y; row 4 has c missing, row 5 has y missing."""
    nan = np.nan
    values = np.array([
        [1.0, 1, 0, 0, 10.0],
        [2.0, 0, 1, 0, 20.0],
        [3.0, 0, 0, 1, 30.0],
        [4.0, 1, 0, 0, 40.0],
        [5.0, nan, nan, nan, 50.0],
        [6.0, 0, 1, 0, nan],
    ])
    return table_from_arrays(mixed_schema, values)


def numeric_table(x):
    x = np.asarray(x, dtype=float)
    schema = TableSchema(tuple(Column(f"x{j}", NUMERIC) for j in range(x.shape[1])))
    return table_from_arrays(schema, x)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criterion -> (status, detail); printed after the run
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def record_criterion(n: int, ok: bool | None, detail: str) -> None:
    status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    ACCEPTANCE[n] = (status, detail)
    print(f"criterion {n}: {status} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {status} - {detail}")
