"""Label-keyed time tables (loads, generators, lines) and their CSV layout.

One row per hourly step, one column per network element, header row of
element labels, comma separated, per-unit values at 12 significant digits.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import TableError

FLOAT_FORMAT = "%.12g"
TABLE_KINDS = ("loads", "gens", "lines")


@dataclass(frozen=True)
class Table:
    columns: tuple[str, ...]
    values: np.ndarray  # (n_steps, n_columns)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        cols = tuple(str(c) for c in self.columns)
        if vals.ndim != 2 or vals.shape[1] != len(cols):
            raise TableError(f"values of shape {vals.shape} do not match {len(cols)} columns")
        if len(set(cols)) != len(cols):
            raise TableError("duplicate column labels")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "columns", cols)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    def index(self, label: str) -> int:
        try:
            return self.columns.index(label)
        except ValueError:
            raise KeyError(label) from None

    def column(self, label: str) -> np.ndarray:
        return self.values[:, self.index(label)]

    def select(self, labels: Iterable[str]) -> np.ndarray:
        pos = {c: i for i, c in enumerate(self.columns)}
        return self.values[:, [pos[l] for l in labels]]

    def __eq__(self, other):
        if not isinstance(other, Table):
            return NotImplemented
        return self.columns == other.columns and np.array_equal(self.values, other.values)

    __hash__ = None


def table_filename(kind: str, year, replica) -> str:
    if kind not in TABLE_KINDS:
        raise ValueError(f"unknown table kind {kind!r}")
    return f"{kind}_{year}_{replica}.csv"


def table_to_csv(table: Table) -> str:
    df = pd.DataFrame(table.values, columns=list(table.columns))
    return df.to_csv(index=False, lineterminator="\n", float_format=FLOAT_FORMAT)


def write_table(table: Table, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(table_to_csv(table))


def read_table(
    source,
    labels: Sequence[str] | None = None,
    n_rows: int | None = None,
) -> Table:
    """Read a table CSV, checking row count and (optionally) the header against ``labels``.

    When ``labels`` is given every header must be one of them and every label
    must appear; the returned columns keep the file order.
    """
    if isinstance(source, str) and "\n" in source:
        source = io.StringIO(source)
    try:
        df = pd.read_csv(source, header=0, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise TableError(f"unreadable table: {exc}") from exc
    columns = [str(c) for c in df.columns]
    if labels is not None:
        known = set(labels)
        for c in columns:
            if c not in known:
                raise TableError(f"unknown column header {c!r}")
        missing = [l for l in labels if l not in set(columns)]
        if missing:
            raise TableError(f"missing columns: {missing[:5]}")
    if n_rows is not None and len(df) != n_rows:
        raise TableError(f"table has {len(df)} data rows, expected {n_rows}")
    try:
        values = df.to_numpy().astype(float)
    except ValueError as exc:
        raise TableError(f"non-numeric value in table: {exc}") from exc
    return Table(tuple(columns), values.reshape(len(df), len(columns)))
