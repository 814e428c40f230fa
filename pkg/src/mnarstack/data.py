"""Rectangular datasets with missingness masks and variable-type metadata."""

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError

CONTINUOUS = "continuous"
BINARY = "binary"


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    kind: str = CONTINUOUS


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """An ``n x p`` dataset whose missing cells are masked out.

    Missing cells hold ``NaN`` as a sentinel, but every code path consults
    ``observed`` instead of the stored value. Both arrays are read-only.

    Attributes
    ----------
    values : ndarray of shape (n, p)
        Cell values; binary columns are coded 0/1.
    observed : ndarray of bool, shape (n, p)
        ``True`` where the cell was measured.
    col_meta : tuple of ColumnMeta
        Per-column name and kind.
    """

    values: np.ndarray
    observed: np.ndarray
    col_meta: tuple

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        observed = np.array(self.observed, dtype=bool)
        if values.ndim != 2 or values.shape != observed.shape:
            raise DataError("values and observed must be 2-D arrays of the same shape")
        if len(self.col_meta) != values.shape[1]:
            raise DataError("col_meta length does not match the number of columns")
        names = [c.name for c in self.col_meta]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate column names: {names}")
        values[~observed] = np.nan
        if not np.all(np.isfinite(values[observed])):
            raise DataError("observed cells must be finite numbers")
        for j, meta in enumerate(self.col_meta):
            if meta.kind not in (CONTINUOUS, BINARY):
                raise DataError(f"column {meta.name!r}: unknown kind {meta.kind!r}")
            if meta.kind == BINARY:
                col = values[observed[:, j], j]
                if not np.all((col == 0) | (col == 1)):
                    raise DataError(f"binary column {meta.name!r} has values outside {{0, 1}}")
        values.flags.writeable = False
        observed.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "observed", observed)
        object.__setattr__(self, "col_meta", tuple(self.col_meta))

    @classmethod
    def from_arrays(cls, values, observed=None, names=None, kinds=None):
        """Build a DataMatrix, treating ``NaN`` as missing when no mask is given."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if observed is None:
            observed = ~np.isnan(values)
        p = values.shape[1]
        names = list(names) if names is not None else [f"Z{j + 1}" for j in range(p)]
        if kinds is None:
            kinds = [_infer_kind(values[np.asarray(observed)[:, j], j]) for j in range(p)]
        return cls(values, observed, tuple(ColumnMeta(nm, k) for nm, k in zip(names, kinds)))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def names(self) -> list:
        return [c.name for c in self.col_meta]

    def kind(self, j: int) -> str:
        return self.col_meta[j].kind

    def column_index(self, name) -> int:
        if isinstance(name, (int, np.integer)):
            if not 0 <= name < self.p:
                raise DataError(f"column index {name} out of range 0..{self.p - 1}")
            return int(name)
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown column {name!r}; have {self.names}") from None

    def missing_columns(self) -> list:
        """Indices of columns with at least one missing cell, ascending."""
        return [j for j in range(self.p) if not self.observed[:, j].all()]


def _infer_kind(observed_values) -> str:
    vals = np.asarray(observed_values)
    if vals.size and np.all((vals == 0) | (vals == 1)):
        return BINARY
    return CONTINUOUS


def load_csv(path, na_token: str = "NA", binary: Optional[Iterable[str]] = None) -> DataMatrix:
    """Read a comma-delimited file with a header row.

    Parameters
    ----------
    path : path-like
        UTF-8 CSV file.
    na_token : str
        Cell text marking a missing value. Empty cells are also missing.
    binary : iterable of str, optional
        Explicit set of binary column names. When given it replaces kind
        inference entirely: listed columns are binary, all others continuous.
        Otherwise a column is binary iff its observed values are all 0 or 1.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file, header row required")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        dups = sorted({h for h in header if header.count(h) > 1})
        raise DataError(f"{path}: duplicate column names {dups}")
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    n, p = len(body), len(header)
    values = np.full((n, p), np.nan)
    observed = np.zeros((n, p), dtype=bool)
    for i, row in enumerate(body):
        if len(row) != p:
            raise DataError(f"{path}: row {i + 2} has {len(row)} fields, header has {p}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == na_token or cell == "":
                continue
            try:
                x = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: row {i + 2}, column {header[j]!r}: cannot parse {cell!r} as a number"
                    " (categorical variables are not supported)"
                ) from None
            if not math.isfinite(x):
                raise DataError(f"{path}: row {i + 2}, column {header[j]!r}: non-finite value {cell!r}")
            values[i, j] = x
            observed[i, j] = True
    if binary is None:
        kinds = [_infer_kind(values[observed[:, j], j]) for j in range(p)]
    else:
        binary = set(binary)
        unknown = binary - set(header)
        if unknown:
            raise DataError(f"binary columns not in header: {sorted(unknown)}")
        kinds = [BINARY if h in binary else CONTINUOUS for h in header]
    return DataMatrix(values, observed, tuple(ColumnMeta(h, k) for h, k in zip(header, kinds)))


def format_value(x: float, kind: str = CONTINUOUS) -> str:
    if kind == BINARY:
        return str(int(x))
    return repr(float(x))


def write_csv(data: DataMatrix, path, na_token: str = "NA", extra=None) -> None:
    """Write ``data`` with a header row; missing cells become ``na_token``.

    ``extra`` is an optional ``(name, values)`` pair written as a leading column.
    """
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = data.names if extra is None else [extra[0]] + data.names
        writer.writerow(header)
        for i in range(data.n):
            row = [
                format_value(data.values[i, j], data.kind(j)) if data.observed[i, j] else na_token
                for j in range(data.p)
            ]
            if extra is not None:
                row.insert(0, str(extra[1][i]))
            writer.writerow(row)


@dataclass(frozen=True)
class VariableRole:
    """Column roles: the possibly-MNAR target, other incomplete columns, and W.

    All indices are 0-based column positions.
    """

    target_mnar: int
    mar_missing: tuple = ()
    fully_observed: tuple = ()


def roles_from_names(data: DataMatrix, target, mar: Sequence = None, observed: Sequence = None) -> VariableRole:
    """Resolve role assignments given as column names (or indices).

    Unlisted columns are assigned automatically: complete columns go to
    ``fully_observed`` and incomplete ones to ``mar_missing``.
    """
    t = data.column_index(target)
    mar_idx = [data.column_index(c) for c in (mar or [])]
    obs_idx = [data.column_index(c) for c in (observed or [])]
    listed = {t, *mar_idx, *obs_idx}
    for j in range(data.p):
        if j in listed:
            continue
        (obs_idx if data.observed[:, j].all() else mar_idx).append(j)
    return VariableRole(t, tuple(sorted(mar_idx)), tuple(sorted(obs_idx)))


def validate_roles(data: DataMatrix, roles: VariableRole) -> VariableRole:
    """Check that ``roles`` partitions the columns and matches the mask."""
    groups = [[roles.target_mnar], list(roles.mar_missing), list(roles.fully_observed)]
    flat = [j for g in groups for j in g]
    for j in flat:
        if not 0 <= j < data.p:
            raise DataError(f"role index {j} out of range 0..{data.p - 1}")
    if len(flat) != len(set(flat)) or set(flat) != set(range(data.p)):
        raise DataError(f"roles must partition the {data.p} columns exactly once each: {roles}")
    for j in roles.fully_observed:
        n_miss = int((~data.observed[:, j]).sum())
        if n_miss:
            raise DataError(f"column {data.names[j]!r} is listed as fully observed but has {n_miss} missing cell(s)")
    t = roles.target_mnar
    n_obs = int(data.observed[:, t].sum())
    if n_obs == data.n:
        raise DataError(f"target column {data.names[t]!r} has no missing cells; MNAR correction is degenerate")
    if n_obs == 0:
        raise DataError(f"target column {data.names[t]!r} has no observed cells; its model is inestimable")
    return roles
