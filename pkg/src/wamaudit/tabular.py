"""Tabular data: CSV ingestion, group partitioning and design-matrix encoding.

Columns are typed at load time. A column is numeric when every non-missing
cell parses as a finite number, otherwise categorical with level codes
assigned in order of first appearance. Rows with a missing value in any
used column are dropped listwise and counted.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError

DEFAULT_MIN_GROUP_SIZE = 20


@dataclass(frozen=True)
class Column:
    """One typed column; ``levels`` is None for numeric columns."""

    name: str
    values: np.ndarray
    levels: tuple[str, ...] | None = None

    @property
    def is_categorical(self) -> bool:
        return self.levels is not None

    def __len__(self) -> int:
        return len(self.values)

    def labels(self) -> list[str]:
        """Decode categorical codes back to their text labels."""
        if self.levels is None:
            raise DataError(f"column {self.name!r} is numeric")
        return [self.levels[c] for c in self.values]


@dataclass(frozen=True)
class Dataset:
    columns: tuple[Column, ...]
    n_dropped: int = 0

    def __post_init__(self):
        if not self.columns:
            raise DataError("dataset has no columns")
        n = len(self.columns[0])
        if n < 1:
            raise DataError("zero retained rows")
        for col in self.columns:
            if len(col) != n:
                raise DataError(f"column {col.name!r} has length {len(col)}, expected {n}")
            if col.is_categorical:
                if len(set(col.levels)) != len(col.levels):
                    raise DataError(f"duplicate level labels in column {col.name!r}")
                if col.values.min() < 0 or col.values.max() >= len(col.levels):
                    raise DataError(f"level code out of range in column {col.name!r}")
            elif np.isnan(col.values).any():
                raise DataError(f"numeric column {col.name!r} contains NaN")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError("duplicate column names")

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def n_rows(self) -> int:
        return len(self.columns[0])

    def __contains__(self, name: str) -> bool:
        return name in self.column_names

    def __getitem__(self, name: str) -> Column:
        for col in self.columns:
            if col.name == name:
                return col
        raise DataError(f"unknown column {name!r}")

    def numeric(self, name: str) -> np.ndarray:
        col = self[name]
        if col.is_categorical:
            raise DataError(f"column {name!r} is categorical, expected numeric")
        return col.values

    def with_column(self, column: Column) -> Dataset:
        """Return a copy with ``column`` replacing the column of the same name."""
        cols = tuple(column if c.name == column.name else c for c in self.columns)
        if column.name not in self:
            cols = cols + (column,)
        return Dataset(cols, self.n_dropped)

    @classmethod
    def from_dict(
        cls, data: Mapping[str, Sequence], categorical: Iterable[str] = ()
    ) -> Dataset:
        """Build a dataset from in-memory columns using the CSV typing rules.

        Values that are None, NaN or empty strings count as missing and drop
        their row.
        """
        names = list(data)
        cells = [[_to_cell(v) for v in data[name]] for name in names]
        lengths = {len(c) for c in cells}
        if len(lengths) != 1:
            raise DataError("columns have unequal lengths")
        return _build(names, list(zip(*cells)), set(categorical))


def _to_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float) and math.isnan(v):
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass(frozen=True)
class SchemaConfig:
    """How to read a CSV file.

    ``columns`` restricts ingestion (and the missing-value rule) to the named
    columns; None means every column. ``categorical`` forces columns to be
    categorical even when all their cells look numeric.
    """

    columns: Sequence[str] | None = None
    categorical: Sequence[str] = ()
    delimiter: str = ","
    na_values: frozenset[str] = frozenset({""})


def read_header(path: str | Path, delimiter: str = ",") -> list[str]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh, delimiter=delimiter), None)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not header:
        raise DataError(f"{path}: empty file")
    return [h.strip() for h in header]


def load_csv(path: str | Path, schema: SchemaConfig | None = None) -> Dataset:
    schema = schema or SchemaConfig()
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh, delimiter=schema.delimiter)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file") from None
            header = [h.strip() for h in header]
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise DataError(
                        f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                    )
                rows.append(row)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    if schema.columns is None:
        keep = list(range(len(header)))
    else:
        missing = [c for c in schema.columns if c not in header]
        if missing:
            raise DataError(f"{path}: columns not found: {missing}")
        keep = [header.index(c) for c in schema.columns]
    names = [header[k] for k in keep]
    rows = [tuple(row[k] for k in keep) for row in rows]
    if not rows:
        raise DataError(f"{path}: no data rows")
    return _build(names, rows, set(schema.categorical), schema.na_values)


def _parse_number(s: str) -> float | None:
    try:
        x = float(s)
    except ValueError:
        return None
    return x if math.isfinite(x) else None


def _build(
    names: list[str],
    rows: list[tuple[str, ...]],
    categorical: set[str],
    na_values: frozenset[str] = frozenset({""}),
) -> Dataset:
    if not rows:
        raise DataError("no data rows")
    cells = [[s.strip() for s in col] for col in zip(*rows)]
    missing = np.zeros(len(rows), dtype=bool)
    numeric = []
    for name, col in zip(names, cells):
        is_na = np.array([s in na_values for s in col])
        is_num = name not in categorical and all(
            na or _parse_number(s) is not None or s.lower() == "nan"
            for s, na in zip(col, is_na)
        )
        if is_num:
            # a literal NaN cell in a numeric column counts as missing
            is_na |= np.array([s.lower() == "nan" for s in col])
        numeric.append(is_num)
        missing |= is_na
    keep = np.flatnonzero(~missing)
    if keep.size == 0:
        raise DataError("zero retained rows after dropping missing values")

    columns = []
    for name, col, is_num in zip(names, cells, numeric):
        kept = [col[k] for k in keep]
        if is_num:
            columns.append(Column(name, np.array([float(s) for s in kept], dtype=np.float64)))
        else:
            levels: dict[str, int] = {}
            codes = np.array([levels.setdefault(s, len(levels)) for s in kept], dtype=np.int64)
            columns.append(Column(name, codes, tuple(levels)))
    return Dataset(tuple(columns), n_dropped=int(missing.sum()))


# ---------------------------------------------------------------------------
# Groups


@dataclass(frozen=True)
class GroupIndex:
    """Partition of rows by scalarized sensitive value.

    ``row_ids[i]`` holds the dataset rows of group ``labels[i]``. A
    resampled index (see :meth:`resample`) may repeat rows.
    """

    labels: tuple[str, ...]
    row_ids: tuple[np.ndarray, ...]
    columns: tuple[str, ...] = ()
    bin_edges: Mapping[str, np.ndarray] = field(default_factory=dict)

    @property
    def s(self) -> int:
        return len(self.labels)

    @property
    def sizes(self) -> list[int]:
        return [len(r) for r in self.row_ids]

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise DataError(f"unknown group label {label!r}; have {list(self.labels)}") from None

    def resample(self, rng: np.random.Generator) -> GroupIndex:
        """Draw n_i rows with replacement independently within each group."""
        ids = tuple(r[rng.integers(0, len(r), size=len(r))] for r in self.row_ids)
        return GroupIndex(self.labels, ids, self.columns, self.bin_edges)


def equal_width_edges(values: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    width = (hi - lo) / bins
    edges = np.array([lo + k * width for k in range(bins + 1)])
    edges[-1] = hi
    return edges


def interval_labels(edges: np.ndarray) -> list[str]:
    """Render right-closed interval labels like ``(18.9,37.7]``.

    The outer edges are widened by 1/1000 of the range so that the minimum
    falls strictly inside the first interval; precision starts at three
    significant digits and grows until adjacent edges render distinctly.
    """
    shown = edges.astype(float).copy()
    pad = (shown[-1] - shown[0]) / 1000
    shown[0] -= pad
    shown[-1] += pad
    for digits in range(3, 16):
        text = [format(e, f".{digits}g") for e in shown]
        if all(a != b for a, b in zip(text[:-1], text[1:])):
            break
    return [f"({a},{b}]" for a, b in zip(text[:-1], text[1:])]


def scalarize_sensitive(
    ds: Dataset,
    sensitive_cols: Sequence[str],
    bins: int | Mapping[str, int] | None = None,
    min_group_size: int = DEFAULT_MIN_GROUP_SIZE,
    sep: str = "",
) -> GroupIndex:
    """Partition rows into groups by the (possibly intersectional) sensitive value.

    With several sensitive columns every observed combination of levels is a
    group, labeled by concatenating the per-column labels with ``sep``
    (``f`` + ``b`` gives ``fb``). Numeric columns need a bin count and are
    cut into equal-width intervals over their observed range.

    Groups are ordered by their per-column keys with the first column varying
    fastest; categorical keys sort by label, interval keys by position.
    """
    if isinstance(sensitive_cols, str):
        sensitive_cols = [sensitive_cols]
    if not sensitive_cols:
        raise DataError("no sensitive columns given")
    keys, names, edges_by_col = [], [], {}
    for name in sensitive_cols:
        col = ds[name]
        if col.is_categorical:
            keys.append(np.asarray(col.values))
            names.append(list(col.levels))
            continue
        nb = bins.get(name) if isinstance(bins, Mapping) else bins
        if nb is None:
            raise DataError(f"numeric sensitive column {name!r} needs a bin count")
        if nb < 1:
            raise DataError(f"bin count must be >= 1, got {nb}")
        edges = equal_width_edges(col.values, nb)
        codes = np.searchsorted(edges[1:-1], col.values, side="left")
        keys.append(codes.astype(np.int64))
        names.append(interval_labels(edges))
        edges_by_col[name] = edges

    tuples = np.stack(keys, axis=1)
    observed = sorted(
        {tuple(t) for t in tuples.tolist()},
        key=lambda t: tuple(
            (names[c][t[c]] if ds[sensitive_cols[c]].is_categorical else t[c])
            for c in reversed(range(len(t)))
        ),
    )
    labels, row_ids = [], []
    for t in observed:
        labels.append(sep.join(names[c][t[c]] for c in range(len(t))))
        row_ids.append(np.flatnonzero((tuples == np.array(t)).all(axis=1)))
    if len(set(labels)) != len(labels):
        raise DataError(f"group labels collide with separator {sep!r}: {labels}")

    small = {lab: len(r) for lab, r in zip(labels, row_ids) if len(r) < min_group_size}
    if small:
        raise DataError(f"groups smaller than min_group_size={min_group_size}: {small}")
    return GroupIndex(tuple(labels), tuple(row_ids), tuple(sensitive_cols), edges_by_col)


# ---------------------------------------------------------------------------
# Encoding


@dataclass(frozen=True)
class ColumnEncoding:
    """How one source column maps to design columns.

    Categorical columns keep the labels of their non-reference levels; the
    reference level and any level unseen at fit time encode as all zeros.
    """

    name: str
    categorical: bool
    reference: str | None = None
    levels: tuple[str, ...] = ()

    @property
    def width(self) -> int:
        return len(self.levels) if self.categorical else 1


@dataclass(frozen=True)
class EncodingMap:
    columns: tuple[ColumnEncoding, ...]
    center_offsets: np.ndarray | None = None

    @property
    def feature_names(self) -> list[str]:
        out = []
        for enc in self.columns:
            if enc.categorical:
                out.extend(f"{enc.name}[{lev}]" for lev in enc.levels)
            else:
                out.append(enc.name)
        return out

    @property
    def width(self) -> int:
        return sum(enc.width for enc in self.columns)

    def transform(self, ds: Dataset, rows: np.ndarray) -> tuple[np.ndarray, int]:
        """Encode ``rows`` of ``ds``; returns the design and the number of unseen-level cells."""
        rows = np.asarray(rows, dtype=np.int64)
        out = np.zeros((len(rows), self.width))
        unseen = 0
        pos = 0
        for enc in self.columns:
            col = ds[enc.name]
            if not enc.categorical:
                if col.is_categorical:
                    raise DataError(f"column {enc.name!r} was numeric at fit time")
                out[:, pos] = col.values[rows]
            else:
                if not col.is_categorical:
                    raise DataError(f"column {enc.name!r} was categorical at fit time")
                # map dataset level codes to block offsets; -1 = zero block, -2 = unseen
                lookup = np.full(len(col.levels), -2, dtype=np.int64)
                for code, label in enumerate(col.levels):
                    if label == enc.reference:
                        lookup[code] = -1
                    elif label in enc.levels:
                        lookup[code] = enc.levels.index(label)
                slot = lookup[col.values[rows]]
                unseen += int((slot == -2).sum())
                hit = np.flatnonzero(slot >= 0)
                out[hit, pos + slot[hit]] = 1.0
            pos += enc.width
        if self.center_offsets is not None:
            out -= self.center_offsets
        return out, unseen

    def to_dict(self) -> dict:
        return {
            "columns": [
                {"name": e.name, "categorical": e.categorical, "reference": e.reference,
                 "levels": list(e.levels)}
                for e in self.columns
            ],
            "center_offsets": None if self.center_offsets is None else self.center_offsets.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> EncodingMap:
        cols = tuple(
            ColumnEncoding(c["name"], c["categorical"], c["reference"], tuple(c["levels"]))
            for c in d["columns"]
        )
        off = d.get("center_offsets")
        return cls(cols, None if off is None else np.array(off, dtype=np.float64))


@dataclass(frozen=True)
class EncodedMatrix:
    design: np.ndarray
    encoding_map: EncodingMap
    constant_columns: tuple[int, ...] = ()
    n_unseen: int = 0

    @property
    def feature_names(self) -> list[str]:
        return self.encoding_map.feature_names

    @property
    def center_offsets(self) -> np.ndarray | None:
        return self.encoding_map.center_offsets


def encode(
    ds: Dataset, feature_cols: Sequence[str], fit_rows: np.ndarray, center: bool = False
) -> EncodedMatrix:
    """One-hot/numeric encoding learned on ``fit_rows``.

    Categorical levels present in ``fit_rows`` are kept in dataset level
    order; the first of them is the reference and is dropped. With
    ``center`` the fit-row column means are recorded and subtracted.
    """
    fit_rows = np.asarray(fit_rows, dtype=np.int64)
    if fit_rows.size == 0:
        raise DataError("cannot encode with an empty fit row set")
    encs = []
    for name in feature_cols:
        col = ds[name]
        if col.is_categorical:
            present = np.unique(col.values[fit_rows])
            labels = [col.levels[c] for c in present]
            encs.append(ColumnEncoding(name, True, labels[0], tuple(labels[1:])))
        else:
            encs.append(ColumnEncoding(name, False))
    raw, n_unseen = EncodingMap(tuple(encs)).transform(ds, fit_rows)
    constant = tuple(int(k) for k in np.flatnonzero(np.ptp(raw, axis=0) == 0)) if raw.size else ()
    offsets = None
    if center:
        offsets = raw.mean(axis=0)
        raw = raw - offsets
    emap = EncodingMap(tuple(encs), offsets)
    return EncodedMatrix(raw, emap, constant, n_unseen)
