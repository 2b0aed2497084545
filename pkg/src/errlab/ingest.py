"""Delimited-text tables with replicate measurements <-> :class:`Dataset`.

Categorical covariates are stored in ``Dataset.Z`` as integer codes in
order of first appearance, with the level names kept in ``z_levels``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import operator
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import Dataset
from .errors import ConfigError, ParseError, SchemaMismatch, TooManyLevels
from .prepare import DesignMatrix

log = logging.getLogger(__name__)

MAX_LEVELS = 20
COVARIATE_KINDS = ("continuous", "categorical")

_OPS = {
    "==": operator.eq, "!=": operator.ne, "<": operator.lt, "<=": operator.le,
    ">": operator.gt, ">=": operator.ge,
    "in": lambda a, b: a in b, "not_in": lambda a, b: a not in b,
}


class ConstantCovariateWarning(UserWarning):
    """A categorical covariate has a single level and contributes no dummies."""


@dataclass(frozen=True)
class RowFilter:
    """Keep a row only when ``row[column] <op> value`` holds."""

    column: str
    op: str
    value: object

    def __post_init__(self):
        if self.op not in _OPS:
            raise ConfigError(f"filter op must be one of {sorted(_OPS)}, got {self.op!r}")

    def keep(self, cell: str) -> bool:
        target = self.value
        if isinstance(target, list):
            probe = _coerce_like(cell, target[0]) if target else cell
            return _OPS[self.op](probe, [_coerce_like(str(t), target[0]) for t in target])
        return _OPS[self.op](_coerce_like(cell, target), target)


def _coerce_like(cell: str, target):
    if isinstance(target, (int, float)) and not isinstance(target, bool):
        try:
            return float(cell)
        except ValueError:
            return math.nan
    return cell


@dataclass
class TableSchema:
    outcome_column: str
    replicate_columns: dict  # component -> ordered day columns
    covariate_columns: list = field(default_factory=list)  # (name, kind)
    missing_token: str = ""
    delimiter: str = ","
    filters: list = field(default_factory=list)

    def __post_init__(self):
        if not self.replicate_columns:
            raise ConfigError("schema needs at least one replicate component")
        self.replicate_columns = {str(c): list(cols) for c, cols in self.replicate_columns.items()}
        if any(not cols for cols in self.replicate_columns.values()):
            raise ConfigError("each component needs at least one day column")
        days = {len(cols) for cols in self.replicate_columns.values()}
        if len(days) != 1:
            raise ConfigError("every component must list the same number of day columns")
        covs = []
        for c in self.covariate_columns:
            name, kind = (c["name"], c.get("kind", "continuous")) if isinstance(c, dict) else tuple(c)
            if kind not in COVARIATE_KINDS:
                raise ConfigError(f"covariate {name!r}: kind must be one of {COVARIATE_KINDS}")
            covs.append((str(name), kind))
        self.covariate_columns = covs
        self.filters = [f if isinstance(f, RowFilter) else RowFilter(**f) for f in self.filters]

    @property
    def k(self) -> int:
        return len(next(iter(self.replicate_columns.values())))

    def required_columns(self) -> list:
        cols = [self.outcome_column]
        for day_cols in self.replicate_columns.values():
            cols += day_cols
        cols += [name for name, _ in self.covariate_columns]
        cols += [f.column for f in self.filters]
        return list(dict.fromkeys(cols))

    def to_json(self) -> dict:
        return {
            "outcome_column": self.outcome_column,
            "replicate_columns": self.replicate_columns,
            "covariate_columns": [{"name": n, "kind": k} for n, k in self.covariate_columns],
            "missing_token": self.missing_token,
            "delimiter": self.delimiter,
            "filters": [{"column": f.column, "op": f.op, "value": f.value} for f in self.filters],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TableSchema":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown schema field(s): {sorted(unknown)}")
        try:
            return cls(**obj)
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"invalid schema: {exc}") from exc

    @classmethod
    def load(cls, path) -> "TableSchema":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")


@dataclass
class LoadReport:
    file_rows: int = 0
    retained: int = 0
    dropped_missing: int = 0  # outcome, covariate or day-1 value absent
    dropped_filter: int = 0
    missing_later_days: int = 0  # retained rows with at least one absent later day

    @property
    def dropped(self) -> int:
        return self.dropped_missing + self.dropped_filter


def read_table(path, schema: TableSchema):
    """Parse ``path`` into a Dataset; returns (dataset, LoadReport)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such file")
    report = LoadReport()
    comps = list(schema.replicate_columns)
    k = schema.k
    Y, Z, X, present = [], [], [], []
    levels = {name: {} for name, kind in schema.covariate_columns if kind == "categorical"}

    def missing(cell: str) -> bool:
        return cell == "" or cell == schema.missing_token

    def number(cell: str, line: int, col: str) -> float:
        try:
            v = float(cell)
        except ValueError:
            raise ParseError(line, col, f"expected a number, got {cell!r}") from None
        if not math.isfinite(v):
            raise ParseError(line, col, f"non-finite value {cell!r}")
        return v

    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file, no header row") from None
        pos = {h.strip(): i for i, h in enumerate(header)}
        absent = [c for c in schema.required_columns() if c not in pos]
        if absent:
            raise SchemaMismatch(f"{path}: missing column(s) {absent}")
        for line, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(header):
                raise ParseError(line, None, f"expected {len(header)} fields, got {len(raw)}")
            report.file_rows += 1
            cell = {c: raw[pos[c]].strip() for c in schema.required_columns()}
            if not all(f.keep(cell[f.column]) for f in schema.filters):
                report.dropped_filter += 1
                continue
            firsts = [schema.replicate_columns[c][0] for c in comps]
            needed = [schema.outcome_column, *firsts, *(n for n, _ in schema.covariate_columns)]
            if any(missing(cell[c]) for c in needed):
                report.dropped_missing += 1
                continue
            y = number(cell[schema.outcome_column], line, schema.outcome_column)
            zrow = []
            for name, kind in schema.covariate_columns:
                if kind == "continuous":
                    zrow.append(number(cell[name], line, name))
                else:
                    codes = levels[name]
                    zrow.append(float(codes.setdefault(cell[name], len(codes))))
            xs = np.full((len(comps), k), np.nan)
            pres = np.ones(k, dtype=bool)
            for l, c in enumerate(comps):
                for j, col in enumerate(schema.replicate_columns[c]):
                    if missing(cell[col]):
                        pres[j] = False
                    else:
                        xs[l, j] = number(cell[col], line, col)
            # a day counts only when every component was recorded on it
            xs[:, ~pres] = np.nan
            report.missing_later_days += int(not pres.all())
            Y.append(y)
            Z.append(zrow)
            X.append(xs)
            present.append(pres)
    report.retained = len(Y)
    for name, codes in levels.items():
        if len(codes) > MAX_LEVELS:
            raise TooManyLevels(f"covariate {name!r} has {len(codes)} levels (max {MAX_LEVELS})")
    q = len(schema.covariate_columns)
    ds = Dataset(
        Y=np.asarray(Y, dtype=float),
        Z=np.asarray(Z, dtype=float).reshape(len(Y), q),
        X_star=np.asarray(X, dtype=float).reshape(len(Y), len(comps), k),
        present=np.asarray(present, dtype=bool).reshape(len(Y), k),
        x_names=comps,
        z_names=[n for n, _ in schema.covariate_columns],
        z_kinds=[kind for _, kind in schema.covariate_columns],
        scale="observed",
        z_levels={name: list(codes) for name, codes in levels.items()},
    )
    if report.dropped:
        log.info("%s: dropped %d of %d rows (%d missing values, %d filtered)", path,
                 report.dropped, report.file_rows, report.dropped_missing, report.dropped_filter)
    return ds, report


def load_table(path, schema: TableSchema) -> Dataset:
    return read_table(path, schema)[0]


def encode_categoricals(ds: Dataset) -> DesignMatrix:
    """Covariate design: continuous columns as-is, categoricals as reference-cell dummies.

    The first observed level is the reference.  A single-level column yields
    no dummies and a :class:`ConstantCovariateWarning`.
    """
    cols, meta = [], []
    for j, (name, kind) in enumerate(zip(ds.z_names, ds.z_kinds)):
        z = ds.Z[:, j]
        if kind == "continuous":
            cols.append(z)
            meta.append({"name": name, "term": name, "source": name})
            continue
        names = ds.z_levels.get(name) or [str(int(c)) for c in np.unique(z)]
        if len(names) > MAX_LEVELS:
            raise TooManyLevels(f"covariate {name!r} has {len(names)} levels (max {MAX_LEVELS})")
        if len(names) < 2:
            warnings.warn(f"covariate {name!r} is constant; no dummies emitted", ConstantCovariateWarning)
            continue
        for code, level in enumerate(names[1:], start=1):
            cols.append((z == code).astype(float))
            meta.append({"name": f"{name}={level}", "term": name, "source": name,
                         "level": level, "reference": names[0]})
    values = np.column_stack(cols) if cols else np.zeros((ds.n, 0))
    return DesignMatrix(values, meta)


def write_table(ds: Dataset, path, missing_token: str = "NA", delimiter: str = ",") -> TableSchema:
    """Write ``ds`` as a flat table and return the schema that reads it back.

    Floats use ``repr`` so the round trip is exact.
    """
    comps = list(ds.x_names)
    day_cols = {c: [f"{c}_d{j + 1}" for j in range(ds.k)] for c in comps}
    header = ["Y", *ds.z_names, *(col for c in comps for col in day_cols[c])]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n):
            row = [repr(float(ds.Y[i]))]
            for j, (name, kind) in enumerate(zip(ds.z_names, ds.z_kinds)):
                if kind == "categorical" and name in ds.z_levels:
                    row.append(ds.z_levels[name][int(ds.Z[i, j])])
                else:
                    row.append(repr(float(ds.Z[i, j])))
            for l in range(ds.p):
                for j in range(ds.k):
                    row.append(repr(float(ds.X_star[i, l, j])) if ds.present[i, j] else missing_token)
            w.writerow(row)
    return TableSchema("Y", day_cols, list(zip(ds.z_names, ds.z_kinds)), missing_token, delimiter)
