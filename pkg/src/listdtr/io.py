"""Wide CSV format: one row per subject.

Columns are ``s{t}`` or ``s{t}_{name}`` for stage-``t`` covariates, ``a{t}``
(or ``a{t}_1``, ``a{t}_2`` for paired actions) and ``y{t}``; an optional
``id`` column carries subject identifiers.  Empty cells, ``NA`` and ``nan``
mark missing values.
"""
from __future__ import annotations

import csv
import math
import re
from pathlib import Path

import numpy as np

from .errors import DatasetError
from .model import TrajectoryDataset

_COV = re.compile(r"^s(\d+)(?:_(.+))?$")
_ACT = re.compile(r"^a(\d+)(?:_([12]))?$")
_RWD = re.compile(r"^y(\d+)$")
_NA = {"", "na", "nan"}


def _label(text: str):
    try:
        value = float(text)
    except ValueError:
        return text
    return int(value) if value.is_integer() else value


def _fmt_label(a) -> str:
    return repr(float(a)) if isinstance(a, float) else str(a)


def _fmt(x: float) -> str:
    return repr(float(x))


def _schema(header, id_column):
    """Map columns to (stage, role); report the first offending column."""
    cov, act, rwd, id_idx = {}, {}, {}, None
    seen = set()
    for c, name in enumerate(header, start=1):
        name = name.strip()
        if name in seen:
            raise DatasetError(f"line 1, column {c}: duplicate column '{name}'")
        seen.add(name)
        if name == id_column:
            id_idx = c - 1
        elif m := _COV.match(name):
            cov.setdefault(int(m.group(1)), []).append((c - 1, name))
        elif m := _ACT.match(name):
            act.setdefault(int(m.group(1)), {})[m.group(2)] = c - 1
        elif m := _RWD.match(name):
            rwd[int(m.group(1))] = c - 1
        else:
            raise DatasetError(f"line 1, column {c}: column '{name}' is not s<t>_<name>, a<t> or y<t>")
    if not act:
        raise DatasetError("line 1: no action columns")
    T = max(act)
    for t in range(1, T + 1):
        if t not in act:
            raise DatasetError(f"line 1: stage {t} has no action column")
        if t not in rwd:
            raise DatasetError(f"line 1: stage {t} has no y{t} column")
        keys = set(act[t])
        if keys not in ({None}, {"1", "2"}):
            raise DatasetError(f"line 1: stage {t} needs a{t} or both a{t}_1 and a{t}_2")
    extra = [t for t in list(cov) + list(rwd) if t < 1 or t > T]
    if extra:
        raise DatasetError(f"line 1: columns for stage {min(extra)} outside 1..{T}")
    return T, cov, act, rwd, id_idx


def _carry_forward(value_rows, cov, T):
    """Fill a missing stage covariate from the same-named covariate at the latest earlier stage."""
    by_suffix = {}
    for t in range(1, T + 1):
        for col, name in cov.get(t, []):
            suffix = _COV.match(name).group(2)
            by_suffix.setdefault(suffix, []).append(col)
    for row in value_rows:
        for cols in by_suffix.values():
            last = math.nan
            for col in cols:
                if math.isnan(row[col]):
                    row[col] = last
                else:
                    last = row[col]


def read_wide_csv(path, missing: str = "drop", id_column: str = "id") -> TrajectoryDataset:
    path = Path(path)
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc.strerror}") from None
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise DatasetError(f"{path}: empty file")
        T, cov, act, rwd, id_idx = _schema(header, id_column)
        numeric = [c for t in cov for c, _ in cov[t]] + list(rwd.values())
        act_cols = {c for t in act for c in act[t].values()}
        rows = []
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise DatasetError(f"line {lineno}: expected {len(header)} fields, found {len(record)}")
            values = [math.nan] * len(header)
            for c in numeric:
                cell = record[c].strip()
                if cell.lower() in _NA:
                    continue
                try:
                    values[c] = float(cell)
                except ValueError:
                    raise DatasetError(f"line {lineno}, column {c + 1} ({header[c]}): "
                                       f"'{cell}' is not a number") from None
                if not math.isfinite(values[c]):
                    raise DatasetError(f"line {lineno}, column {c + 1} ({header[c]}): non-finite value")
            labels = {c: (None if record[c].strip().lower() in _NA else _label(record[c].strip()))
                      for c in act_cols}
            rows.append((lineno, record[id_idx].strip() if id_idx is not None else None, values, labels))
    if missing not in ("drop", "carry_forward"):
        raise DatasetError(f"unknown missing-data policy '{missing}'")
    if missing == "carry_forward":
        _carry_forward([r[2] for r in rows], cov, T)
    kept = [r for r in rows
            if not any(math.isnan(r[2][c]) for c in numeric)
            and not any(v is None for v in r[3].values())]
    n = len(kept)
    covariates, labels, rewards, names = [], [], [], []
    for t in range(1, T + 1):
        cols = cov.get(t, [])
        covariates.append(np.array([[r[2][c] for c, _ in cols] for r in kept], dtype=float).reshape(n, len(cols)))
        names.append(tuple(name for _, name in cols))
        if None in act[t]:
            labels.append([r[3][act[t][None]] for r in kept])
        else:
            labels.append([(r[3][act[t]["1"]], r[3][act[t]["2"]]) for r in kept])
        rewards.append(np.array([r[2][rwd[t]] for r in kept], dtype=float))
    ids = None
    if id_idx is not None:
        raw_ids = [r[1] for r in kept]
        ids = np.array([_label(v) for v in raw_ids]) if raw_ids else None
        if ids is not None and len(set(raw_ids)) != n:
            raise DatasetError(f"{path}: duplicate subject ids")
    try:
        return TrajectoryDataset.from_labels(covariates, labels, rewards, covariate_names=names, ids=ids)
    except TypeError as exc:
        raise DatasetError(f"{path}: inconsistent action labels ({exc})") from None


def wide_header(dataset: TrajectoryDataset) -> list[str]:
    header = ["id"]
    for t in range(1, dataset.T + 1):
        header += list(dataset.covariate_names[t - 1])
        if any(isinstance(a, tuple) for a in dataset.action_sets[t - 1]):
            header += [f"a{t}_1", f"a{t}_2"]
        else:
            header.append(f"a{t}")
        header.append(f"y{t}")
    return header


def write_wide_csv(dataset: TrajectoryDataset, path) -> None:
    header = wide_header(dataset)
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        labels = [dataset.action_labels(t) for t in range(1, dataset.T + 1)]
        for i in range(dataset.n):
            row = [str(dataset.ids[i])]
            for t in range(dataset.T):
                row += [_fmt(v) for v in dataset.covariates[t][i]]
                a = labels[t][i]
                row += [_fmt_label(v) for v in a] if isinstance(a, tuple) else [_fmt_label(a)]
                row.append(_fmt(dataset.rewards[t][i]))
            writer.writerow(row)
