"""Labeled and unlabeled samples indexed by discrete time, with CSV I/O.

A labeled observation is ``(y_i, x_i, r_i)`` where ``r_i`` in ``{1..T}`` is
the time label.  Time structure is carried entirely by the label column and
never by row order: label resampling in the randomization test replaces the
labels wholesale, so nothing downstream may rely on physical ordering.

Datasets are immutable after construction (arrays are marked read-only) and
safe to share across concurrent workers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadBinaryOutcome,
    DataError,
    LabelOutOfRange,
    MissingColumn,
    NonNumericCell,
)

FAMILIES = ("gaussian", "bernoulli")


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _check_labels(r: np.ndarray, t_max: int) -> np.ndarray:
    """Validate observed labels: integers in 1..t_max with no empty label."""
    if r.ndim != 1:
        raise LabelOutOfRange("label column must be one-dimensional")
    if r.size and r.min() < 1:
        raise LabelOutOfRange(f"label {int(r.min())} < 1")
    if r.size and r.max() > t_max:
        raise LabelOutOfRange(f"label {int(r.max())} exceeds t_max={t_max}")
    counts = np.bincount(r, minlength=t_max + 1)[1:]
    if np.any(counts == 0):
        missing = int(np.flatnonzero(counts == 0)[0]) + 1
        raise LabelOutOfRange(f"no observations with label {missing}")
    return counts


@dataclass(frozen=True)
class LabeledDataset:
    """Outcome vector, covariate matrix, and integer time labels.

    Attributes
    ----------
    y : (n,) float array, the outcome (values in {0,1} if family="bernoulli")
    x : (n, p) float array, stored column-major (per-feature sweeps in the
        penalized fitters dominate runtime, so columns are kept contiguous)
    r : (n,) int array with entries in 1..t_max; every label is represented
    t_max : number of time points T
    family : "gaussian" or "bernoulli"
    """

    y: np.ndarray
    x: np.ndarray
    r: np.ndarray
    t_max: int
    family: str = "gaussian"

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        x = np.asfortranarray(self.x, dtype=float)
        r = np.asarray(self.r, dtype=np.int64).reshape(-1)
        if x.ndim != 2:
            raise DataError("x must be a 2-d matrix")
        if not (len(y) == x.shape[0] == len(r)):
            raise DataError(
                f"length mismatch: y={len(y)}, x rows={x.shape[0]}, r={len(r)}"
            )
        if self.t_max < 1:
            raise DataError("t_max must be a positive integer")
        if not np.all(np.isfinite(y)):
            raise DataError("non-finite value in y")
        if not np.all(np.isfinite(x)):
            raise DataError("non-finite value in x")
        if self.family not in FAMILIES:
            raise DataError(f"unknown family {self.family!r}")
        if self.family == "bernoulli" and np.any((y != 0.0) & (y != 1.0)):
            bad = int(np.flatnonzero((y != 0.0) & (y != 1.0))[0])
            raise BadBinaryOutcome(f"y[{bad}]={y[bad]} not in {{0, 1}}")
        _check_labels(r, self.t_max)
        object.__setattr__(self, "y", _freeze(y))
        object.__setattr__(self, "x", _freeze(x))
        object.__setattr__(self, "r", _freeze(r))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def counts(self) -> np.ndarray:
        """Per-label observation counts ``(n_1, ..., n_T)``."""
        return np.bincount(self.r, minlength=self.t_max + 1)[1:]


@dataclass(frozen=True)
class UnlabeledDataset:
    """Covariates with time labels but no outcomes (outcome-unlabeled pool)."""

    x: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        x = np.asfortranarray(self.x, dtype=float)
        r = np.asarray(self.r, dtype=np.int64).reshape(-1)
        if x.ndim != 2:
            raise DataError("x must be a 2-d matrix")
        if x.shape[0] != len(r):
            raise DataError(f"length mismatch: x rows={x.shape[0]}, r={len(r)}")
        if not np.all(np.isfinite(x)):
            raise DataError("non-finite value in x")
        if r.size and r.min() < 1:
            raise LabelOutOfRange(f"label {int(r.min())} < 1")
        object.__setattr__(self, "x", _freeze(x))
        object.__setattr__(self, "r", _freeze(r))

    @property
    def n(self) -> int:
        return self.r.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True, order=True)
class CandidateTau:
    """A candidate change point: the last time label of the pre-change regime."""

    tau: int

    def __post_init__(self):
        if self.tau < 1:
            raise DataError(f"candidate change point {self.tau} < 1")


def split_at(
    ds: LabeledDataset, tau: CandidateTau | int, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Partition row indices by a candidate change point.

    ``labels`` may be the observed ``ds.r`` or a resampled label vector;
    row ``i`` lands in the pre set iff ``labels[i] <= tau``.  Either side
    may be empty (resampling can produce empty labels).
    """
    t = tau.tau if isinstance(tau, CandidateTau) else int(tau)
    if not 1 <= t <= ds.t_max - 1:
        raise DataError(f"tau={t} outside 1..{ds.t_max - 1}")
    labels = np.asarray(labels)
    if labels.shape != (ds.n,):
        raise DataError("labels must have one entry per row")
    if labels.size and (labels.min() < 1 or labels.max() > ds.t_max):
        raise LabelOutOfRange("resampled label outside 1..t_max")
    pre = labels <= t
    return np.flatnonzero(pre), np.flatnonzero(~pre)


def cumulative_counts(ds: LabeledDataset) -> np.ndarray:
    """Cumulative label counts: entry tau is the number of rows with r <= tau."""
    return np.cumsum(ds.counts())


# ---------------------------------------------------------------------------
# CSV I/O.  Header row required; comma separated, '.' decimal point, UTF-8.
# The y column is optional in a file (absent -> unlabeled data); the r column
# is required and must be integer-valued.
# ---------------------------------------------------------------------------


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [row for row in reader if row]
    return [h.strip() for h in header], rows


def _parse_column(rows, col_idx, name) -> np.ndarray:
    out = np.empty(len(rows), dtype=float)
    for i, row in enumerate(rows):
        cell = row[col_idx].strip() if col_idx < len(row) else ""
        try:
            out[i] = float(cell)
        except ValueError:
            raise NonNumericCell(f"row {i + 2}, column {name!r}: {cell!r}") from None
        if not np.isfinite(out[i]):
            raise NonNumericCell(f"row {i + 2}, column {name!r}: non-finite value")
    return out


def _parse_label_column(rows, col_idx, name) -> np.ndarray:
    vals = _parse_column(rows, col_idx, name)
    r = np.rint(vals).astype(np.int64)
    if np.any(vals != r):
        bad = int(np.flatnonzero(vals != r)[0])
        raise LabelOutOfRange(f"row {bad + 2}, column {name!r}: {vals[bad]} not an integer")
    return r


def _split_header(header, y_col, r_col, *, require_y):
    if r_col not in header:
        raise MissingColumn(r_col)
    has_y = y_col in header
    if require_y and not has_y:
        raise MissingColumn(y_col)
    feat_names = [h for h in header if h != r_col and h != y_col]
    return has_y, feat_names


def load_labeled_csv(
    path, y_col: str = "y", r_col: str = "r", family: str = "gaussian"
) -> LabeledDataset:
    """Load a labeled CSV: y column, r column, all other columns numeric features.

    Rows may appear in any order.  T is inferred as the maximum label; every
    label in 1..T must be present.
    """
    header, rows = _read_rows(path)
    _, feat_names = _split_header(header, y_col, r_col, require_y=True)
    y = _parse_column(rows, header.index(y_col), y_col)
    r = _parse_label_column(rows, header.index(r_col), r_col)
    x = np.empty((len(rows), len(feat_names)), dtype=float, order="F")
    for j, name in enumerate(feat_names):
        x[:, j] = _parse_column(rows, header.index(name), name)
    t_max = int(r.max()) if r.size else 0
    if t_max < 1:
        raise LabelOutOfRange("no labels found")
    return LabeledDataset(y=y, x=x, r=r, t_max=t_max, family=family)


def load_unlabeled_csv(path, r_col: str = "r", y_col: str = "y") -> UnlabeledDataset:
    """Load a covariates-plus-labels CSV; a y column, if present, is ignored."""
    header, rows = _read_rows(path)
    _, feat_names = _split_header(header, y_col, r_col, require_y=False)
    r = _parse_label_column(rows, header.index(r_col), r_col)
    x = np.empty((len(rows), len(feat_names)), dtype=float, order="F")
    for j, name in enumerate(feat_names):
        x[:, j] = _parse_column(rows, header.index(name), name)
    return UnlabeledDataset(x=x, r=r)


def write_labeled_csv(ds: LabeledDataset, path, y_col: str = "y", r_col: str = "r"):
    """Write a dataset back to CSV; floats use shortest round-trip formatting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([y_col, r_col] + [f"x{j + 1}" for j in range(ds.p)])
        for i in range(ds.n):
            writer.writerow(
                [repr(float(ds.y[i])), int(ds.r[i])]
                + [repr(float(v)) for v in ds.x[i]]
            )


def write_unlabeled_csv(ds: UnlabeledDataset, path, r_col: str = "r"):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([r_col] + [f"x{j + 1}" for j in range(ds.p)])
        for i in range(ds.n):
            writer.writerow([int(ds.r[i])] + [repr(float(v)) for v in ds.x[i]])
