"""Datasets, CSV ingestion and response scaling."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

DATASET_MAGIC = b"DRFD"
DATASET_VERSION = 1
DEFAULT_NA_TOKENS = ("", "NA", "NaN")


class DataError(ValueError):
    """Raised for malformed or unusable input data."""


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    kind: str = "numeric"  # "numeric" or "onehot"
    parent: str | None = None
    level: str | None = None

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "parent": self.parent, "level": self.level}


@dataclass(frozen=True)
class Dataset:
    """Predictor matrix ``x`` (n, p) and response matrix ``y`` (n, d).

    ``x_meta`` describes predictor columns, ``y_names`` the response columns.
    ``dropped_rows`` records how many rows were removed during ingestion.
    """

    x: np.ndarray
    y: np.ndarray
    x_meta: tuple[ColumnMeta, ...]
    y_names: tuple[str, ...]
    dropped_rows: int = 0

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim != 2 or y.ndim != 2:
            raise DataError("x and y must be 2-d")
        if x.shape[0] != y.shape[0]:
            raise DataError(f"x has {x.shape[0]} rows but y has {y.shape[0]}")
        if x.shape[0] < 2 or x.shape[1] < 1 or y.shape[1] < 1:
            raise DataError(f"need n >= 2, p >= 1, d >= 1; got {x.shape[0]}, {x.shape[1]}, {y.shape[1]}")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise DataError("non-finite values in dataset")
        if len(self.x_meta) != x.shape[1] or len(self.y_names) != y.shape[1]:
            raise DataError("column metadata does not match matrix shapes")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def d(self) -> int:
        return self.y.shape[1]

    @property
    def x_names(self) -> list[str]:
        return [m.name for m in self.x_meta]

    @classmethod
    def from_arrays(cls, x, y, x_names: Sequence[str] | None = None,
                    y_names: Sequence[str] | None = None) -> "Dataset":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        x_names = list(x_names) if x_names is not None else [f"x{j + 1}" for j in range(x.shape[1])]
        y_names = list(y_names) if y_names is not None else [f"y{j + 1}" for j in range(y.shape[1])]
        return cls(x, y, tuple(ColumnMeta(nm) for nm in x_names), tuple(y_names))

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.x[rows], self.y[rows], self.x_meta, self.y_names)

    def onehot_groups(self) -> dict[str, list[int]]:
        groups: dict[str, list[int]] = {}
        for j, m in enumerate(self.x_meta):
            if m.kind == "onehot":
                groups.setdefault(m.parent, []).append(j)
        return groups

    # -- serialization -------------------------------------------------
    def to_bytes(self) -> bytes:
        header = {
            "version": DATASET_VERSION,
            "n": self.n,
            "p": self.p,
            "d": self.d,
            "x_meta": [m.to_dict() for m in self.x_meta],
            "y_names": list(self.y_names),
            "dropped_rows": self.dropped_rows,
        }
        hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        block = np.hstack([self.x, self.y]).astype("<f8", copy=False)
        return (DATASET_MAGIC + struct.pack("<II", DATASET_VERSION, len(hbytes)) + hbytes
                + block.tobytes(order="C"))

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Dataset":
        if buf[:4] != DATASET_MAGIC:
            raise DataError("not a serialized dataset")
        version, hlen = struct.unpack_from("<II", buf, 4)
        if version != DATASET_VERSION:
            raise DataError(f"dataset format version {version}, expected {DATASET_VERSION}")
        header = json.loads(buf[12:12 + hlen])
        n, p, d = header["n"], header["p"], header["d"]
        if len(buf) - 12 - hlen != 8 * n * (p + d):
            raise DataError("truncated dataset block")
        block = np.frombuffer(buf, dtype="<f8", offset=12 + hlen)
        if block.size != n * (p + d):
            raise DataError("truncated dataset block")
        block = block.reshape(n, p + d)
        meta = tuple(ColumnMeta(**m) for m in header["x_meta"])
        return cls(block[:, :p].copy(), block[:, p:].copy(), meta, tuple(header["y_names"]),
                   header["dropped_rows"])

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls.from_bytes(Path(path).read_bytes())


@dataclass
class IngestOptions:
    """Options for :func:`load_csv`.

    ``missing`` is ``"error"`` (default) or ``"drop"``. Columns named in
    ``categorical`` are one-hot encoded; other non-numeric predictor columns
    are detected and encoded automatically.
    """

    missing: str = "error"
    na_tokens: tuple[str, ...] = DEFAULT_NA_TOKENS
    categorical: tuple[str, ...] = ()
    predictors: tuple[str, ...] | None = None
    encoding: str = "utf-8"


def _parse_float(tok: str) -> float | None:
    try:
        return float(tok)
    except ValueError:
        return None


def load_csv(path, response_cols: Sequence[str], options: IngestOptions | None = None) -> Dataset:
    """Read a CSV with a header row into a :class:`Dataset`.

    Categorical predictors become one 0/1 column per level, levels sorted
    lexicographically and placed at the position of the original column.
    """
    opts = options or IngestOptions()
    if opts.missing not in ("error", "drop"):
        raise ValueError(f"unknown missing-value policy {opts.missing!r}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with path.open(newline="", encoding=opts.encoding) as fh:
        reader = csv.reader(fh, strict=True)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        except csv.Error as exc:
            raise DataError(f"{path}: line 1: {exc}") from None
        header = [h.strip() for h in header]
        rows = []
        try:
            for row in reader:
                if not row:
                    continue
                if len(row) != len(header):
                    raise DataError(f"{path}: line {reader.line_num}: expected {len(header)} fields, "
                                    f"got {len(row)}")
                rows.append([c.strip() for c in row])
        except csv.Error as exc:
            raise DataError(f"{path}: line {reader.line_num}: {exc}") from None

    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names")
    response_cols = list(response_cols)
    missing_cols = [c for c in response_cols if c not in header]
    if missing_cols:
        raise DataError(f"response column(s) not found: {', '.join(missing_cols)}")
    if opts.predictors is not None:
        overlap = [c for c in opts.predictors if c in response_cols]
        if overlap:
            raise DataError(f"response column listed as predictor: {', '.join(overlap)}")
        absent = [c for c in opts.predictors if c not in header]
        if absent:
            raise DataError(f"predictor column(s) not found: {', '.join(absent)}")
        pred_cols = [c for c in header if c in opts.predictors]
    else:
        pred_cols = [c for c in header if c not in response_cols]
    if not pred_cols:
        raise DataError("no predictor columns remain")

    col_idx = {c: i for i, c in enumerate(header)}
    na = set(opts.na_tokens)
    is_na = np.array([[tok in na for tok in row] for row in rows], dtype=bool).reshape(len(rows), len(header))

    for c in pred_cols + response_cols:
        if rows and is_na[:, col_idx[c]].all():
            raise DataError(f"column {c!r} is entirely missing")

    used = [col_idx[c] for c in pred_cols + response_cols]
    bad_rows = is_na[:, used].any(axis=1) if rows else np.zeros(0, dtype=bool)
    if bad_rows.any():
        if opts.missing == "error":
            r = int(np.flatnonzero(bad_rows)[0])
            cols = [header[j] for j in used if is_na[r, j]]
            raise DataError(f"{path}: line {r + 2}: missing value in column {cols[0]!r}")
        keep = np.flatnonzero(~bad_rows)
    else:
        keep = np.arange(len(rows))
    rows = [rows[i] for i in keep]
    dropped = int(bad_rows.sum())

    def numeric_column(c):
        j = col_idx[c]
        out = np.empty(len(rows))
        for i, row in enumerate(rows):
            v = _parse_float(row[j])
            if v is None:
                return None, i
            out[i] = v
        return out, None

    y_cols = []
    for c in response_cols:
        vals, bad = numeric_column(c)
        if vals is None:
            raise DataError(f"{path}: line {keep[bad] + 2}: non-numeric response value in column {c!r} "
                            f"(categorical responses are not supported)")
        y_cols.append(vals)

    x_cols, meta = [], []
    for c in pred_cols:
        vals = None if c in opts.categorical else numeric_column(c)[0]
        if vals is not None:
            x_cols.append(vals)
            meta.append(ColumnMeta(c))
            continue
        labels = [row[col_idx[c]] for row in rows]
        for level in sorted(set(labels)):
            x_cols.append(np.array([1.0 if lab == level else 0.0 for lab in labels]))
            meta.append(ColumnMeta(f"{c}={level}", "onehot", c, level))

    n = len(rows)
    x = np.column_stack(x_cols) if n else np.zeros((0, len(x_cols)))
    y = np.column_stack(y_cols) if n else np.zeros((0, len(y_cols)))
    return Dataset(x, y, tuple(meta), tuple(response_cols), dropped)


@dataclass(frozen=True)
class ResponseScaler:
    """Per-column affine standardization ``(y - center) / scale``."""

    center: np.ndarray
    scale: np.ndarray = field()

    def __post_init__(self):
        if np.any(np.asarray(self.scale) <= 0):
            raise ValueError("scale entries must be positive")

    def transform(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.center) / self.scale

    def inverse(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.scale + self.center

    def to_dict(self) -> dict:
        return {"center": [float(v) for v in self.center], "scale": [float(v) for v in self.scale]}

    @classmethod
    def from_dict(cls, d: dict) -> "ResponseScaler":
        return cls(np.asarray(d["center"], dtype=np.float64), np.asarray(d["scale"], dtype=np.float64))


def fit_scaler(y) -> ResponseScaler:
    """Mean / sample standard deviation (ddof=1) per column.

    A constant column gets scale 1 so that it maps to zeros.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.size == 0:
        raise DataError("cannot fit a scaler on an empty matrix")
    if y.shape[0] < 2:
        raise DataError("need at least two rows to fit a scaler")
    center = y.mean(axis=0)
    scale = y.std(axis=0, ddof=1)
    constant = np.all(y == y[0], axis=0)
    scale = np.where(constant | (scale <= 0), 1.0, scale)
    center = np.where(constant, y[0], center)
    return ResponseScaler(center, scale)
