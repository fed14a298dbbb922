"""Dataset readers and writers: CSV, raw binary and IDX.

Raw binary layout (all little-endian)::

    bytes 0-7    magic b"SPRDATA1"
    bytes 8-15   uint64 number of rows
    bytes 16-23  uint64 number of columns
    then         rows * cols float64 values, row-major

IDX is the MNIST container: two zero bytes, a type code, the number of
dimensions, big-endian uint32 sizes, then big-endian data. Everything past
the first dimension is flattened into columns.
"""

from __future__ import annotations

import csv
import os
import struct

import numpy as np

from .errors import DataError

__all__ = [
    "RAW_MAGIC",
    "read_csv",
    "write_csv",
    "read_raw",
    "write_raw",
    "read_idx",
    "read_dataset",
    "convert_dataset",
]

RAW_MAGIC = b"SPRDATA1"

_IDX_TYPES = {
    0x08: np.dtype("u1"),
    0x09: np.dtype("i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_csv(path, target_column=None):
    """Read one sample per row; returns ``(X, y)`` with ``y`` the target column or ``None``.

    A first row that is not entirely numeric is treated as a header.
    ``target_column`` is a column index (negative counts from the end) or a
    header name.
    """
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no data rows")
    header = None
    if not all(_is_number(c) for c in rows[0]):
        header, rows = rows[0], rows[1:]
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise DataError(f"{path}: row {i + 1} has {len(r)} fields, expected {width}")
    try:
        data = np.array(rows, dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric value ({exc})") from exc
    if target_column is None:
        return data, None
    if isinstance(target_column, str) and not target_column.lstrip("-").isdigit():
        if header is None or target_column not in header:
            raise DataError(f"{path}: no column named {target_column!r}")
        j = header.index(target_column)
    else:
        j = int(target_column) % width
    y = data[:, j]
    X = np.delete(data, j, axis=1)
    return X, y


def write_csv(path, X, y=None):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for i, row in enumerate(X):
            vals = [f"{v:.17e}" for v in row]
            if y is not None:
                vals.append(f"{float(y[i]):.17e}")
            w.writerow(vals)


def write_raw(path, X):
    X = np.atleast_2d(np.asarray(X, dtype="<f8"))
    rows, cols = X.shape
    try:
        with open(path, "wb") as fh:
            fh.write(RAW_MAGIC)
            fh.write(struct.pack("<QQ", rows, cols))
            fh.write(np.ascontiguousarray(X).tobytes())
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def read_raw(path):
    try:
        with open(path, "rb") as fh:
            head = fh.read(24)
            if len(head) < 24 or head[:8] != RAW_MAGIC:
                raise DataError(f"{path}: not a raw dataset file (bad magic)")
            rows, cols = struct.unpack("<QQ", head[8:])
            body = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(body) != 8 * rows * cols:
        raise DataError(f"{path}: expected {rows}x{cols} values, found {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(float)


def read_idx(path):
    """Read an IDX file; returns a float array of shape ``(n,)`` or ``(n, prod(rest))``."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise DataError(f"{path}: not an IDX file")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_TYPES:
        raise DataError(f"{path}: unknown IDX type code 0x{code:02x}")
    if ndim < 1:
        raise DataError(f"{path}: IDX file without dimensions")
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    dt = _IDX_TYPES[code]
    count = int(np.prod(dims))
    start = 4 + 4 * ndim
    if len(raw) - start != count * dt.itemsize:
        raise DataError(f"{path}: IDX payload size does not match dimensions {dims}")
    data = np.frombuffer(raw, dtype=dt, count=count, offset=start).astype(float)
    if ndim == 1:
        return data
    return data.reshape(dims[0], -1)


def _format_of(path, fmt=None):
    if fmt:
        return fmt
    ext = os.path.splitext(str(path))[1].lower()
    if ext in (".csv", ".txt"):
        return "csv"
    if ext in (".bin", ".raw"):
        return "raw"
    if ext.startswith(".idx") or "idx" in os.path.basename(str(path)).lower():
        return "idx"
    raise DataError(f"cannot infer dataset format of {path}; pass it explicitly")


def read_dataset(path, fmt=None, target_column=None):
    """Read ``(X, y)`` from CSV, raw binary or IDX (``y`` only for CSV with a target column)."""
    fmt = _format_of(path, fmt)
    if fmt == "csv":
        return read_csv(path, target_column)
    if fmt == "raw":
        return read_raw(path), None
    if fmt == "idx":
        return read_idx(path), None
    raise DataError(f"unknown dataset format {fmt!r}")


def convert_dataset(src, dst, src_format=None, dst_format=None, limit=None):
    """Convert between dataset formats (IDX is read-only). Returns the shape written."""
    X, y = read_dataset(src, src_format)
    X = np.atleast_2d(X.T).T if X.ndim == 1 else X
    if limit is not None:
        X = X[: int(limit)]
        y = None if y is None else y[: int(limit)]
    out = _format_of(dst, dst_format)
    if out == "raw":
        write_raw(dst, X if y is None else np.column_stack([X, y]))
    elif out == "csv":
        write_csv(dst, X, y)
    else:
        raise DataError(f"cannot write dataset format {out!r}")
    return X.shape
