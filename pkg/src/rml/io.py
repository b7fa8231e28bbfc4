"""Binary snapshots and CSV tables.

Snapshot layout (little-endian)::

    b"RDFS" | u32 version | u32 n | u32 dims[n] | f64 spacing[n] | f64 time
    | u32 ncomp | u32 kind | f64 payload[ncomp * prod(dims)] | u32 crc32

``kind`` is 0 for a metric stored as its upper triangle (row-major over
``i <= j``) and 1 for a dense array of ``ncomp`` components.  The CRC covers
every preceding byte.
"""
from __future__ import annotations

import csv
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumError, SnapshotError
from .geometry import MetricField, build_grid

MAGIC = b"RDFS"
VERSION = 1
METRIC, DENSE = 0, 1


def _upper(n):
    return [(i, j) for i in range(n) for j in range(i, n)]


def encode_snapshot(field, time=0.0):
    """Serialise a metric (upper triangle) or any ``TensorField``/array pair."""
    grid = field.grid
    n = grid.n
    if isinstance(field, MetricField):
        kind = METRIC
        comps = np.stack([field.data[i, j] for i, j in _upper(n)])
    else:
        kind = DENSE
        comps = np.asarray(field.data, dtype=float).reshape((-1,) + grid.dims)
    head = MAGIC + struct.pack(f"<II{n}I", VERSION, n, *grid.dims)
    head += struct.pack(f"<{n}dd", *grid.spacing, float(time))
    head += struct.pack("<II", comps.shape[0], kind)
    body = head + np.ascontiguousarray(comps, dtype="<f8").tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def decode_snapshot(blob):
    """Inverse of ``encode_snapshot``; returns ``(field_or_array, grid, time)``.

    Dense payloads come back as an array of shape ``(ncomp,) + dims``.
    """
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise SnapshotError("not a snapshot file (bad magic)")
    version, n = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise SnapshotError(f"unsupported snapshot version {version} (reader supports {VERSION})")
    if n not in (1, 2, 3, 4):
        raise SnapshotError(f"implausible dimension {n}")
    off = 12
    need = off + 4 * n + 8 * n + 8 + 8
    if len(blob) < need + 4:
        raise SnapshotError("truncated snapshot header")
    dims = struct.unpack_from(f"<{n}I", blob, off)
    off += 4 * n
    *spacing, time = struct.unpack_from(f"<{n}dd", blob, off)
    off += 8 * n + 8
    ncomp, kind = struct.unpack_from("<II", blob, off)
    off += 8
    count = ncomp * int(np.prod(dims))
    if len(blob) != off + 8 * count + 4:
        raise SnapshotError(f"truncated payload: expected {off + 8 * count + 4} bytes, got {len(blob)}")
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if crc != zlib.crc32(blob[:-4]):
        raise ChecksumError("snapshot checksum mismatch")
    data = np.frombuffer(blob, dtype="<f8", count=count, offset=off).astype(float)
    data = data.reshape((ncomp,) + tuple(dims))
    grid = build_grid(n, tuple(dims), tuple(spacing))
    if kind == METRIC:
        pairs = _upper(n)
        if ncomp != len(pairs):
            raise SnapshotError("metric snapshot has the wrong number of components")
        full = np.empty((n, n) + tuple(dims))
        for c, (i, j) in enumerate(pairs):
            full[i, j] = data[c]
            full[j, i] = data[c]
        return MetricField(grid, full), grid, time
    if kind != DENSE:
        raise SnapshotError(f"unknown payload kind {kind}")
    return data, grid, time


def write_snapshot(path, field, time=0.0):
    try:
        Path(path).write_bytes(encode_snapshot(field, time))
    except OSError as exc:
        raise SnapshotError(f"cannot write {path}: {exc}") from exc


def read_snapshot(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise SnapshotError(f"cannot read {path}: {exc}") from exc
    return decode_snapshot(blob)


def snapshot_roundtrip(field, time=0.0):
    return decode_snapshot(encode_snapshot(field, time))[0]


def format_value(v):
    """Shortest round-trip text for floats, plain text otherwise."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, columns, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([format_value(v) for v in row])
    except OSError as exc:
        raise SnapshotError(f"cannot write {path}: {exc}") from exc
