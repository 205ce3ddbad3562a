"""TT3F tensor files, trace CSVs and JSON run summaries.

TT3F layout (all little-endian)::

    offset 0   b"TT3F"
    offset 4   u8   version (= 1)
    offset 5   u64  rows
    offset 13  u64  cols
    offset 21  u64  depth
    offset 29  f64 * rows*cols*depth, slice-major, column-major per slice
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

MAGIC = b"TT3F"
VERSION = 1
_HEADER = struct.Struct("<4sBQQQ")

TRACE_COLUMNS = ("epoch", "rse", "delta", "gamma", "elapsed_s")


class TensorFormatError(ValueError):
    """Malformed TT3F data; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def encode_tensor(t) -> bytes:
    t = np.asarray(t, dtype="<f8")
    if t.ndim != 3:
        raise ValueError(f"expected a third-order tensor, got shape {t.shape}")
    rows, cols, depth = t.shape
    return _HEADER.pack(MAGIC, VERSION, rows, cols, depth) + t.tobytes(order="F")


def decode_tensor(data: bytes) -> np.ndarray:
    if len(data) < 4:
        raise TensorFormatError("truncated magic", len(data))
    if data[:4] != MAGIC:
        raise TensorFormatError(f"bad magic {data[:4]!r}", 0)
    if len(data) < 5:
        raise TensorFormatError("missing version byte", len(data))
    if data[4] != VERSION:
        raise TensorFormatError(f"unsupported version {data[4]}", 4)
    if len(data) < _HEADER.size:
        raise TensorFormatError("truncated dimensions", len(data))
    _, _, rows, cols, depth = _HEADER.unpack_from(data)
    count = rows * cols * depth
    expected = _HEADER.size + 8 * count
    if len(data) < expected:
        raise TensorFormatError(f"truncated payload: need {expected} bytes, have {len(data)}", len(data))
    if len(data) > expected:
        raise TensorFormatError("trailing bytes after payload", expected)
    values = np.frombuffer(data, dtype="<f8", count=count, offset=_HEADER.size)
    out = values.reshape((rows, cols, depth), order="F").astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise TensorFormatError("non-finite value", _HEADER.size + 8 * int(bad[0]))
    return out


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def write_tensor(path, t) -> None:
    Path(path).write_bytes(encode_tensor(t))


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_trace_csv(path, records: Iterable, *, timing: bool = True) -> None:
    """One row per epoch.  ``timing=False`` blanks ``elapsed_s`` for byte-stable output."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in records:
            w.writerow([
                r.epoch,
                _fmt(r.rse),
                _fmt(r.delta),
                _fmt(r.gamma),
                _fmt(float(r.elapsed_s)) if timing else "",
            ])


def read_trace_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def run_summary(solver: str, strategy: str, tau, result, seed: int) -> dict:
    """The per-run JSON summary record."""
    last = result.trace[-1].rse if result.trace else None
    return {
        "solver": solver,
        "strategy": strategy,
        "tau": "inf" if tau == math.inf else int(tau),
        "epochs": int(result.epochs),
        "full_iterations": float(result.full_iterations),
        "rse_final": last,
        "wall_s": float(result.wall_s),
        "seed": int(seed),
        "stop_reason": result.stop_reason,
        "restarts": int(result.restarts),
    }
