"""Flat little-endian binary containers for datasets, parameter vectors and agents."""

from __future__ import annotations

import io
import json
import struct

import numpy as np

_I64 = "<q"


def write_i64(buf: io.BufferedIOBase, value: int) -> None:
    buf.write(struct.pack(_I64, int(value)))


def read_i64(buf: io.BufferedIOBase) -> int:
    raw = buf.read(8)
    if len(raw) != 8:
        raise ValueError("truncated binary file")
    return struct.unpack(_I64, raw)[0]


def write_f64_array(buf, arr) -> None:
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_f64_array(buf, count: int) -> np.ndarray:
    raw = buf.read(8 * count)
    if len(raw) != 8 * count:
        raise ValueError("truncated binary file")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def write_i64_array(buf, arr) -> None:
    buf.write(np.ascontiguousarray(arr, dtype="<i8").tobytes())


def read_i64_array(buf, count: int) -> np.ndarray:
    raw = buf.read(8 * count)
    if len(raw) != 8 * count:
        raise ValueError("truncated binary file")
    return np.frombuffer(raw, dtype="<i8").astype(np.int64)


def write_vectors(path, vectors: list[np.ndarray], meta: dict) -> None:
    """Vector count, then ``(length, float64 values)`` per vector, then a JSON blob."""
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        write_i64(fh, len(vectors))
        for v in vectors:
            v = np.asarray(v, dtype=np.float64).ravel()
            write_i64(fh, v.shape[0])
            write_f64_array(fh, v)
        write_i64(fh, len(blob))
        fh.write(blob)


def read_vectors(path) -> tuple[list[np.ndarray], dict]:
    with open(path, "rb") as fh:
        count = read_i64(fh)
        vectors = [read_f64_array(fh, read_i64(fh)) for _ in range(count)]
        size = read_i64(fh)
        blob = fh.read(size)
        if len(blob) != size:
            raise ValueError("truncated binary file")
    return vectors, json.loads(blob.decode("utf-8"))
