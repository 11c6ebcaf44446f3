"""Binary readers and writers.

Vector files use the TexMex layout (``.fvecs`` / ``.ivecs``): every record is
a little-endian int32 dimension followed by that many float32 or int32
components. Graph files are::

    b"CAGGRAPH" | uint64 N | uint32 d | N*d uint32 ids (row-major)

all little-endian. Parent flags are never persisted, so every stored id has
its top bit clear and is below N.
"""

from __future__ import annotations

import os

import numpy as np

from .core import FormatError, UsageError

GRAPH_MAGIC = b"CAGGRAPH"
_GRAPH_HEADER = np.dtype([("magic", "S8"), ("n", "<u8"), ("d", "<u4")])


def load_vecs(path, kind: str = "float") -> np.ndarray:
    """Read an fvecs (``kind="float"``) or ivecs (``kind="int"``) file."""
    if kind not in ("float", "int"):
        raise UsageError(f"kind must be 'float' or 'int', got {kind!r}")
    raw = np.fromfile(path, dtype="<i4")
    if raw.size == 0:
        raise FormatError(f"{path}: empty vector file")
    dim = int(raw[0])
    if dim <= 0:
        raise FormatError(f"{path}: invalid dimension {dim}")
    if raw.size % (dim + 1):
        raise FormatError(f"{path}: truncated file or inconsistent dimensions")
    rows = raw.reshape(-1, dim + 1)
    if not (rows[:, 0] == dim).all():
        raise FormatError(f"{path}: records have inconsistent dimensions")
    body = np.ascontiguousarray(rows[:, 1:])
    if kind == "float":
        return body.view("<f4").astype(np.float32)
    return body.astype(np.int32)


def save_vecs(path, data, kind: str | None = None) -> None:
    """Write a 2-D array as fvecs/ivecs; ``kind`` defaults from the dtype."""
    arr = np.asarray(data)
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise UsageError(f"expected a 2-D array with n >= 1, got shape {arr.shape}")
    if kind is None:
        kind = "int" if np.issubdtype(arr.dtype, np.integer) else "float"
    body = arr.astype("<f4" if kind == "float" else "<i4")
    out = np.empty((arr.shape[0], arr.shape[1] + 1), dtype="<i4")
    out[:, 0] = arr.shape[1]
    out[:, 1:] = body.view("<i4")
    out.tofile(path)


def save_graph(graph, path) -> None:
    g = np.asarray(graph)
    if g.ndim != 2:
        raise UsageError(f"graph must be 2-D, got shape {g.shape}")
    n, d = g.shape
    if g.size and (g.min() < 0 or g.max() >= n):
        raise UsageError("graph ids must lie in [0, N)")
    header = np.array([(GRAPH_MAGIC, n, d)], dtype=_GRAPH_HEADER)
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(g.astype("<u4").tobytes())


def load_graph(path) -> np.ndarray:
    """Read a graph file into an (N, d) int32 array."""
    size = os.path.getsize(path)
    if size < _GRAPH_HEADER.itemsize:
        raise FormatError(f"{path}: file too short for graph header")
    with open(path, "rb") as f:
        header = np.frombuffer(f.read(_GRAPH_HEADER.itemsize), dtype=_GRAPH_HEADER)[0]
        if bytes(header["magic"]) != GRAPH_MAGIC:
            raise FormatError(f"{path}: bad magic {bytes(header['magic'])!r}")
        n, d = int(header["n"]), int(header["d"])
        # Lengths are checked against the file size before anything is allocated.
        if n * d * 4 != size - _GRAPH_HEADER.itemsize:
            raise FormatError(f"{path}: payload size does not match N={n}, d={d}")
        payload = np.frombuffer(f.read(), dtype="<u4")
    if payload.size and (payload >> 31).any():
        raise FormatError(f"{path}: stored id has its top bit set")
    if payload.size and payload.max() >= n:
        raise FormatError(f"{path}: stored id out of range [0, {n})")
    return payload.astype(np.int32).reshape(n, d)
