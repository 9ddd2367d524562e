"""Binary snapshots of phase states, density grids and kinetic grids.

Layout (little endian)::

    b"VPFP" | u32 version | u8 kind | u32 d | u64 counts... | f64 time
    | payload f64[...] | u32 crc32(payload)

kind 0 (phase state): one count N; payload X then V, each N x d row-major.
kind 1 (density grid): one count per axis (d axes); payload lower[d],
edges[d], clipped, then the mass tensor.
kind 2 (kinetic grid): counts n_x, n_v with d = 1; payload x_lo, x_hi, v_lo,
v_hi, sigma, sign, c1, outflow, clipped, then f (n_x x n_v).
"""
from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .density import DensityGrid
from .errors import SnapshotError
from .initial_data import PhaseState
from .vp1d import KineticGrid1D

MAGIC = b"VPFP"
VERSION = 1
PHASE_STATE, DENSITY_GRID, KINETIC_GRID = 0, 1, 2
_KIND_NAMES = {PHASE_STATE: "phase-state", DENSITY_GRID: "density-grid", KINETIC_GRID: "kinetic-grid"}
_HEAD = struct.Struct("<4sIBI")


@dataclass(frozen=True)
class Snapshot:
    kind: str
    time: float
    data: object


def _encode(obj, time: float | None):
    if isinstance(obj, PhaseState):
        counts = [obj.n]
        payload = np.concatenate([obj.X.ravel(), obj.V.ravel()])
        return PHASE_STATE, obj.d, counts, obj.t if time is None else time, payload
    if isinstance(obj, DensityGrid):
        payload = np.concatenate([obj.lower, obj.edges, [obj.clipped], obj.mass.ravel()])
        return DENSITY_GRID, obj.ndim, list(obj.cells), 0.0 if time is None else time, payload
    if isinstance(obj, KineticGrid1D):
        meta = [*obj.x_range, *obj.v_range, obj.sigma, obj.sign, obj.c1, obj.outflow, obj.clipped]
        payload = np.concatenate([meta, obj.f.ravel()])
        return KINETIC_GRID, 1, [obj.n_x, obj.n_v], obj.t if time is None else time, payload
    raise TypeError(f"cannot snapshot objects of type {type(obj).__name__}")


def snapshot_bytes(obj, time: float | None = None) -> bytes:
    kind, d, counts, t, payload = _encode(obj, time)
    body = np.ascontiguousarray(payload, dtype="<f8").tobytes()
    head = _HEAD.pack(MAGIC, VERSION, kind, d) + struct.pack(f"<{len(counts)}Qd", *counts, t)
    return head + body + struct.pack("<I", zlib.crc32(body))


def write_snapshot(obj, path, time: float | None = None) -> Path:
    """Write atomically (temp file then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(snapshot_bytes(obj, time))
    os.replace(tmp, path)
    return path


def parse_snapshot(raw: bytes) -> Snapshot:
    if len(raw) < _HEAD.size:
        raise SnapshotError("truncated", f"file has {len(raw)} bytes, header needs {_HEAD.size}")
    magic, version, kind, d = _HEAD.unpack_from(raw, 0)
    if magic != MAGIC:
        raise SnapshotError("magic", f"bad magic bytes {magic!r} (expected {MAGIC!r})")
    if version != VERSION:
        raise SnapshotError("version", f"unsupported version {version} (expected {VERSION})")
    if kind not in _KIND_NAMES:
        raise SnapshotError("kind", f"unknown payload kind {kind}")
    n_counts = {PHASE_STATE: 1, DENSITY_GRID: d, KINETIC_GRID: 2}[kind]
    pos = _HEAD.size
    tail = struct.Struct(f"<{n_counts}Qd")
    if len(raw) < pos + tail.size:
        raise SnapshotError("truncated", "file ends inside the header")
    *counts, t = tail.unpack_from(raw, pos)
    pos += tail.size
    if kind == PHASE_STATE:
        n_vals = 2 * counts[0] * d
    elif kind == DENSITY_GRID:
        n_vals = 2 * d + 1 + int(np.prod(counts))
    else:
        n_vals = 9 + counts[0] * counts[1]
    body = raw[pos:pos + 8 * n_vals]
    crc_bytes = raw[pos + 8 * n_vals:pos + 8 * n_vals + 4]
    if len(body) != 8 * n_vals or len(crc_bytes) != 4:
        raise SnapshotError("crc", f"CRC check failed: payload truncated "
                                   f"({len(raw) - pos} of {8 * n_vals + 4} bytes present)")
    (crc,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(body) != crc:
        raise SnapshotError("crc", f"CRC mismatch: stored {crc:#010x}, computed {zlib.crc32(body):#010x}")
    vals = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if kind == PHASE_STATE:
        n = counts[0]
        X = vals[:n * d].reshape(n, d)
        V = vals[n * d:].reshape(n, d)
        return Snapshot("phase-state", t, PhaseState(t, X, V))
    if kind == DENSITY_GRID:
        lower, edges, clipped = vals[:d], vals[d:2 * d], vals[2 * d]
        mass = vals[2 * d + 1:].reshape(counts)
        return Snapshot("density-grid", t, DensityGrid(lower, edges, mass, float(clipped)))
    x_lo, x_hi, v_lo, v_hi, sigma, sign, c1, outflow, clipped = vals[:9]
    f = vals[9:].reshape(counts)
    grid = KineticGrid1D((x_lo, x_hi), (v_lo, v_hi), f, t, float(sigma), int(sign), float(c1),
                         float(outflow), float(clipped))
    return Snapshot("kinetic-grid", t, grid)


def read_snapshot(path) -> Snapshot:
    return parse_snapshot(Path(path).read_bytes())
