"""Counter-based random streams.

Every draw is addressed by ``(seed, label, extra..., row)``: the key comes from
``(seed, label, extra...)`` and the row index selects the Philox counter
block. A row's values therefore never depend on how many rows were requested,
on the order of requests, or on the number of worker threads.
"""
from __future__ import annotations

import zlib

import numpy as np

_TWO53 = 2.0**-53


def _label_code(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def stream_key(seed: int, label: str, *extra: int) -> np.ndarray:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, _label_code(label)] + [int(e) for e in extra]
    return np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint64)


def _blocks_per_row(n_cols: int) -> int:
    return max(1, -(-n_cols // 4))


def uniforms(seed: int, label: str, n_rows: int, n_cols: int, *extra: int,
             first_row: int = 0) -> np.ndarray:
    """Uniforms on the open interval (0, 1), shape ``(n_rows, n_cols)``."""
    stride = _blocks_per_row(n_cols)
    counter = np.zeros(4, dtype=np.uint64)
    counter[0] = first_row * stride
    gen = np.random.Philox(key=stream_key(seed, label, *extra), counter=counter)
    raw = gen.random_raw(n_rows * stride * 4).reshape(n_rows, stride * 4)[:, :n_cols]
    # 53-bit values fit int64 exactly, and int64 -> float64 converts faster
    out = (raw >> np.uint64(11)).view(np.int64).astype(np.float64)
    out += 0.5
    out *= _TWO53
    return out


def normals(seed: int, label: str, n_rows: int, n_cols: int, *extra: int,
            first_row: int = 0) -> np.ndarray:
    """Standard normals via Box-Muller on the row's counter blocks."""
    n_pairs = -(-n_cols // 2)
    u = uniforms(seed, label, n_rows, 2 * n_pairs, *extra, first_row=first_row)
    u = u.reshape(n_rows, n_pairs, 2)
    rad = np.log(u[..., 0])
    rad *= -2.0
    np.sqrt(rad, out=rad)
    ang = u[..., 1] * (2.0 * np.pi)
    # the sine of the last pair is dropped for odd n_cols, so it is never computed
    n_sin = n_cols // 2
    out = np.empty((n_rows, n_cols))
    c = np.cos(ang)
    c *= rad
    out[:, 0::2] = c
    s = np.sin(ang[:, :n_sin])
    s *= rad[:, :n_sin]
    out[:, 1::2] = s
    return out


def row_normals(seed: int, label: str, row: int, n_cols: int, *extra: int) -> np.ndarray:
    return normals(seed, label, 1, n_cols, *extra, first_row=row)[0]
