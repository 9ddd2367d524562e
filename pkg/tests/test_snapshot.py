import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chaoslab import vp1d
from chaoslab.density import DensityGrid
from chaoslab.errors import SnapshotError
from chaoslab.initial_data import PhaseState
from chaoslab.snapshot import parse_snapshot, read_snapshot, snapshot_bytes, write_snapshot


@settings(max_examples=30)
@given(st.integers(1, 40), st.integers(1, 3), st.integers(0, 2**31),
       st.floats(0, 10, allow_nan=False))
def test_phase_state_round_trip(n, d, seed, t):
    rng = np.random.default_rng(seed)
    s = PhaseState(t, rng.normal(size=(n, d)), rng.normal(size=(n, d)))
    back = parse_snapshot(snapshot_bytes(s))
    assert back.kind == "phase-state" and back.time == t
    assert back.data.X.tobytes() == s.X.tobytes() and back.data.V.tobytes() == s.V.tobytes()


def test_density_and_kinetic_round_trip(tmp_path):
    g = DensityGrid(np.array([-1.0, 0.5]), np.array([0.1, 0.2]),
                    np.random.default_rng(0).random((3, 4)), 0.25)
    back = read_snapshot(write_snapshot(g, tmp_path / "g.vpfp", time=1.5)).data
    assert back.mass.tobytes() == g.mass.tobytes() and back.clipped == 0.25
    np.testing.assert_array_equal(back.lower, g.lower)
    k = vp1d.grid_from_density(lambda x, v: np.exp(-x * x - v * v), n_x=8, n_v=6,
                               sigma=0.1, sign=-1)
    kb = read_snapshot(write_snapshot(k, tmp_path / "k.vpfp")).data
    assert kb.f.tobytes() == k.f.tobytes()
    assert (kb.sigma, kb.sign, kb.x_range) == (k.sigma, k.sign, k.x_range)
    assert not list(tmp_path.glob("*.tmp"))


def test_layout_header():
    raw = snapshot_bytes(PhaseState(2.0, np.zeros((3, 2)), np.ones((3, 2))))
    assert raw[:4] == b"VPFP"
    version, kind, d, n, t = struct.unpack_from("<IBIQd", raw, 4)
    assert (version, kind, d, n, t) == (1, 0, 2, 3, 2.0)
    assert len(raw) == 4 + 4 + 1 + 4 + 8 + 8 + 12 * 8 + 4


def test_truncated_file_is_crc_error():
    raw = snapshot_bytes(PhaseState(0.0, np.zeros((5, 3)), np.ones((5, 3))))
    with pytest.raises(SnapshotError) as info:
        parse_snapshot(raw[:-10])
    assert info.value.reason == "crc"
    with pytest.raises(SnapshotError) as info:
        parse_snapshot(raw[:6])
    assert info.value.reason == "truncated"


def test_corrupted_payload_and_bad_magic():
    raw = bytearray(snapshot_bytes(PhaseState(0.0, np.zeros((5, 3)), np.ones((5, 3)))))
    raw[40] ^= 0xFF
    with pytest.raises(SnapshotError) as info:
        parse_snapshot(bytes(raw))
    assert info.value.reason == "crc"
    with pytest.raises(SnapshotError) as info:
        parse_snapshot(b"XXXX" + bytes(raw[4:]))
    assert info.value.reason == "magic"


def test_unsupported_version_names_both():
    raw = bytearray(snapshot_bytes(PhaseState(0.0, np.zeros((1, 1)), np.ones((1, 1)))))
    raw[4:8] = struct.pack("<I", 2)
    with pytest.raises(SnapshotError) as info:
        parse_snapshot(bytes(raw))
    assert info.value.reason == "version"
    assert "unsupported version 2" in str(info.value) and "1" in str(info.value)


def test_unknown_object_type():
    with pytest.raises(TypeError):
        snapshot_bytes(object())
