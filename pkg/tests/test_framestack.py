"""Stack container round-trips, validation, and corruption detection."""

import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bpcam import KIND_BINARY, KIND_RAW, StackReader, StackWriter
from bpcam.errors import FrameFormatError, ParameterError
from bpcam.framestack import HEADER_SIZE, PLANE_CODES, RAW_SCALE


def write_stack(path, frames, kind, plane="image", seed=0, digest=b"\x00" * 32):
    with StackWriter(path, kind=kind, plane=plane, shape=frames[0].shape,
                     seed=seed, config_digest=digest) as wr:
        for f in frames:
            wr.write(f)
    return StackReader(path)


def test_binary_roundtrip(tmp_path, rng):
    frames = [rng.random((7, 13)) < 0.3 for _ in range(5)]
    digest = bytes(range(32))
    rd = write_stack(tmp_path / "s.bpcm", frames, KIND_BINARY, "farfield",
                     seed=99, digest=digest)
    assert len(rd) == 5
    assert rd.shape == (7, 13)
    assert rd.plane_name == "farfield"
    assert rd.seed == 99
    assert rd.config_digest == digest
    for got, want in zip(rd, frames):
        assert got.dtype == np.bool_
        np.testing.assert_array_equal(got, want)


def test_raw_roundtrip_quantises_to_fixed_point(tmp_path, rng):
    frames = [rng.normal(390.0, 6.0, size=(6, 5)) for _ in range(3)]
    rd = write_stack(tmp_path / "s.bpcm", frames, KIND_RAW, "dark")
    for got, want in zip(rd, frames):
        assert got.dtype == np.float64
        np.testing.assert_allclose(got, want, atol=0.5 / RAW_SCALE + 1e-12)
        # stored values are exact multiples of the quantum
        assert np.all(got * RAW_SCALE == np.rint(got * RAW_SCALE))


def test_reader_is_reiterable_and_random_access(tmp_path, rng):
    frames = [rng.random((4, 11)) < 0.5 for _ in range(6)]
    rd = write_stack(tmp_path / "s.bpcm", frames, KIND_BINARY)
    first = [f.copy() for f in rd]
    second = list(rd)  # fresh handle, same contents
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(rd.read_frame(3), frames[3])
    with pytest.raises(ParameterError):
        rd.read_frame(6)
    with pytest.raises(ParameterError):
        rd.read_frame(-1)


def test_frame_count_patched_on_close(tmp_path):
    path = tmp_path / "s.bpcm"
    wr = StackWriter(path, kind=KIND_BINARY, plane="image", shape=(3, 3))
    wr.write(np.zeros((3, 3), dtype=bool))
    wr.write(np.ones((3, 3), dtype=bool))
    wr.close()
    wr.close()  # idempotent
    assert wr.n_frames == 2
    assert len(StackReader(path)) == 2


def test_describe_reports_header_fields(tmp_path):
    rd = write_stack(tmp_path / "s.bpcm", [np.zeros((2, 9), dtype=bool)],
                     KIND_BINARY, "image", seed=5)
    info = rd.describe()
    assert info["kind"] == "binary"
    assert info["plane"] == "image"
    assert (info["height"], info["width"]) == (2, 9)
    assert info["frame_count"] == 1
    assert info["seed"] == 5
    assert info["config_digest"] == "00" * 32


def test_writer_validation(tmp_path):
    path = tmp_path / "s.bpcm"
    with pytest.raises(ParameterError):
        StackWriter(path, kind=7, plane="image", shape=(3, 3))
    with pytest.raises(ParameterError):
        StackWriter(path, kind=KIND_BINARY, plane="sideways", shape=(3, 3))
    with pytest.raises(ParameterError):
        StackWriter(path, kind=KIND_BINARY, plane="image", shape=(3, 3),
                    config_digest=b"short")
    with StackWriter(path, kind=KIND_BINARY, plane="image", shape=(3, 3)) as wr:
        with pytest.raises(ParameterError):
            wr.write(np.zeros((4, 4), dtype=bool))


def test_truncated_payload_detected(tmp_path, rng):
    path = tmp_path / "s.bpcm"
    write_stack(path, [rng.random((5, 5)) < 0.5 for _ in range(4)], KIND_BINARY)
    data = path.read_bytes()
    path.write_bytes(data[:-3])
    with pytest.raises(FrameFormatError, match="truncated or corrupt"):
        StackReader(path)


def test_header_corruption_detected(tmp_path):
    path = tmp_path / "s.bpcm"
    write_stack(path, [np.zeros((3, 3), dtype=bool)], KIND_BINARY)
    data = bytearray(path.read_bytes())

    bad_magic = tmp_path / "magic.bpcm"
    bad_magic.write_bytes(b"NOPE" + data[4:])
    with pytest.raises(FrameFormatError, match="magic"):
        StackReader(bad_magic)

    bad_version = tmp_path / "version.bpcm"
    bad_version.write_bytes(data[:4] + struct.pack("<H", 9) + data[6:])
    with pytest.raises(FrameFormatError, match="version"):
        StackReader(bad_version)

    short = tmp_path / "short.bpcm"
    short.write_bytes(data[: HEADER_SIZE - 10])
    with pytest.raises(FrameFormatError, match="header"):
        StackReader(short)


def test_accepts_binaryframe_like_objects(tmp_path):
    class Holder:
        def __init__(self, bits):
            self.bits = bits

    bits = np.eye(4, dtype=bool)
    with StackWriter(tmp_path / "s.bpcm", kind=KIND_BINARY, plane="image",
                     shape=bits.shape, seed=0, config_digest=b"\x00" * 32) as wr:
        wr.write(Holder(bits))
    rd = StackReader(tmp_path / "s.bpcm")
    np.testing.assert_array_equal(rd.read_frame(0), bits)


@given(
    h=st.integers(1, 12),
    w=st.integers(1, 20),
    n=st.integers(1, 4),
    plane=st.sampled_from(sorted(PLANE_CODES)),
    seed=st.integers(0, 2**64 - 1),
    data=st.data(),
)
def test_binary_roundtrip_property(tmp_path_factory, h, w, n, plane, seed, data):
    """Any bit pattern survives pack/unpack, including widths not on byte
    boundaries."""
    bits = data.draw(
        st.lists(
            st.lists(st.booleans(), min_size=h * w, max_size=h * w),
            min_size=n, max_size=n,
        )
    )
    frames = [np.array(row, dtype=bool).reshape(h, w) for row in bits]
    path = tmp_path_factory.mktemp("fs") / "prop.bpcm"
    rd = write_stack(path, frames, KIND_BINARY, plane, seed=seed)
    assert rd.seed == seed
    assert rd.plane_name == plane
    for got, want in zip(rd, frames):
        np.testing.assert_array_equal(got, want)
