"""Binary container for frame stacks (magic ``BPCM``).

Layout: a fixed 60-byte little-endian header followed by frames back to back.

    offset  field         type
    0       magic         4s   = b"BPCM"
    4       version       u16  = 1
    6       kind          u8   (0 = raw electrons, 1 = thresholded bits)
    7       plane         u8   (0 = dark, 1 = image, 2 = farfield)
    8       width         u32  pixels
    12      height        u32  pixels
    16      frame_count   u32  (patched on close)
    20      seed          u64  master seed the frames came from
    28      config_digest 32s  sha256 of the producing configuration

Raw frames store each pixel as int32 fixed point in units of 1/256 electron
(row-major).  Binary frames store each row bit-packed MSB-first, padded to a
whole byte, so one frame is height * ceil(width / 8) bytes.  The reader
validates the header and that the payload length is a whole number of
frames; it is cheap to construct and re-iterable (every iteration opens its
own handle), so it can be streamed twice by calibration passes.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FrameFormatError, ParameterError

MAGIC = b"BPCM"
FORMAT_VERSION = 1
HEADER_STRUCT = struct.Struct("<4sHBBIIIQ32s")
HEADER_SIZE = HEADER_STRUCT.size  # 60
_FRAME_COUNT_OFFSET = struct.calcsize("<4sHBBII")  # 16

KIND_RAW = 0
KIND_BINARY = 1
_KIND_NAMES = {KIND_RAW: "raw", KIND_BINARY: "binary"}

PLANE_DARK = 0
PLANE_IMAGE = 1
PLANE_FARFIELD = 2
_PLANE_NAMES = {PLANE_DARK: "dark", PLANE_IMAGE: "image", PLANE_FARFIELD: "farfield"}
PLANE_CODES = {name: code for code, name in _PLANE_NAMES.items()}

#: raw frames are fixed point with this many steps per electron
RAW_SCALE = 256.0
_I32_MIN = np.iinfo(np.int32).min
_I32_MAX = np.iinfo(np.int32).max


@dataclass(frozen=True)
class StackHeader:
    kind: int
    plane: int
    width: int
    height: int
    frame_count: int
    seed: int
    config_digest: bytes

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def kind_name(self) -> str:
        return _KIND_NAMES[self.kind]

    @property
    def plane_name(self) -> str:
        return _PLANE_NAMES[self.plane]

    @property
    def frame_nbytes(self) -> int:
        if self.kind == KIND_RAW:
            return self.height * self.width * 4
        return self.height * ((self.width + 7) // 8)

    def pack(self) -> bytes:
        return HEADER_STRUCT.pack(
            MAGIC, FORMAT_VERSION, self.kind, self.plane,
            self.width, self.height, self.frame_count, self.seed, self.config_digest,
        )


def _parse_header(raw: bytes, path) -> StackHeader:
    if len(raw) < HEADER_SIZE:
        raise FrameFormatError(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    magic, version, kind, plane, width, height, count, seed, digest = HEADER_STRUCT.unpack(
        raw[:HEADER_SIZE]
    )
    if magic != MAGIC:
        raise FrameFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FrameFormatError(f"{path}: unsupported format version {version}")
    if kind not in _KIND_NAMES:
        raise FrameFormatError(f"{path}: unknown frame kind {kind}")
    if plane not in _PLANE_NAMES:
        raise FrameFormatError(f"{path}: unknown plane code {plane}")
    if width < 1 or height < 1:
        raise FrameFormatError(f"{path}: degenerate frame shape {height}x{width}")
    return StackHeader(kind, plane, width, height, count, seed, digest)


class StackWriter:
    """Sequential writer; patches the frame count into the header on close."""

    def __init__(self, path, *, kind: int, plane, shape: tuple[int, int],
                 seed: int = 0, config_digest: bytes = b"\x00" * 32):
        if kind not in _KIND_NAMES:
            raise ParameterError(f"unknown frame kind {kind!r}")
        if isinstance(plane, str):
            try:
                plane = PLANE_CODES[plane]
            except KeyError:
                raise ParameterError(
                    f"unknown plane {plane!r}, expected one of {sorted(PLANE_CODES)}"
                ) from None
        if plane not in _PLANE_NAMES:
            raise ParameterError(f"unknown plane code {plane!r}")
        if len(config_digest) != 32:
            raise ParameterError("config_digest must be exactly 32 bytes")
        h, w = int(shape[0]), int(shape[1])
        self.path = os.fspath(path)
        self.header = StackHeader(kind, plane, w, h, 0, int(seed), bytes(config_digest))
        self._n = 0
        self._fh = open(self.path, "wb")
        self._fh.write(self.header.pack())

    def write(self, frame) -> None:
        frame = np.asarray(frame.bits if hasattr(frame, "bits") else frame)
        if frame.shape != self.header.shape:
            raise ParameterError(
                f"frame shape {frame.shape} != stack shape {self.header.shape}"
            )
        if self.header.kind == KIND_BINARY:
            payload = np.packbits(frame.astype(bool), axis=1).tobytes()
        else:
            fixed = np.rint(np.asarray(frame, dtype=np.float64) * RAW_SCALE)
            payload = np.clip(fixed, _I32_MIN, _I32_MAX).astype("<i4").tobytes()
        self._fh.write(payload)
        self._n += 1

    def close(self) -> None:
        if self._fh is None:
            return
        self._fh.seek(_FRAME_COUNT_OFFSET)
        self._fh.write(struct.pack("<I", self._n))
        self._fh.close()
        self._fh = None

    @property
    def n_frames(self) -> int:
        return self._n

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


class StackReader:
    """Validated, re-iterable view of a stack file.

    Iterating yields float64 electron frames (raw stacks) or bool frames
    (binary stacks).  Each iteration opens a fresh handle, so the same
    reader can feed multi-pass consumers.
    """

    def __init__(self, path):
        self.path = os.fspath(path)
        size = os.path.getsize(self.path)
        with open(self.path, "rb") as fh:
            self.header = _parse_header(fh.read(HEADER_SIZE), self.path)
        payload = size - HEADER_SIZE
        per = self.header.frame_nbytes
        if payload != self.header.frame_count * per:
            raise FrameFormatError(
                f"{self.path}: payload is {payload} bytes, expected "
                f"{self.header.frame_count} frames of {per} bytes (truncated or corrupt)"
            )

    # convenience passthroughs
    @property
    def shape(self) -> tuple[int, int]:
        return self.header.shape

    @property
    def kind(self) -> int:
        return self.header.kind

    @property
    def plane_name(self) -> str:
        return self.header.plane_name

    @property
    def seed(self) -> int:
        return self.header.seed

    @property
    def config_digest(self) -> bytes:
        return self.header.config_digest

    def __len__(self) -> int:
        return self.header.frame_count

    def _decode(self, buf: bytes) -> np.ndarray:
        h, w = self.header.shape
        if self.header.kind == KIND_BINARY:
            packed = np.frombuffer(buf, dtype=np.uint8).reshape(h, (w + 7) // 8)
            return np.unpackbits(packed, axis=1, count=w).astype(bool)
        fixed = np.frombuffer(buf, dtype="<i4").reshape(h, w)
        return fixed.astype(np.float64) / RAW_SCALE

    def __iter__(self):
        per = self.header.frame_nbytes
        with open(self.path, "rb") as fh:
            fh.seek(HEADER_SIZE)
            for _ in range(self.header.frame_count):
                buf = fh.read(per)
                if len(buf) != per:
                    raise FrameFormatError(f"{self.path}: truncated mid-frame")
                yield self._decode(buf)

    def read_frame(self, index: int) -> np.ndarray:
        if not (0 <= index < self.header.frame_count):
            raise ParameterError(
                f"frame index {index} out of range [0, {self.header.frame_count})"
            )
        per = self.header.frame_nbytes
        with open(self.path, "rb") as fh:
            fh.seek(HEADER_SIZE + index * per)
            buf = fh.read(per)
        if len(buf) != per:
            raise FrameFormatError(f"{self.path}: truncated mid-frame")
        return self._decode(buf)

    def describe(self) -> dict:
        h = self.header
        return {
            "path": self.path,
            "kind": h.kind_name,
            "plane": h.plane_name,
            "width": h.width,
            "height": h.height,
            "frame_count": h.frame_count,
            "seed": h.seed,
            "config_digest": h.config_digest.hex(),
        }
