"""Dense array types (frames, video cubes, coding cubes, flow fields) plus
bit-exact binary file I/O and PGM/PPM image exchange.

Centralizes all file format handling so the other modules never touch raw
bytes directly.  All tensor objects are immutable: constructors copy their
input and mark the underlying numpy buffer read-only, so instances can be
shared freely across threads.

Binary container layout (little-endian throughout):

    magic   4 bytes  b"KHCV"
    version 1 byte   currently 1
    dtype   1 byte   0 = real32, 1 = binary uint8
    kind    1 byte   2 = single frame, 3 = cube, 4 = flow field
    dims    kind-dependent uint32 list: (height, width) for frames,
            (height, width, frames) for cubes, (height, width, 2) for
            flow fields (u plane then v plane)
    payload row-major samples, frames contiguous
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Frame",
    "VideoCube",
    "CodingCube",
    "FlowField",
    "FormatError",
    "MagicError",
    "VersionError",
    "DtypeError",
    "TruncatedError",
    "save_tensor",
    "load_tensor",
    "import_pgm",
    "export_pgm",
    "export_ppm",
]

_MAGIC = b"KHCV"
_VERSION = 1
_DTYPE_REAL32 = 0
_DTYPE_BINARY8 = 1
_KIND_FRAME = 2
_KIND_CUBE = 3
_KIND_FLOW = 4


class FormatError(ValueError):
    """A file does not conform to the expected binary layout."""


class MagicError(FormatError):
    """Leading magic bytes are wrong."""


class VersionError(FormatError):
    """Container version is not supported."""


class DtypeError(FormatError):
    """Sample dtype byte is unknown or inconsistent with the record kind."""


class TruncatedError(FormatError):
    """File ends before the declared payload is complete."""


def _frozen(data, dtype) -> np.ndarray:
    arr = np.array(data, dtype=dtype, order="C", copy=True)
    arr.setflags(write=False)
    return arr


# ===== Tensor types =====


@dataclass(frozen=True, eq=False)
class Frame:
    """Single grayscale image, shape (height, width), float32, nominal [0, 1]."""

    samples: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.samples, np.float32)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"frame needs a non-empty 2-D array, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("frame samples must all be finite")
        object.__setattr__(self, "samples", arr)

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    def __eq__(self, other):
        return isinstance(other, Frame) and np.array_equal(self.samples, other.samples)


@dataclass(frozen=True, eq=False)
class VideoCube:
    """Stack of frames, shape (frames, height, width), float32.

    Frames are stored contiguously (frame-major), each frame row-major.
    """

    samples: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.samples, np.float32)
        if arr.ndim != 3 or arr.size == 0:
            raise ValueError(f"video cube needs a non-empty 3-D array, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("video cube samples must all be finite")
        object.__setattr__(self, "samples", arr)

    @property
    def frames(self) -> int:
        return self.samples.shape[0]

    @property
    def height(self) -> int:
        return self.samples.shape[1]

    @property
    def width(self) -> int:
        return self.samples.shape[2]

    def frame(self, k: int) -> Frame:
        """Return frame k (0-based) as a Frame."""
        return Frame(self.samples[k])

    def __eq__(self, other):
        return isinstance(other, VideoCube) and np.array_equal(self.samples, other.samples)


@dataclass(frozen=True, eq=False)
class CodingCube:
    """Binary mask stack, shape (frames, height, width), uint8 values in {0, 1}."""

    samples: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.samples, np.uint8)
        if arr.ndim != 3 or arr.size == 0:
            raise ValueError(f"coding cube needs a non-empty 3-D array, got shape {arr.shape}")
        if arr.max(initial=0) > 1:
            raise ValueError("coding cube samples must be 0 or 1")
        object.__setattr__(self, "samples", arr)

    @property
    def frames(self) -> int:
        return self.samples.shape[0]

    @property
    def height(self) -> int:
        return self.samples.shape[1]

    @property
    def width(self) -> int:
        return self.samples.shape[2]

    def __eq__(self, other):
        return isinstance(other, CodingCube) and np.array_equal(self.samples, other.samples)


@dataclass(frozen=True, eq=False)
class FlowField:
    """Dense 2-D motion field: u = horizontal, v = vertical displacement in pixels.

    Positive u points right, positive v points down.  A field f warps a source
    image onto a target grid through out(p) = source(p + f(p)).
    """

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = _frozen(self.u, np.float32)
        v = _frozen(self.v, np.float32)
        if u.ndim != 2 or u.size == 0:
            raise ValueError(f"flow planes need non-empty 2-D arrays, got shape {u.shape}")
        if u.shape != v.shape:
            raise ValueError(f"flow planes disagree: u {u.shape} vs v {v.shape}")
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise ValueError("flow samples must all be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, FlowField)
            and np.array_equal(self.u, other.u)
            and np.array_equal(self.v, other.v)
        )


Tensor = Frame | VideoCube | CodingCube | FlowField


# ===== Binary container I/O =====


def save_tensor(data: Tensor, path) -> None:
    """Serialize a tensor to the binary container format.

    The parent directory must already exist.  Writing the same object twice
    produces byte-identical files.
    """
    if isinstance(data, Frame):
        dtype, kind = _DTYPE_REAL32, _KIND_FRAME
        dims = (data.height, data.width)
        payload = data.samples.astype("<f4").tobytes()
    elif isinstance(data, VideoCube):
        dtype, kind = _DTYPE_REAL32, _KIND_CUBE
        dims = (data.height, data.width, data.frames)
        payload = data.samples.astype("<f4").tobytes()
    elif isinstance(data, CodingCube):
        dtype, kind = _DTYPE_BINARY8, _KIND_CUBE
        dims = (data.height, data.width, data.frames)
        payload = data.samples.tobytes()
    elif isinstance(data, FlowField):
        dtype, kind = _DTYPE_REAL32, _KIND_FLOW
        dims = (data.height, data.width, 2)
        payload = data.u.astype("<f4").tobytes() + data.v.astype("<f4").tobytes()
    else:
        raise TypeError(f"cannot serialize {type(data).__name__}")

    header = _MAGIC + struct.pack("<BBB", _VERSION, dtype, kind)
    header += struct.pack(f"<{len(dims)}I", *dims)
    Path(path).write_bytes(header + payload)


def load_tensor(path) -> Tensor:
    """Parse a binary container file back into the tensor it stores.

    Raises MagicError, VersionError, DtypeError or TruncatedError for
    malformed headers, FormatError for any other structural problem.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise TruncatedError(f"{path}: too short for a magic header")
    if raw[:4] != _MAGIC:
        raise MagicError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 7:
        raise TruncatedError(f"{path}: header ends inside the fixed fields")
    version, dtype, kind = struct.unpack("<BBB", raw[4:7])
    if version != _VERSION:
        raise VersionError(f"{path}: unsupported version {version}")
    if dtype not in (_DTYPE_REAL32, _DTYPE_BINARY8):
        raise DtypeError(f"{path}: unknown dtype byte {dtype}")
    if kind not in (_KIND_FRAME, _KIND_CUBE, _KIND_FLOW):
        raise FormatError(f"{path}: unknown kind byte {kind}")

    ndims = 2 if kind == _KIND_FRAME else 3
    dim_end = 7 + 4 * ndims
    if len(raw) < dim_end:
        raise TruncatedError(f"{path}: header ends inside the dims")
    dims = struct.unpack(f"<{ndims}I", raw[7:dim_end])
    if any(d == 0 for d in dims):
        raise FormatError(f"{path}: zero-sized dimension in {dims}")
    if kind == _KIND_FLOW and dims[2] != 2:
        raise FormatError(f"{path}: flow field must carry 2 planes, header says {dims[2]}")

    count = 1
    for d in dims:
        count *= d
    sample_size = 4 if dtype == _DTYPE_REAL32 else 1
    expected = count * sample_size
    payload = raw[dim_end:]
    if len(payload) < expected:
        raise TruncatedError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise FormatError(f"{path}: {len(payload) - expected} trailing bytes after payload")

    try:
        if kind == _KIND_FRAME:
            if dtype != _DTYPE_REAL32:
                raise DtypeError(f"{path}: frames must use real32 samples")
            h, w = dims
            return Frame(np.frombuffer(payload, dtype="<f4").reshape(h, w))
        if kind == _KIND_CUBE:
            h, w, b = dims
            if dtype == _DTYPE_REAL32:
                arr = np.frombuffer(payload, dtype="<f4").reshape(b, h, w)
                return VideoCube(arr)
            arr = np.frombuffer(payload, dtype=np.uint8).reshape(b, h, w)
            return CodingCube(arr)
        if dtype != _DTYPE_REAL32:
            raise DtypeError(f"{path}: flow fields must use real32 samples")
        h, w, _ = dims
        planes = np.frombuffer(payload, dtype="<f4").reshape(2, h, w)
        return FlowField(planes[0], planes[1])
    except ValueError as exc:
        raise FormatError(f"{path}: corrupt payload ({exc})") from exc


# ===== PGM / PPM exchange =====


def _read_pnm_header(raw: bytes, path) -> tuple[bytes, list[int], int]:
    """Parse a PNM header: returns (magic, [dims...], payload offset)."""
    if len(raw) < 2:
        raise FormatError(f"{path}: not a PNM file")
    magic = raw[:2]
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        token = raw[start:pos]
        if not token.isdigit():
            raise FormatError(f"{path}: bad header token {token!r}")
        fields.append(int(token))
    if pos >= len(raw):
        raise TruncatedError(f"{path}: header ends before payload")
    pos += 1  # single whitespace byte separating header and payload
    return magic, fields, pos


def import_pgm(path) -> Frame:
    """Load a binary PGM (P5, maxval 255) as a Frame with values in [0, 1]."""
    raw = Path(path).read_bytes()
    magic, (width, height, maxval), pos = _read_pnm_header(raw, path)
    if magic != b"P5":
        raise FormatError(f"{path}: expected P5, got {magic!r}")
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    payload = raw[pos : pos + width * height]
    if len(payload) < width * height:
        raise TruncatedError(f"{path}: pixel data incomplete")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return Frame(pixels.astype(np.float32) / 255.0)


def _quantize(values: np.ndarray) -> np.ndarray:
    # round half up: 0.5 maps to byte 128
    clamped = np.clip(values, 0.0, 1.0).astype(np.float64)
    return np.floor(clamped * 255.0 + 0.5).astype(np.uint8)


def export_pgm(frame: Frame, path) -> None:
    """Write a Frame as binary PGM; values are clamped to [0, 1] first."""
    body = _quantize(frame.samples).tobytes()
    header = f"P5\n{frame.width} {frame.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + body)


def export_ppm(rgb: np.ndarray, path) -> None:
    """Write an (H, W, 3) array of [0, 1] floats as binary PPM."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) array, got shape {rgb.shape}")
    body = _quantize(rgb).tobytes()
    header = f"P6\n{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + body)
