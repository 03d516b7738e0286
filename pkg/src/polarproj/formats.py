"""Raster file formats for plane-stacked float and 8-bit images.

Two tiny headered formats cover everything the workbench persists:

``.sraw``
    ASCII header ``"SRAW <width> <height> <channels> <planes>\\n"`` followed
    by the raw samples as little-endian float32, stored planar: plane by
    plane, channel by channel within a plane, rows in row-major order.

``.ppat``
    ASCII header ``"PPAT <width> <height> <channels>\\n"`` followed by 8-bit
    samples, channel-planar, row-major.

Both formats round-trip bit exactly.  In-memory arrays are float64; the
float32 cast on write is the only place precision is dropped, and reading
converts back exactly.

Plane orders are fixed per payload type: Stokes images store (s0, s1, s2),
raw polarization images store (i0, i45, i90, i135), flat vectors store a
single 1 x n plane.
"""

from __future__ import annotations

import numpy as np

from .stokes import RawPolarImage, StokesImage


class FormatError(ValueError):
    """Raised for malformed headers or truncated payloads."""


SRAW_MAGIC = b"SRAW"
PPAT_MAGIC = b"PPAT"


def _read_header(fh, magic, n_fields):
    line = fh.readline(128)
    if not line.endswith(b"\n"):
        raise FormatError("missing or overlong header line")
    parts = line[:-1].split(b" ")
    if len(parts) != n_fields + 1 or parts[0] != magic:
        raise FormatError(f"bad header {line!r}")
    try:
        dims = [int(p) for p in parts[1:]]
    except ValueError as exc:
        raise FormatError(f"non-integer header field in {line!r}") from exc
    if any(d <= 0 for d in dims):
        raise FormatError(f"non-positive dimension in {line!r}")
    return dims


def write_sraw(path, planes) -> None:
    """Write a stack of image planes to an .sraw file.

    ``planes`` is an array (or sequence of arrays) with shape
    (planes, height, width, channels).  Values are cast to little-endian
    float32 for storage.
    """
    arr = np.asarray(planes, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"expected (planes, height, width, channels), got {arr.shape}")
    p, h, w, c = arr.shape
    header = f"SRAW {w} {h} {c} {p}\n".encode("ascii")
    body = arr.transpose(0, 3, 1, 2).astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body)


def read_sraw(path) -> np.ndarray:
    """Read an .sraw file back as a float64 (planes, height, width, channels) array."""
    with open(path, "rb") as fh:
        w, h, c, p = _read_header(fh, SRAW_MAGIC, 4)
        body = fh.read()
    expected = p * c * h * w * 4
    if len(body) != expected:
        raise FormatError(f"payload is {len(body)} bytes, expected {expected}")
    arr = np.frombuffer(body, dtype="<f4").reshape(p, c, h, w)
    return arr.transpose(0, 2, 3, 1).astype(np.float64)


def write_ppat(path, values) -> None:
    """Write an 8-bit pattern (height, width, channels) to a .ppat file."""
    arr = np.asarray(values)
    if arr.ndim != 3:
        raise ValueError(f"expected (height, width, channels), got {arr.shape}")
    if arr.dtype != np.uint8:
        if ((arr < 0) | (arr > 255)).any():
            raise ValueError("pattern values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    h, w, c = arr.shape
    header = f"PPAT {w} {h} {c}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.transpose(2, 0, 1).tobytes())


def read_ppat(path) -> np.ndarray:
    """Read a .ppat file back as a uint8 (height, width, channels) array."""
    with open(path, "rb") as fh:
        w, h, c = _read_header(fh, PPAT_MAGIC, 3)
        body = fh.read()
    expected = c * h * w
    if len(body) != expected:
        raise FormatError(f"payload is {len(body)} bytes, expected {expected}")
    return np.frombuffer(body, dtype=np.uint8).reshape(c, h, w).transpose(1, 2, 0).copy()


def save_stokes(path, stokes: StokesImage) -> None:
    """Persist a Stokes image with the fixed plane order (s0, s1, s2)."""
    write_sraw(path, np.stack([stokes.s0, stokes.s1, stokes.s2]))


def load_stokes(path) -> StokesImage:
    arr = read_sraw(path)
    if arr.shape[0] != 3:
        raise FormatError(f"Stokes file must hold 3 planes, found {arr.shape[0]}")
    return StokesImage(arr[0], arr[1], arr[2])


def save_raw(path, raw: RawPolarImage) -> None:
    """Persist a raw four-angle image with plane order (i0, i45, i90, i135)."""
    write_sraw(path, np.stack(raw.planes()))


def load_raw(path) -> RawPolarImage:
    arr = read_sraw(path)
    if arr.shape[0] != 4:
        raise FormatError(f"raw polar file must hold 4 planes, found {arr.shape[0]}")
    return RawPolarImage(arr[0], arr[1], arr[2], arr[3])


def save_flat(path, vector) -> None:
    """Persist a flat float vector as a single 1 x n plane."""
    vec = np.asarray(vector, dtype=np.float64).ravel()
    write_sraw(path, vec.reshape(1, 1, vec.size, 1))


def load_flat(path) -> np.ndarray:
    arr = read_sraw(path)
    return arr.ravel()
