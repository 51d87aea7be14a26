"""Binary field dumps (PATF) and grayscale PGM export.

PATF layout: 32-byte header = magic b"PATF", u32 nx, u32 ny, 4 pad bytes,
f64 dx, f64 dy; then nx*ny little-endian f64 values with flat index
i + nx*j (node (i, j) at x0 + i*dx, y0 + j*dy; the origin travels in a
sidecar-free convention: dumps are origin-agnostic).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .media import Grid2D, ScalarField2D

_MAGIC = b"PATF"
_HEADER = struct.Struct("<4sII4xdd")
assert _HEADER.size == 32


def write_field(path, f: ScalarField2D) -> None:
    g = f.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, g.nx, g.ny, g.dx, g.dy))
        # flat index i + nx*j == Fortran order of the (nx, ny) array
        fh.write(np.asfortranarray(f.values).tobytes(order="F"))


def read_field(path, origin=(0.0, 0.0)) -> ScalarField2D:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ConfigurationError(f"{path}: truncated field file")
    magic, nx, ny, dx, dy = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ConfigurationError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 8 * nx * ny
    if len(raw) != expected:
        raise ConfigurationError(f"{path}: size {len(raw)} != expected {expected}")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape((nx, ny), order="F")
    grid = Grid2D(nx, ny, dx, dy, origin[0], origin[1])
    return ScalarField2D(grid, values.copy())


def write_pgm(path, f: ScalarField2D, window: tuple[float, float] = None) -> None:
    """8-bit binary PGM; values are clipped to `window` (default data range)."""
    v = f.values
    if window is None:
        lo, hi = float(v.min()), float(v.max())
        if hi <= lo:
            hi = lo + 1.0
    else:
        lo, hi = window
        if hi <= lo:
            raise ConfigurationError(f"bad value window ({lo}, {hi})")
    scaled = np.clip((v - lo) / (hi - lo), 0.0, 1.0)
    pixels = np.round(255.0 * scaled).astype(np.uint8)
    # image rows top-to-bottom = decreasing y, columns = increasing x
    img = pixels.T[::-1, :]
    with open(path, "wb") as fh:
        fh.write(f"P5\n{f.grid.nx} {f.grid.ny}\n255\n".encode())
        fh.write(img.tobytes(order="C"))
