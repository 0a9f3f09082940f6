"""Raster types, seeded randomness, and the CTR1 binary container.

Rasters store 32-bit floats, the same precision the container serializes,
so a write/read cycle is bit-exact.  Numerical routines elsewhere promote
to float64 internally and cast back when producing a raster.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri


class DimensionError(ValueError):
    """Raster or operator dimensions are invalid or inconsistent."""


class ParameterError(ValueError):
    """A scalar parameter is outside its documented range."""


class DataError(ValueError):
    """Payload values violate finiteness or range invariants."""


class FormatError(ValueError):
    """A container file is malformed."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite or otherwise invalid state."""


def _frozen_f32(data, rows, cols, what):
    arr = np.asarray(data, dtype=np.float32)
    if arr.size != rows * cols:
        raise DimensionError(
            f"{what} payload has {arr.size} values, expected {rows}x{cols}"
        )
    arr = arr.reshape(rows, cols).copy()
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{what} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Image:
    """H x W grid of attenuation values, row-major float32."""

    rows: int
    cols: int
    data: np.ndarray

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DimensionError(f"image dimensions must be positive, got {self.rows}x{self.cols}")
        object.__setattr__(self, "data", _frozen_f32(self.data, self.rows, self.cols, "image"))

    @classmethod
    def from_array(cls, arr) -> "Image":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise DimensionError(f"expected a 2-D array, got ndim={arr.ndim}")
        return cls(arr.shape[0], arr.shape[1], arr)

    @property
    def shape(self):
        return (self.rows, self.cols)

    def as_f64(self) -> np.ndarray:
        return np.asarray(self.data, dtype=np.float64)

    def __eq__(self, other):
        return (
            isinstance(other, Image)
            and self.shape == other.shape
            and self.data.tobytes() == other.data.tobytes()
        )


@dataclass(frozen=True, eq=False)
class Sinogram:
    """V x D grid of line integrals with one acquisition angle per view.

    Angles are degrees, strictly increasing within [0, 180).
    """

    views: int
    detectors: int
    angles_deg: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        if self.views < 1 or self.detectors < 1:
            raise DimensionError(
                f"sinogram dimensions must be positive, got {self.views}x{self.detectors}"
            )
        angles = np.asarray(self.angles_deg, dtype=np.float32).ravel().copy()
        if angles.size != self.views:
            raise DimensionError(f"expected {self.views} angles, got {angles.size}")
        if not np.all(np.isfinite(angles)):
            raise DataError("sinogram angles contain non-finite values")
        if np.any(angles < 0.0) or np.any(angles >= 180.0):
            raise ParameterError("view angles must lie in [0, 180) degrees")
        if self.views > 1 and np.any(np.diff(angles) <= 0.0):
            raise ParameterError("view angles must be strictly increasing")
        angles.setflags(write=False)
        object.__setattr__(self, "angles_deg", angles)
        object.__setattr__(
            self, "data", _frozen_f32(self.data, self.views, self.detectors, "sinogram")
        )

    @property
    def shape(self):
        return (self.views, self.detectors)

    def as_f64(self) -> np.ndarray:
        return np.asarray(self.data, dtype=np.float64)

    def __eq__(self, other):
        return (
            isinstance(other, Sinogram)
            and self.shape == other.shape
            and self.angles_deg.tobytes() == other.angles_deg.tobytes()
            and self.data.tobytes() == other.data.tobytes()
        )


def new_image(rows: int, cols: int, fill: float) -> Image:
    """Constant-filled image; `fill` must be finite."""
    if not np.isfinite(fill):
        raise ParameterError(f"fill value must be finite, got {fill}")
    if rows < 1 or cols < 1:
        raise DimensionError(f"image dimensions must be positive, got {rows}x{cols}")
    return Image(rows, cols, np.full((rows, cols), fill, dtype=np.float32))


class SeededRng:
    """Deterministic random source: PCG64 bit stream with inverse-CDF normals.

    The mapping is frozen for reproducibility across platforms: each 64-bit
    word w becomes the open-interval uniform u = ((w >> 12) + 0.5) * 2**-52,
    and a standard normal is obtained as the Gaussian inverse CDF of u.
    The whole value stream is a pure function of the seed.  Instances are
    single-owner; never share one across concurrent chains.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < (1 << 64):
            raise ParameterError("seed must be an unsigned 64-bit integer")
        self.seed = seed
        self._bits = np.random.PCG64(seed)

    def uniform(self, n: int) -> np.ndarray:
        """n uniforms in the open interval (0, 1)."""
        if n < 1:
            raise ParameterError(f"sample count must be >= 1, got {n}")
        raw = self._bits.random_raw(n)
        return ((raw >> np.uint64(12)) + 0.5) * 2.0**-52

    def standard_normal(self, n: int) -> np.ndarray:
        return ndtri(self.uniform(n))

    def normal_image(self, rows: int, cols: int) -> Image:
        return Image(rows, cols, self.standard_normal(rows * cols).reshape(rows, cols))


def sample_standard_normal(rng: SeededRng, n: int) -> np.ndarray:
    """n independent N(0,1) draws from the rng's frozen stream."""
    return rng.standard_normal(n)


_MAGIC = b"CTR1"
_KIND_IMAGE = 0
_KIND_SINOGRAM = 1
_DTYPE_F32 = 0
_HEADER = struct.Struct("<4sBBHII")


def write_raster(path, payload) -> None:
    """Write an Image or Sinogram to `path` in the CTR1 container.

    Layout (little-endian): magic "CTR1", kind u8 (0=image, 1=sinogram),
    dtype u8 (0=f32), reserved u16 = 0, rows u32, cols u32; sinograms add
    an angle block (count u32 == rows, then count f32 degrees); then the
    rows*cols f32 payload, row-major.
    """
    if isinstance(payload, Image):
        head = _HEADER.pack(_MAGIC, _KIND_IMAGE, _DTYPE_F32, 0, payload.rows, payload.cols)
        blocks = [head, payload.data.astype("<f4", copy=False).tobytes()]
    elif isinstance(payload, Sinogram):
        head = _HEADER.pack(
            _MAGIC, _KIND_SINOGRAM, _DTYPE_F32, 0, payload.views, payload.detectors
        )
        blocks = [
            head,
            struct.pack("<I", payload.views),
            payload.angles_deg.astype("<f4", copy=False).tobytes(),
            payload.data.astype("<f4", copy=False).tobytes(),
        ]
    else:
        raise ParameterError(f"cannot serialize {type(payload).__name__}")
    with open(path, "wb") as fh:
        fh.write(b"".join(blocks))


def read_raster(path):
    """Parse a CTR1 container back into an Image or Sinogram.

    Raises FormatError for malformed files and DataError for non-finite
    payload values.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError("file shorter than the CTR1 header")
    magic, kind, dtype, reserved, rows, cols = _HEADER.unpack_from(blob, 0)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    if dtype != _DTYPE_F32:
        raise FormatError(f"unsupported dtype code {dtype}")
    if reserved != 0:
        raise FormatError(f"reserved field must be 0, got {reserved}")
    if rows < 1 or cols < 1:
        raise FormatError(f"invalid dimensions {rows}x{cols}")
    offset = _HEADER.size

    angles = None
    if kind == _KIND_SINOGRAM:
        if len(blob) < offset + 4:
            raise FormatError("truncated angle block")
        (count,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        if count != rows:
            raise FormatError(f"angle count {count} != view count {rows}")
        if len(blob) < offset + 4 * count:
            raise FormatError("truncated angle block")
        angles = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
    elif kind != _KIND_IMAGE:
        raise FormatError(f"unknown raster kind {kind}")

    expected = rows * cols * 4
    if len(blob) - offset != expected:
        raise FormatError(
            f"payload holds {len(blob) - offset} bytes, expected {expected}"
        )
    data = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=offset)

    try:
        if kind == _KIND_IMAGE:
            return Image(rows, cols, data)
        return Sinogram(rows, cols, angles, data)
    except DataError:
        raise
    except ValueError as exc:
        raise FormatError(f"invalid raster content: {exc}") from exc


def write_pgm(path, raster) -> None:
    """8-bit binary PGM preview, min-max normalized; constant rasters map to 0.

    For human inspection only; previews are never re-imported.
    """
    arr = np.asarray(raster.data, dtype=np.float64)
    lo = arr.min()
    hi = arr.max()
    if hi > lo:
        quant = np.round((arr - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        quant = np.zeros(arr.shape, dtype=np.uint8)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + quant.tobytes())
