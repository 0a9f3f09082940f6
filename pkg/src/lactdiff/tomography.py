"""Parallel-beam acquisition geometry, projection operators, and FBP.

The forward projector is ray-driven with linear interpolation along the
driving axis; the backprojector is the exact transpose of the same stencil,
so the pair satisfies the adjoint identity <Ax, y> = <x, A^T y> to round-off.

Coordinate conventions, frozen so sinograms are portable:
  pixel (row i, col j) center at ((j - (cols-1)/2), ((rows-1)/2 - i)) * pixel_size
  detector bin d at signed offset (d - (detectors-1)/2) * detector_spacing
  the ray for (angle t, offset r) is the line {x cos t + y sin t = r}.
"""

from __future__ import annotations

import enum
import hashlib
import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import DimensionError, Image, ParameterError, Sinogram


class FilterKind(enum.Enum):
    RAM_LAK = "ramlak"
    HANN = "hann"


def default_detectors(n: int) -> int:
    """Bin count covering the diagonal of an n x n image at unit spacing."""
    return int(math.ceil(n * math.sqrt(2.0))) + 1


@dataclass(frozen=True, eq=False)
class Geometry:
    """Immutable acquisition description binding images to sinograms.

    The detector array must span the image diagonal (no truncation of the
    object); construction fails otherwise.
    """

    image_rows: int
    image_cols: int
    detectors: int
    angles_deg: np.ndarray
    pixel_size: float = 1.0
    detector_spacing: float = 1.0

    def __post_init__(self):
        if self.image_rows < 1 or self.image_cols < 1:
            raise DimensionError(
                f"image dimensions must be positive, got {self.image_rows}x{self.image_cols}"
            )
        if self.detectors < 1:
            raise ParameterError("detector count must be >= 1")
        if not (self.pixel_size > 0.0 and np.isfinite(self.pixel_size)):
            raise ParameterError("pixel_size must be positive and finite")
        if not (self.detector_spacing > 0.0 and np.isfinite(self.detector_spacing)):
            raise ParameterError("detector_spacing must be positive and finite")
        angles = np.asarray(self.angles_deg, dtype=np.float64).ravel().copy()
        if angles.size < 1:
            raise ParameterError("at least one view angle is required")
        if not np.all(np.isfinite(angles)):
            raise ParameterError("view angles must be finite")
        if np.any(angles < 0.0) or np.any(angles >= 180.0):
            raise ParameterError("view angles must lie in [0, 180) degrees")
        if angles.size > 1 and np.any(np.diff(angles) <= 0.0):
            raise ParameterError("view angles must be strictly increasing")
        diagonal = math.hypot(
            self.image_rows * self.pixel_size, self.image_cols * self.pixel_size
        )
        span = self.detectors * self.detector_spacing
        if span + 1e-9 < diagonal:
            raise ParameterError(
                f"detector span {span:g} does not cover the image diagonal {diagonal:g}"
            )
        angles.setflags(write=False)
        object.__setattr__(self, "angles_deg", angles)

    @property
    def n_views(self) -> int:
        return self.angles_deg.size

    def detector_offsets(self) -> np.ndarray:
        d = np.arange(self.detectors, dtype=np.float64)
        return (d - (self.detectors - 1) / 2.0) * self.detector_spacing

    def matches_image(self, image: Image) -> None:
        if image.shape != (self.image_rows, self.image_cols):
            raise DimensionError(
                f"image {image.shape} does not match geometry "
                f"{(self.image_rows, self.image_cols)}"
            )

    def matches_sinogram(self, sino: Sinogram) -> None:
        if sino.shape != (self.n_views, self.detectors):
            raise DimensionError(
                f"sinogram {sino.shape} does not match geometry "
                f"{(self.n_views, self.detectors)}"
            )
        if not np.allclose(sino.angles_deg, self.angles_deg, rtol=0.0, atol=2e-4):
            raise DimensionError("sinogram angles do not match geometry angles")

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(
            np.array(
                [
                    self.image_rows,
                    self.image_cols,
                    self.detectors,
                    self.pixel_size,
                    self.detector_spacing,
                ],
                dtype=np.float64,
            ).tobytes()
        )
        h.update(self.angles_deg.tobytes())
        return h.hexdigest()[:16]


def make_limited_geometry(
    n: int, detectors: int, n_views: int, theta_max_deg: float
) -> Geometry:
    """Limited-angle geometry for an n x n image.

    Angles are n_views values evenly spaced on the half-open interval
    [0, theta_max_deg).  When the requested bin count cannot span the image
    diagonal at unit spacing, the detector spacing is widened to exactly
    cover it, preserving the no-truncation invariant.
    """
    if n < 1:
        raise DimensionError("image size must be >= 1")
    if n_views < 1:
        raise ParameterError("view count must be >= 1")
    if detectors < 1:
        raise ParameterError("detector count must be >= 1")
    if not (0.0 < theta_max_deg <= 180.0):
        raise ParameterError(
            f"theta_max must lie in (0, 180] degrees, got {theta_max_deg}"
        )
    angles = theta_max_deg * np.arange(n_views, dtype=np.float64) / n_views
    diagonal = math.hypot(n, n)
    spacing = 1.0 if detectors >= diagonal else diagonal / detectors
    return Geometry(n, n, detectors, angles, 1.0, spacing)


def _gather_sum(matrix: np.ndarray, coord: np.ndarray) -> np.ndarray:
    """Sum matrix values interpolated at fractional column coords.

    matrix is (N, M); coord is (N, D) of fractional column positions; the
    result is (D,), summing the linearly interpolated samples over rows.
    Out-of-range samples contribute zero.
    """
    n_cols = matrix.shape[1]
    j0 = np.floor(coord).astype(np.int64)
    frac = coord - j0
    j1 = j0 + 1
    in0 = (j0 >= 0) & (j0 < n_cols)
    in1 = (j1 >= 0) & (j1 < n_cols)
    v0 = np.take_along_axis(matrix, np.clip(j0, 0, n_cols - 1), axis=1)
    v1 = np.take_along_axis(matrix, np.clip(j1, 0, n_cols - 1), axis=1)
    return (v0 * ((1.0 - frac) * in0) + v1 * (frac * in1)).sum(axis=0)


def _scatter_sum(n_rows: int, n_cols: int, coord: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Exact transpose of _gather_sum: spread vals back through the stencil.

    coord is (N, D), vals is (N, D) already weighted per entry; returns the
    (N, M) accumulation with the same interpolation coefficients.
    """
    j0 = np.floor(coord).astype(np.int64)
    frac = coord - j0
    j1 = j0 + 1
    in0 = (j0 >= 0) & (j0 < n_cols)
    in1 = (j1 >= 0) & (j1 < n_cols)
    base = np.arange(n_rows, dtype=np.int64)[:, None] * n_cols
    flat0 = base + np.clip(j0, 0, n_cols - 1)
    flat1 = base + np.clip(j1, 0, n_cols - 1)
    acc = np.bincount(
        flat0.ravel(), weights=(vals * (1.0 - frac) * in0).ravel(), minlength=n_rows * n_cols
    )
    acc += np.bincount(
        flat1.ravel(), weights=(vals * frac * in1).ravel(), minlength=n_rows * n_cols
    )
    return acc.reshape(n_rows, n_cols)


def _view_coords(geom: Geometry, theta_deg: float):
    """Driving-axis layout for one view.

    Returns (drive_rows, coord, ray_weight): coord is the fractional index
    into the interpolated axis for every (driving index, detector) pair, and
    ray_weight is the path length per driving-axis step.
    """
    theta = math.radians(theta_deg)
    ct, st = math.cos(theta), math.sin(theta)
    ps = geom.pixel_size
    offsets = geom.detector_offsets()
    rows, cols = geom.image_rows, geom.image_cols
    half_r = (rows - 1) / 2.0
    half_c = (cols - 1) / 2.0
    if abs(ct) >= abs(st):
        # near-vertical rays: march over rows, interpolate between columns
        y = (half_r - np.arange(rows, dtype=np.float64)) * ps
        coord = (offsets[None, :] - y[:, None] * st) / (ct * ps) + half_c
        return True, coord, ps / abs(ct)
    # near-horizontal rays: march over columns, interpolate between rows
    x = (np.arange(cols, dtype=np.float64) - half_c) * ps
    coord = half_r - (offsets[None, :] - x[:, None] * ct) / (st * ps)
    return False, coord, ps / abs(st)


# Sparse stencil matrices are cached per geometry; above this entry count
# the per-view loop path is used instead (the matrix would not fit).
_PLAN_NNZ_LIMIT = 40_000_000
_PLAN_CACHE: "OrderedDict[str, sp.csr_matrix]" = OrderedDict()
_PLAN_CACHE_SIZE = 4


def _build_stencil_matrix(geom: Geometry) -> sp.csr_matrix:
    """Assemble the projection stencil as a (V*D, R*C) CSR matrix.

    Entries are exactly the gather coefficients of the per-view loop path;
    using one matrix for both directions makes the adjoint the literal
    transpose.
    """
    rows_n, cols_n, det = geom.image_rows, geom.image_cols, geom.detectors
    row_idx, col_idx, values = [], [], []
    for v, theta_deg in enumerate(geom.angles_deg):
        drive_rows, coord, weight = _view_coords(geom, theta_deg)
        n_drive = coord.shape[0]
        interp_n = cols_n if drive_rows else rows_n
        j0 = np.floor(coord).astype(np.int64)
        frac = coord - j0
        det_grid = np.broadcast_to(
            np.arange(det, dtype=np.int64)[None, :], coord.shape
        )
        drive_grid = np.broadcast_to(
            np.arange(n_drive, dtype=np.int64)[:, None], coord.shape
        )
        for idx, w in ((j0, weight * (1.0 - frac)), (j0 + 1, weight * frac)):
            keep = (idx >= 0) & (idx < interp_n)
            if drive_rows:
                flat_col = drive_grid[keep] * cols_n + idx[keep]
            else:
                flat_col = idx[keep] * cols_n + drive_grid[keep]
            row_idx.append(v * det + det_grid[keep])
            col_idx.append(flat_col)
            values.append(w[keep])
    coo = sp.coo_matrix(
        (
            np.concatenate(values),
            (np.concatenate(row_idx), np.concatenate(col_idx)),
        ),
        shape=(geom.n_views * det, rows_n * cols_n),
    )
    return coo.tocsr()


def _stencil_plan(geom: Geometry):
    estimate = 2 * geom.n_views * geom.detectors * max(geom.image_rows, geom.image_cols)
    if estimate > _PLAN_NNZ_LIMIT:
        return None
    key = geom.digest()
    plan = _PLAN_CACHE.get(key)
    if plan is None:
        plan = _build_stencil_matrix(geom)
        _PLAN_CACHE[key] = plan
        if len(_PLAN_CACHE) > _PLAN_CACHE_SIZE:
            _PLAN_CACHE.popitem(last=False)
    else:
        _PLAN_CACHE.move_to_end(key)
    return plan


def project_array(image: np.ndarray, geom: Geometry) -> np.ndarray:
    """Forward projection of a float64 (rows, cols) array to (views, detectors)."""
    if image.shape != (geom.image_rows, geom.image_cols):
        raise DimensionError(
            f"image {image.shape} does not match geometry "
            f"{(geom.image_rows, geom.image_cols)}"
        )
    image = np.asarray(image, dtype=np.float64)
    plan = _stencil_plan(geom)
    if plan is not None:
        return (plan @ image.ravel()).reshape(geom.n_views, geom.detectors)
    out = np.empty((geom.n_views, geom.detectors), dtype=np.float64)
    for v, theta_deg in enumerate(geom.angles_deg):
        drive_rows, coord, weight = _view_coords(geom, theta_deg)
        matrix = image if drive_rows else image.T
        out[v] = weight * _gather_sum(matrix, coord)
    return out


def backproject_array(sino: np.ndarray, geom: Geometry) -> np.ndarray:
    """Exact transpose of project_array, (views, detectors) -> (rows, cols)."""
    if sino.shape != (geom.n_views, geom.detectors):
        raise DimensionError(
            f"sinogram {sino.shape} does not match geometry "
            f"{(geom.n_views, geom.detectors)}"
        )
    sino = np.asarray(sino, dtype=np.float64)
    plan = _stencil_plan(geom)
    if plan is not None:
        return (plan.T @ sino.ravel()).reshape(geom.image_rows, geom.image_cols)
    out = np.zeros((geom.image_rows, geom.image_cols), dtype=np.float64)
    for v, theta_deg in enumerate(geom.angles_deg):
        drive_rows, coord, weight = _view_coords(geom, theta_deg)
        n_drive = coord.shape[0]
        vals = np.broadcast_to(weight * sino[v], (n_drive, geom.detectors))
        if drive_rows:
            out += _scatter_sum(geom.image_rows, geom.image_cols, coord, vals)
        else:
            out += _scatter_sum(geom.image_cols, geom.image_rows, coord, vals).T
    return out


def forward_project(image: Image, geom: Geometry) -> Sinogram:
    """Line integrals of `image` along every (angle, detector offset) ray."""
    geom.matches_image(image)
    data = project_array(image.as_f64(), geom)
    return Sinogram(geom.n_views, geom.detectors, geom.angles_deg, data)


def back_project(sino: Sinogram, geom: Geometry) -> Image:
    """Adjoint of forward_project (unfiltered smearing of the sinogram)."""
    geom.matches_sinogram(sino)
    data = backproject_array(sino.as_f64(), geom)
    return Image(geom.image_rows, geom.image_cols, data)


def _pad_length(detectors: int) -> int:
    return 2 * (1 << int(math.ceil(math.log2(detectors))))


def _ramp_filter_array(
    rows: np.ndarray, kind: FilterKind, remove_dc: bool = True
) -> np.ndarray:
    """Row-wise ramp filtering: pad, multiply the spectrum by |w|, crop.

    Rows are zero-padded to twice the next power of two to suppress circular
    wrap.  Cropping the padded result reintroduces a small DC component (the
    discarded kernel tails); with remove_dc it is subtracted so every output
    row has exactly zero mean.  Reconstruction keeps that tail mass instead
    (remove_dc=False), since spreading it over the crop window as a constant
    offset measurably biases the image.
    """
    n = rows.shape[1]
    padded = _pad_length(n)
    freqs = np.fft.rfftfreq(padded)
    response = freqs.copy()
    if kind is FilterKind.HANN:
        response *= 0.5 * (1.0 + np.cos(2.0 * np.pi * freqs))
    spectrum = np.fft.rfft(rows, n=padded, axis=1)
    filtered = np.fft.irfft(spectrum * response, n=padded, axis=1)[:, :n]
    if remove_dc:
        filtered -= filtered.mean(axis=1, keepdims=True)
    return filtered


def ramp_filter(sino: Sinogram, kind: FilterKind = FilterKind.RAM_LAK) -> Sinogram:
    """Filter each view independently with the |w| (optionally Hann) response."""
    if sino.detectors < 2:
        raise ParameterError("ramp filtering needs at least 2 detector bins")
    if not isinstance(kind, FilterKind):
        raise ParameterError(f"unknown filter kind {kind!r}")
    data = _ramp_filter_array(sino.as_f64(), kind)
    return Sinogram(sino.views, sino.detectors, sino.angles_deg, data)


def fbp_reconstruct(
    sino: Sinogram, geom: Geometry, kind: FilterKind = FilterKind.RAM_LAK
) -> Image:
    """Filtered back-projection: ramp-filter each view, smear back, rescale.

    On full-angle data this approximates the original image; restricted
    angular coverage loses the edges oriented along the missing directions.
    """
    geom.matches_sinogram(sino)
    if not isinstance(kind, FilterKind):
        raise ParameterError(f"unknown filter kind {kind!r}")
    filtered = _ramp_filter_array(sino.as_f64(), kind, remove_dc=False)
    recon = backproject_array(filtered, geom)
    recon *= math.pi / (geom.n_views * geom.detector_spacing)
    return Image(geom.image_rows, geom.image_cols, recon)


@dataclass(frozen=True)
class TomoOperator:
    """Flattened-vector view of the projection pair for iterative solvers."""

    geom: Geometry

    @property
    def shape(self):
        g = self.geom
        return (g.n_views * g.detectors, g.image_rows * g.image_cols)

    def forward(self, x: np.ndarray) -> np.ndarray:
        g = self.geom
        return project_array(
            np.asarray(x, dtype=np.float64).reshape(g.image_rows, g.image_cols), g
        ).ravel()

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        g = self.geom
        return backproject_array(
            np.asarray(y, dtype=np.float64).reshape(g.n_views, g.detectors), g
        ).ravel()
