"""Synthetic radiograph rendering from a volume, slot-scan or pinhole geometry.

Slot scan: the emitter descends row by row (emitter height z_start - pitch·v);
every ray of a row lies in that row's axial plane, so there is no vertical
magnification. Pinhole: a single fixed source, classic central projection,
parameterised on the isocenter plane with the same pixel pitches so the two
geometries are directly comparable pixel-for-pixel.

Pixels hold raw line integrals (optionally transfer-filtered); display
scaling is an export concern. Rendering parallelises across rows; each row's
arithmetic is identical in serial and parallel execution, so outputs are
bit-identical regardless of worker count.
"""
from __future__ import annotations

import json
import math
import multiprocessing
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from stereorad.geometry import ScannerCalibration, View
from stereorad.images import write_pgm, write_png
from stereorad.volume import (
    IDENTITY_TF,
    TransferFunction,
    Volume,
    default_step,
    integration_bounds,
    trilinear_batch,
)


class Geometry(str, Enum):
    SLOT_SCAN = "slot-scan"
    PINHOLE = "pinhole"


class InvalidRequest(ValueError):
    """Render request violates the row-range or step constraints."""


@dataclass(frozen=True)
class ExportMapping:
    """Monotone value -> gray mapping used when writing display files."""

    lo: float
    hi: float
    gamma: float = 1.0
    invert: bool = False

    def __post_init__(self):
        if self.hi < self.lo:
            raise ValueError("export mapping must be monotone (hi >= lo)")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")


@dataclass(frozen=True)
class RadiographImage:
    """Raw rendered integrals plus the default export mapping.

    ``row_offset`` is the scan row coordinate of pixel row 0, so pixel (i, j)
    sits at image coordinate (u = j, v = row_offset + i).
    """

    view: View
    geometry: Geometry
    pixels: np.ndarray
    row_offset: int = 0
    mapping: ExportMapping | None = None

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise ValueError("pixels must be a rows x cols grid")
        self.pixels.setflags(write=False)
        if self.mapping is None:
            lo = float(self.pixels.min()) if self.pixels.size else 0.0
            hi = float(self.pixels.max()) if self.pixels.size else 1.0
            object.__setattr__(self, "mapping", ExportMapping(lo, hi))

    @property
    def rows(self) -> int:
        return self.pixels.shape[0]

    @property
    def cols(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class RenderRequest:
    """Everything that determines a render, except the volume itself.

    ``row_range`` is a half-open [start, stop) within [0, cal.rows); None
    renders the rows whose axial planes intersect the volume. ``step`` is
    the integration step in mm (default: half the smallest voxel).
    ``source_height`` applies to pinhole geometry only (default: volume
    z-center).
    """

    geometry: Geometry
    view: View
    cal: ScannerCalibration
    row_range: tuple[int, int] | None = None
    step: float | None = None
    tf: TransferFunction = IDENTITY_TF
    source_height: float | None = None

    def __post_init__(self):
        if self.step is not None and self.step <= 0:
            raise InvalidRequest("step must be > 0")
        if self.row_range is not None:
            v0, v1 = self.row_range
            if not (0 <= v0 < v1 <= self.cal.rows):
                raise InvalidRequest(
                    f"row range [{v0}, {v1}) outside [0, {self.cal.rows})")

    def resolve(self, vol: Volume) -> "RenderRequest":
        """Fill defaults that depend on the volume."""
        row_range = self.row_range
        if row_range is None:
            lo, hi = vol.world_extent()
            # rows whose plane z = z_start - pitch*v falls inside the volume
            v0 = (self.cal.z_start - hi[2]) / self.cal.pitch_vertical
            v1 = (self.cal.z_start - lo[2]) / self.cal.pitch_vertical
            v0 = max(0, int(math.floor(v0)))
            v1 = min(self.cal.rows, int(math.ceil(v1)))
            if v0 >= v1:
                raise InvalidRequest("volume lies entirely outside the scan range")
            row_range = (v0, v1)
        step = self.step if self.step is not None else default_step(vol)
        source_height = self.source_height
        if source_height is None and self.geometry is Geometry.PINHOLE:
            lo, hi = vol.world_extent()
            source_height = float((lo[2] + hi[2]) / 2)
        return replace(self, row_range=row_range, step=step,
                       source_height=source_height)

    def to_dict(self) -> dict:
        return {
            "geometry": self.geometry.value,
            "view": self.view.value,
            "calibration": self.cal.to_dict(),
            "row_range": list(self.row_range) if self.row_range else None,
            "step": self.step,
            "transfer": {"mode": self.tf.mode.value, "threshold": self.tf.threshold,
                         "window": self.tf.window},
            "source_height": self.source_height,
        }


# ---------------------------------------------------------------------------
# Vectorised ray integration
# ---------------------------------------------------------------------------

def _clip_batch(origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray,
                hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Slab-test N rays (shared origin) against a box; t1 <= t0 means miss."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo[None, :] - origin[None, :]) / dirs
        tb = (hi[None, :] - origin[None, :]) / dirs
    # axis-parallel rays: inside the slab -> (-inf, inf), outside -> miss
    zero = dirs == 0.0
    if zero.any():
        inside = (origin[None, :] > lo[None, :]) & (origin[None, :] < hi[None, :])
        inside = np.broadcast_to(inside, ta.shape)
        ta = np.where(zero, np.where(inside, -np.inf, np.inf), ta)
        tb = np.where(zero, np.where(inside, np.inf, -np.inf), tb)
    t0 = np.minimum(ta, tb).max(axis=1)
    t1 = np.maximum(ta, tb).min(axis=1)
    return t0, t1


def _integrate_rows(origin: np.ndarray, dirs: np.ndarray, sample_fn,
                    lo: np.ndarray, hi: np.ndarray, step: float,
                    tf: TransferFunction) -> np.ndarray:
    """Composite-midpoint integrals of tf(field) for N rays with one origin."""
    n_rays = dirs.shape[0]
    t0, t1 = _clip_batch(origin, dirs, lo, hi)
    length = t1 - t0
    hit = length > 0
    out = np.zeros(n_rays)
    if not hit.any():
        return out
    t0h, lh, dh = t0[hit], length[hit], dirs[hit]
    n = np.ceil(lh / step).astype(np.int64)
    np.maximum(n, 1, out=n)
    h = lh / n
    kmax = int(n.max())
    ks = np.arange(kmax)
    mask = ks[None, :] < n[:, None]
    ts = t0h[:, None] + (ks[None, :] + 0.5) * h[:, None]
    pts = origin[None, None, :] + ts[:, :, None] * dh[:, None, :]
    vals = np.zeros(mask.shape)
    vals[mask] = tf.apply(sample_fn(pts[mask]))
    out[hit] = vals.sum(axis=1) * h
    return out


def _bilinear_plane(plane: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Zero-padded bilinear interpolation on a 2D grid at (N, 2) grid coords."""
    nx, ny = plane.shape
    i0 = np.floor(g).astype(np.int64)
    f = g - i0
    flat = plane.ravel()
    out = np.zeros(g.shape[0])
    for dx in (0, 1):
        wx = (1.0 - f[:, 0]) if dx == 0 else f[:, 0]
        ix = i0[:, 0] + dx
        okx = (ix >= 0) & (ix < nx)
        for dy in (0, 1):
            wy = (1.0 - f[:, 1]) if dy == 0 else f[:, 1]
            iy = i0[:, 1] + dy
            ok = okx & (iy >= 0) & (iy < ny)
            idx = np.where(ok, ix * ny + iy, 0)
            out += np.where(ok, wx * wy * flat[idx], 0.0)
    return out


def _column_targets(view: View, cal: ScannerCalibration) -> np.ndarray:
    """Isocenter-plane coordinate of every column of a view."""
    cols = cal.cols(view) + 1
    u = np.arange(cols, dtype=np.float64)
    if view is View.FRONTAL:
        return cal.pitch_frontal * (u - cal.cols_frontal / 2)
    return cal.pitch_lateral * (cal.cols_lateral / 2 - u)


def _render_slot_row(v: int, req: RenderRequest, vol: Volume) -> np.ndarray:
    """One slot-scan row: every ray lies in the plane z = row height.

    The z interpolation is factored out once per row (the blended axial
    slice), leaving a 2D bilinear march per ray.
    """
    cal = req.cal
    z = cal.row_z(v)
    cols = cal.cols(req.view) + 1
    bounds = integration_bounds(vol, req.tf)
    if bounds is None or not (bounds[0][2] < z < bounds[1][2]):
        return np.zeros(cols)
    sz = vol.spacing[2]
    gz = (z - vol.origin.z) / sz
    k0 = int(math.floor(gz))
    fz = gz - k0
    nz = vol.dims[2]
    if k0 < -1 or k0 >= nz:
        return np.zeros(cols)
    a = vol.data[:, :, k0] if 0 <= k0 < nz else 0.0
    b = vol.data[:, :, k0 + 1] if 0 <= k0 + 1 < nz else 0.0
    plane = (1.0 - fz) * a + fz * b

    targets = _column_targets(req.view, cal)
    if req.view is View.FRONTAL:
        origin2 = np.array([-cal.f_frontal, 0.0])
        d = np.stack([np.full(cols, cal.f_frontal), targets], axis=1)
    else:
        origin2 = np.array([0.0, -cal.f_lateral])
        d = np.stack([targets, np.full(cols, cal.f_lateral)], axis=1)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o2 = np.array(vol.origin.as_tuple()[:2])
    s2 = np.asarray(vol.spacing[:2])

    def sample(pts2: np.ndarray) -> np.ndarray:
        return _bilinear_plane(plane, (pts2 - o2) / s2)

    return _integrate_rows(origin2, d, sample, bounds[0][:2], bounds[1][:2],
                           req.step, req.tf)


def _render_pinhole_row(v: int, req: RenderRequest, vol: Volume) -> np.ndarray:
    """One pinhole row: rays from the fixed source through the row's
    isocenter-plane points, marched through the full 3D grid."""
    cal = req.cal
    z = cal.row_z(v)
    cols = cal.cols(req.view) + 1
    targets = _column_targets(req.view, cal)
    if req.view is View.FRONTAL:
        source = np.array([-cal.f_frontal, 0.0, req.source_height])
        pts = np.stack([np.zeros(cols), targets, np.full(cols, z)], axis=1)
    else:
        source = np.array([0.0, -cal.f_lateral, req.source_height])
        pts = np.stack([targets, np.zeros(cols), np.full(cols, z)], axis=1)
    d = pts - source[None, :]
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    bounds = integration_bounds(vol, req.tf)
    if bounds is None:
        return np.zeros(cols)

    def sample(pts3: np.ndarray) -> np.ndarray:
        return trilinear_batch(vol, pts3)

    return _integrate_rows(source, d, sample, bounds[0], bounds[1], req.step, req.tf)


def _render_row(v: int, req: RenderRequest, vol: Volume) -> np.ndarray:
    if req.geometry is Geometry.SLOT_SCAN:
        return _render_slot_row(v, req, vol)
    return _render_pinhole_row(v, req, vol)


_WORKER: dict = {}


def _worker_init(req: RenderRequest, vol: Volume) -> None:
    _WORKER["req"] = req
    _WORKER["vol"] = vol


def _worker_rows(rows: list[int]) -> list[np.ndarray]:
    req, vol = _WORKER["req"], _WORKER["vol"]
    return [_render_row(v, req, vol) for v in rows]


def render(req: RenderRequest, vol: Volume, workers: int | None = None) -> RadiographImage:
    """Render a radiograph; ``workers`` > 1 parallelises across rows.

    Rows are computed independently and written to disjoint output slices,
    so the result equals single-threaded execution bit for bit.
    """
    req = req.resolve(vol)
    v0, v1 = req.row_range
    rows = list(range(v0, v1))
    if workers is None or workers <= 1 or len(rows) < 2:
        out = [_render_row(v, req, vol) for v in rows]
    else:
        chunk = max(1, math.ceil(len(rows) / (workers * 4)))
        batches = [rows[i:i + chunk] for i in range(0, len(rows), chunk)]
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(workers, initializer=_worker_init, initargs=(req, vol)) as pool:
            out = [row for batch in pool.map(_worker_rows, batches)
                   for row in batch]
    pixels = np.stack(out, axis=0) if out else np.zeros((0, req.cal.cols(req.view) + 1))
    return RadiographImage(req.view, req.geometry, pixels, row_offset=v0)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def export_image(img: RadiographImage, path, fmt: str = "pgm16",
                 mapping: ExportMapping | None = None) -> None:
    """Write the display-mapped image as 16-bit grayscale PGM or PNG.

    Values map by (value - lo)/(hi - lo), optional gamma, optional inversion
    (bright-bone vs. dark-bone display); orientation is preserved exactly as
    rendered.
    """
    m = mapping or img.mapping
    span = m.hi - m.lo
    if span > 0:
        norm = np.clip((img.pixels - m.lo) / span, 0.0, 1.0)
    else:
        norm = np.zeros_like(img.pixels)
    if m.gamma != 1.0:
        norm = norm ** m.gamma
    if m.invert:
        norm = 1.0 - norm
    gray = np.rint(norm * 65535.0).astype(np.uint16)
    try:
        if fmt == "pgm16":
            write_pgm(path, gray)
        elif fmt == "png16":
            write_png(path, gray)
        else:
            raise ValueError(f"unknown export format {fmt!r} (pgm16 or png16)")
    except OSError as exc:
        raise IOError(f"cannot write image {path}: {exc}") from exc


def write_sidecar(req: RenderRequest, path) -> None:
    """Provenance sidecar: the resolved render request as JSON."""
    Path(path).write_text(json.dumps(req.to_dict(), indent=2) + "\n")
