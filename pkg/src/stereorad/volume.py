"""CT-like volume representation, MetaImage-style I/O, sampling, line integration.

Volumes are scalar grids in the global frame. Data is stored float64 with
shape (nx, ny, nz); voxel (i, j, k) is centered at origin + (i·sx, j·sy, k·sz).
Outside the volume the field is air (zero): trilinear interpolation fades
linearly to zero over one voxel beyond the outermost voxel centers, and any
point beyond that support is exactly zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from stereorad.geometry import Ray, WorldPoint


class ParseError(ValueError):
    """Malformed volume header or phantom description."""


class DimensionMismatch(ValueError):
    """Raw file size disagrees with the header dimensions."""


_ELEMENT_TYPES = {
    "MET_SHORT": np.dtype("<i2"),
    "MET_FLOAT": np.dtype("<f4"),
}


class TransferMode(str, Enum):
    IDENTITY = "identity"
    WINDOWED_LINEAR = "windowed-linear"
    HIGH_PASS_DENSITY = "high-pass-density"


@dataclass(frozen=True)
class TransferFunction:
    """Per-sample mapping applied inside line integrals (energy-filter analogue).

    identity: value unchanged. windowed-linear: clamp((v - low)/(high - low))
    to [0, 1]. high-pass-density: max(v - threshold, 0), which selectively
    keeps the contribution of dense material.
    """

    mode: TransferMode = TransferMode.IDENTITY
    threshold: float = 0.0
    window: float = 1.0

    def __post_init__(self):
        if self.mode is TransferMode.WINDOWED_LINEAR and self.window <= 0:
            raise ValueError("windowed-linear transfer requires window > 0")

    def apply(self, values: np.ndarray) -> np.ndarray:
        if self.mode is TransferMode.IDENTITY:
            return values
        if self.mode is TransferMode.WINDOWED_LINEAR:
            return np.clip((values - self.threshold) / self.window, 0.0, 1.0)
        return np.maximum(values - self.threshold, 0.0)


IDENTITY_TF = TransferFunction()


@dataclass(frozen=True)
class Volume:
    """Immutable scalar grid with spacing (mm/voxel) and world-frame origin."""

    data: np.ndarray            # float64, shape (nx, ny, nz)
    spacing: tuple[float, float, float]
    origin: WorldPoint          # center of voxel (0, 0, 0)

    def __post_init__(self):
        if self.data.ndim != 3 or any(n < 1 for n in self.data.shape):
            raise ValueError("volume data must be a 3D grid with dims >= 1")
        if any(s <= 0 for s in self.spacing):
            raise ValueError("spacing must be > 0 on every axis")
        if self.data.dtype != np.float64:
            object.__setattr__(self, "data", self.data.astype(np.float64))
        self.data.setflags(write=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def voxel_center(self, i: int, j: int, k: int) -> WorldPoint:
        return WorldPoint(self.origin.x + i * self.spacing[0],
                          self.origin.y + j * self.spacing[1],
                          self.origin.z + k * self.spacing[2])

    def support_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """World-frame box outside which the interpolated field is exactly zero.

        One voxel beyond the outermost voxel centers on each side (the
        zero-padded trilinear support).
        """
        o = np.array(self.origin.as_tuple())
        s = np.asarray(self.spacing, dtype=float)
        n = np.array(self.dims, dtype=float)
        return o - s, o + (n - 1.0) * s + s

    def world_extent(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical bounding box of the voxel cells (half a voxel past the centers)."""
        o = np.array(self.origin.as_tuple())
        s = np.asarray(self.spacing, dtype=float)
        n = np.array(self.dims, dtype=float)
        return o - s / 2, o + (n - 1.0) * s + s / 2

    def content_bounds(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Support box of the nonzero part of the field, or None if all air.

        One voxel beyond the outermost nonzero voxel centers (the reach of
        the interpolation kernel), never larger than ``support_bounds``.
        Cached on first use; integration restricted to this box skips only
        exact zeros.
        """
        if hasattr(self, "_content_bounds"):
            return self._content_bounds
        o = np.array(self.origin.as_tuple())
        s = np.asarray(self.spacing, dtype=float)
        lo, hi = [], []
        axes = ((1, 2), (0, 2), (0, 1))
        bounds = None
        for a in range(3):
            occupied = np.flatnonzero(self.data.any(axis=axes[a]))
            if occupied.size == 0:
                break
            lo.append(o[a] + (occupied[0] - 1) * s[a])
            hi.append(o[a] + (occupied[-1] + 1) * s[a])
        else:
            slo, shi = self.support_bounds()
            bounds = (np.maximum(np.array(lo), slo), np.minimum(np.array(hi), shi))
        object.__setattr__(self, "_content_bounds", bounds)
        return bounds

    def scaled(self, k: float) -> "Volume":
        return Volume(self.data * k, self.spacing, self.origin)


def _to_grid(vol: Volume, pts: np.ndarray) -> np.ndarray:
    """World coordinates (N, 3) -> continuous voxel coordinates (N, 3)."""
    o = np.array(vol.origin.as_tuple())
    s = np.asarray(vol.spacing, dtype=float)
    return (pts - o) / s


def trilinear_batch(vol: Volume, pts: np.ndarray) -> np.ndarray:
    """Zero-padded trilinear interpolation at world points, vectorised.

    pts has shape (..., 3); returns matching shape. Out-of-range corner
    contributions are zero, so values fade to air over one voxel beyond the
    grid and are exactly zero outside ``support_bounds``.
    """
    shape = pts.shape[:-1]
    g = _to_grid(vol, pts.reshape(-1, 3))
    nx, ny, nz = vol.dims
    i0 = np.floor(g).astype(np.int64)
    f = g - i0
    out = np.zeros(g.shape[0])
    flat = vol.data.ravel()
    for dx in (0, 1):
        wx = (1.0 - f[:, 0]) if dx == 0 else f[:, 0]
        ix = i0[:, 0] + dx
        okx = (ix >= 0) & (ix < nx)
        for dy in (0, 1):
            wy = (1.0 - f[:, 1]) if dy == 0 else f[:, 1]
            iy = i0[:, 1] + dy
            okxy = okx & (iy >= 0) & (iy < ny)
            for dz in (0, 1):
                wz = (1.0 - f[:, 2]) if dz == 0 else f[:, 2]
                iz = i0[:, 2] + dz
                ok = okxy & (iz >= 0) & (iz < nz)
                idx = np.where(ok, (ix * ny + iy) * nz + iz, 0)
                out += np.where(ok, wx * wy * wz * flat[idx], 0.0)
    return out.reshape(shape)


def sample_trilinear(vol: Volume, p: WorldPoint) -> float:
    """Trilinear interpolation at a world point; air (0) outside the volume."""
    return float(trilinear_batch(vol, np.array(p.as_tuple())[None, :])[0])


def clip_ray_to_box(origin: np.ndarray, direction: np.ndarray,
                    lo: np.ndarray, hi: np.ndarray) -> tuple[float, float] | None:
    """Slab-test a ray against an axis-aligned box; (t_near, t_far) or None."""
    t0, t1 = -math.inf, math.inf
    for a in range(3):
        d = direction[a]
        if d == 0.0:
            if origin[a] <= lo[a] or origin[a] >= hi[a]:
                return None
            continue
        ta = (lo[a] - origin[a]) / d
        tb = (hi[a] - origin[a]) / d
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
    if t1 <= t0:
        return None
    return t0, t1


def integration_bounds(vol: Volume, tf: TransferFunction) -> tuple[np.ndarray, np.ndarray] | None:
    """Box to which ray integration may be clipped without changing support.

    When the transfer function maps air to zero, integration can skip the
    all-zero margin and use the nonzero-content box; otherwise the full
    interpolation support box must be covered. None means the integrand is
    zero everywhere.
    """
    if float(tf.apply(np.zeros(1))[0]) == 0.0:
        return vol.content_bounds()
    return vol.support_bounds()


def line_integral(vol: Volume, ray: Ray, step: float,
                  tf: TransferFunction = IDENTITY_TF) -> float:
    """Integrate tf(volume) along a ray (mm·value units).

    The ray is clipped to the volume's bounding box (tightened to the
    nonzero-content box when the transfer function maps air to zero), then
    integrated with a composite midpoint rule: n = ceil(length/step) panels
    of equal width h = length/n <= step. Non-intersecting rays integrate to
    zero.
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    bounds = integration_bounds(vol, tf)
    if bounds is None:
        return 0.0
    o = np.array(ray.origin.as_tuple())
    d = np.array(ray.direction)
    lo, hi = bounds
    hit = clip_ray_to_box(o, d, lo, hi)
    if hit is None:
        return 0.0
    t0, t1 = hit
    length = t1 - t0
    n = max(1, int(math.ceil(length / step)))
    h = length / n
    ts = t0 + (np.arange(n) + 0.5) * h
    pts = o[None, :] + ts[:, None] * d[None, :]
    samples = tf.apply(trilinear_batch(vol, pts))
    return float(samples.sum() * h)


def default_step(vol: Volume) -> float:
    """Half the smallest voxel spacing: the standard sampling step."""
    return 0.5 * min(vol.spacing)


# ---------------------------------------------------------------------------
# MetaImage-style header + raw little-endian I/O
# ---------------------------------------------------------------------------

def _parse_header(text: str, path: Path) -> dict:
    header = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected 'Key = value'")
        key, _, value = line.partition("=")
        header[key.strip()] = value.strip()
    return header


def load_volume(path) -> Volume:
    """Load a volume from a MetaImage-style header (.mhd) or a phantom JSON.

    JSON files are interpreted as procedural phantom descriptions (see
    stereorad.phantoms). Headers must declare NDims = 3, DimSize,
    ElementSpacing, ElementType in {MET_SHORT, MET_FLOAT} and
    ElementDataFile; Offset defaults to a volume centered on the world
    origin. Raw data is little-endian, x fastest.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        from stereorad.phantoms import phantom_from_json
        return phantom_from_json(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read volume header {path}: {exc}") from exc
    header = _parse_header(text, path)
    for key in ("DimSize", "ElementSpacing", "ElementType", "ElementDataFile"):
        if key not in header:
            raise ParseError(f"{path}: missing header key {key}")
    if header.get("NDims", "3") != "3":
        raise ParseError(f"{path}: only NDims = 3 is supported")
    if header.get("ElementByteOrderMSB", "False").lower() == "true":
        raise ParseError(f"{path}: big-endian data is not supported")
    try:
        dims = tuple(int(t) for t in header["DimSize"].split())
        spacing = tuple(float(t) for t in header["ElementSpacing"].split())
    except ValueError as exc:
        raise ParseError(f"{path}: bad DimSize/ElementSpacing: {exc}") from exc
    if len(dims) != 3 or len(spacing) != 3:
        raise ParseError(f"{path}: DimSize and ElementSpacing must have 3 entries")
    if "Offset" in header:
        offset = tuple(float(t) for t in header["Offset"].split())
    else:
        offset = tuple(-(n - 1) / 2 * s for n, s in zip(dims, spacing))
    etype = header["ElementType"]
    if etype not in _ELEMENT_TYPES:
        raise ParseError(f"{path}: unsupported ElementType {etype}")
    raw_path = path.parent / header["ElementDataFile"]
    try:
        raw = np.fromfile(raw_path, dtype=_ELEMENT_TYPES[etype])
    except OSError as exc:
        raise ParseError(f"cannot read raw data {raw_path}: {exc}") from exc
    expected = dims[0] * dims[1] * dims[2]
    if raw.size != expected:
        raise DimensionMismatch(
            f"{raw_path}: {raw.size} scalars for dims {dims} (expected {expected})")
    # raw order is x fastest -> reshape as (z, y, x) and transpose
    data = raw.reshape(dims[2], dims[1], dims[0]).transpose(2, 1, 0)
    return Volume(data.astype(np.float64), spacing, WorldPoint(*offset))


def save_volume(vol: Volume, path, element_type: str = "MET_FLOAT") -> None:
    """Write header + raw pair next to each other (raw shares the stem)."""
    if element_type not in _ELEMENT_TYPES:
        raise ValueError(f"unsupported ElementType {element_type}")
    path = Path(path)
    raw_name = path.stem + ".raw"
    nx, ny, nz = vol.dims
    header = "\n".join([
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "ElementByteOrderMSB = False",
        f"DimSize = {nx} {ny} {nz}",
        f"ElementSpacing = {vol.spacing[0]} {vol.spacing[1]} {vol.spacing[2]}",
        f"Offset = {vol.origin.x} {vol.origin.y} {vol.origin.z}",
        f"ElementType = {element_type}",
        f"ElementDataFile = {raw_name}",
    ]) + "\n"
    path.write_text(header)
    out = vol.data.transpose(2, 1, 0).astype(_ELEMENT_TYPES[element_type])
    out.tofile(path.parent / raw_name)
