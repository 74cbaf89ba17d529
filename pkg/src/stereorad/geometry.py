"""Biplanar slot-scanner geometry: world <-> image projection and reconstruction.

Coordinate conventions (global frame, mm):
    X toward the frontal detector, Y toward the lateral detector, Z up.
Image coordinates are continuous (u = column, v = row); row 0 is the top of
the scan, columns run from 0 at the left edge. Images are true-scale on the
plane of the isocenter; both views share the same row for any world point
because the two emitter/detector pairs travel in unison.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, fields, replace
from enum import Enum
from pathlib import Path


class View(str, Enum):
    FRONTAL = "frontal"
    LATERAL = "lateral"


class CalibrationError(ValueError):
    """Calibration values violate a geometric invariant."""


class SingularProjection(ValueError):
    """Point at or behind the emitter plane; the projection denominator vanishes."""


class DegenerateGeometry(ValueError):
    """Back-projected rays are (near) parallel; the 2x2 system is singular."""


class RowMismatchWarning(UserWarning):
    """Frontal/lateral rows of a stereo pair differ by more than the gate (5 px)."""


# Relative determinant threshold below which reconstruction is refused.
SINGULAR_DET_REL = 1e-6

# Row disagreement (px) above which a stereo pair is suspect.
ROW_MISMATCH_GATE_PX = 5.0

# Representative installed-instrument profile, bundled as ``hss-default``.
# z_start and rows are per-scan quantities; defaults are 0 mm and a typical
# full-body row count.
HSS_DEFAULT = {
    "f_frontal": 987.0,
    "d_frontal": 1300.0,
    "f_lateral": 918.0,
    "d_lateral": 1300.0,
    "w_frontal": 450.0,
    "w_lateral": 450.0,
    "pitch_frontal": 0.179363,
    "pitch_lateral": 0.179363,
    "pitch_vertical": 0.179363,
    "z_start": 0.0,
    "cols_frontal": 1895,
    "cols_lateral": 1763,
    "rows": 8000,
}


@dataclass(frozen=True)
class ScannerCalibration:
    """Instrument geometry for one biplanar scan.

    Distances in mm; pitches in mm/px expressed at the isocenter plane.
    ``cols_*`` are the highest column indices (there are cols+1 columns);
    ``rows`` is the per-scan row count; ``z_start`` is the emitter height at
    row 0.
    """

    f_frontal: float
    d_frontal: float
    f_lateral: float
    d_lateral: float
    w_frontal: float
    w_lateral: float
    pitch_frontal: float
    pitch_lateral: float
    pitch_vertical: float
    z_start: float = 0.0
    cols_frontal: int = 1895
    cols_lateral: int = 1763
    rows: int = 8000

    def __post_init__(self):
        if not (0 < self.f_frontal < self.d_frontal):
            raise CalibrationError("require 0 < f_frontal < d_frontal")
        if not (0 < self.f_lateral < self.d_lateral):
            raise CalibrationError("require 0 < f_lateral < d_lateral")
        for name in ("pitch_frontal", "pitch_lateral", "pitch_vertical",
                     "w_frontal", "w_lateral"):
            if getattr(self, name) <= 0:
                raise CalibrationError(f"{name} must be > 0")
        for name in ("cols_frontal", "cols_lateral", "rows"):
            if getattr(self, name) <= 0:
                raise CalibrationError(f"{name} must be > 0")
        # The pitch is expressed at the isocenter plane, so cols x pitch must
        # agree with the detector width demagnified to that plane (within 1%).
        for view in (View.FRONTAL, View.LATERAL):
            eff = self.effective_width(view)
            demag = self.detector_width_at_isocenter(view)
            if abs(eff - demag) / demag > 0.01:
                raise CalibrationError(
                    f"{view.value} effective width {eff:.2f} mm inconsistent with "
                    f"detector width at isocenter {demag:.2f} mm")
        if (self.f_frontal > self.f_lateral and self.w_frontal == self.w_lateral
                and self.effective_width(View.FRONTAL) <= self.effective_width(View.LATERAL)):
            raise CalibrationError(
                "frontal effective width must exceed lateral for f_frontal > f_lateral "
                "with equal detector widths")

    def f(self, view: View) -> float:
        return self.f_frontal if view is View.FRONTAL else self.f_lateral

    def d(self, view: View) -> float:
        return self.d_frontal if view is View.FRONTAL else self.d_lateral

    def pitch(self, view: View) -> float:
        return self.pitch_frontal if view is View.FRONTAL else self.pitch_lateral

    def cols(self, view: View) -> int:
        return self.cols_frontal if view is View.FRONTAL else self.cols_lateral

    def effective_width(self, view: View) -> float:
        """Image width in mm at the isocenter plane: (cols+1) x pitch."""
        return (self.cols(view) + 1) * self.pitch(view)

    def detector_width_at_isocenter(self, view: View) -> float:
        """Physical detector width demagnified to the isocenter plane: w·f/d."""
        if view is View.FRONTAL:
            return self.w_frontal * self.f_frontal / self.d_frontal
        return self.w_lateral * self.f_lateral / self.d_lateral

    def row_z(self, v: float) -> float:
        """World height of the emitter (and of the image row) at row v."""
        return self.z_start - self.pitch_vertical * v

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def hss_default() -> ScannerCalibration:
    return ScannerCalibration(**HSS_DEFAULT)


def load_calibration(source) -> ScannerCalibration:
    """Build a calibration from the bundled profile name, a JSON file, or a dict.

    Calibration files are flat JSON objects keyed by the field names (lengths
    in mm); any omitted field falls back to the bundled ``hss-default`` value.
    """
    if isinstance(source, ScannerCalibration):
        return source
    if isinstance(source, dict):
        data = source
    else:
        if str(source) == "hss-default":
            return hss_default()
        path = Path(source)
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise CalibrationError(f"cannot read calibration file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise CalibrationError(f"malformed calibration JSON in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise CalibrationError("calibration JSON must be a flat object")
    known = {f.name for f in fields(ScannerCalibration)}
    unknown = set(data) - known
    if unknown:
        raise CalibrationError(f"unknown calibration fields: {sorted(unknown)}")
    merged = dict(HSS_DEFAULT)
    merged.update(data)
    return ScannerCalibration(**merged)


def with_scan_frame(cal: ScannerCalibration, z_start: float, rows: int) -> ScannerCalibration:
    """Same instrument, different per-scan vertical frame."""
    return replace(cal, z_start=z_start, rows=rows)


@dataclass(frozen=True)
class WorldPoint:
    """3D position in the global frame (mm)."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise ValueError("WorldPoint components must be finite")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class ImagePoint:
    """Sub-pixel image coordinate on a named view.

    No range clamp: points may fall outside the detector; callers decide.
    """

    view: View
    u: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError("ImagePoint coordinates must be finite")


@dataclass(frozen=True)
class StereoPair:
    """A labelled frontal/lateral correspondence.

    A row mismatch |v_f - v_l| is permitted; reconstruction averages the rows.
    """

    label: str
    frontal: ImagePoint
    lateral: ImagePoint

    def __post_init__(self):
        if self.frontal.view is not View.FRONTAL:
            raise ValueError("StereoPair.frontal must be a FRONTAL ImagePoint")
        if self.lateral.view is not View.LATERAL:
            raise ValueError("StereoPair.lateral must be a LATERAL ImagePoint")

    @property
    def row_mismatch(self) -> float:
        return abs(self.frontal.v - self.lateral.v)


@dataclass(frozen=True)
class Ray:
    """Emission line: origin at the emitter, unit direction toward the detector."""

    origin: WorldPoint
    direction: tuple[float, float, float]

    def __post_init__(self):
        n = math.sqrt(sum(c * c for c in self.direction))
        if abs(n - 1.0) > 1e-12:
            raise ValueError(f"Ray direction must be unit length (|d| = {n!r})")

    def point_at(self, t: float) -> WorldPoint:
        dx, dy, dz = self.direction
        return WorldPoint(self.origin.x + t * dx,
                          self.origin.y + t * dy,
                          self.origin.z + t * dz)


def _row(p_z: float, cal: ScannerCalibration) -> float:
    # Shared by both views: the row is the emitter height scaled by the
    # vertical pitch, independent of the in-plane position.
    return (cal.z_start - p_z) / cal.pitch_vertical


def project_frontal(p: WorldPoint, cal: ScannerCalibration) -> ImagePoint:
    """Project a world point onto the frontal image.

    Radiographic orientation: the image is viewed from behind the imaging
    screen, so increasing world y increases u. The horizontal term is grouped
    as (y/pitch)·(f/(f+x)) so that points on the isocenter plane (x = 0) map
    true-scale exactly.
    """
    if p.x <= -cal.f_frontal:
        raise SingularProjection(
            f"point x={p.x} at or behind the frontal emitter plane (-f = {-cal.f_frontal})")
    u = cal.cols_frontal / 2 + (p.y / cal.pitch_frontal) * (
        cal.f_frontal / (cal.f_frontal + p.x))
    return ImagePoint(View.FRONTAL, u, _row(p.z, cal))


def project_lateral(p: WorldPoint, cal: ScannerCalibration) -> ImagePoint:
    """Project a world point onto the lateral image (u decreases with world x)."""
    if p.y <= -cal.f_lateral:
        raise SingularProjection(
            f"point y={p.y} at or behind the lateral emitter plane (-f = {-cal.f_lateral})")
    u = cal.cols_lateral / 2 - (p.x / cal.pitch_lateral) * (
        cal.f_lateral / (cal.f_lateral + p.y))
    return ImagePoint(View.LATERAL, u, _row(p.z, cal))


def project(p: WorldPoint, view: View, cal: ScannerCalibration) -> ImagePoint:
    if view is View.FRONTAL:
        return project_frontal(p, cal)
    return project_lateral(p, cal)


def project_homogeneous_frontal(p: WorldPoint, cal: ScannerCalibration) -> tuple[float, float]:
    """Raw homogeneous pair (u_h, w_h) for the frontal view; division deferred.

    u equals cols/2 + u_h / (pitch · w_h) whenever w_h > 0.
    """
    return (p.y * cal.f_frontal, cal.f_frontal + p.x)


def pixel_to_isocenter_plane(ip: ImagePoint, cal: ScannerCalibration) -> float:
    """In-plane mm coordinate of a pixel back-projected to the isocenter plane.

    Frontal pixels land on the x = 0 plane (returns y); lateral pixels on the
    y = 0 plane (returns x, sign flipped by the radiographic orientation).
    """
    if ip.view is View.FRONTAL:
        return cal.pitch_frontal * (ip.u - cal.cols_frontal / 2)
    return cal.pitch_lateral * (cal.cols_lateral / 2 - ip.u)


def epipolar_row(ip: ImagePoint) -> float:
    """Row of the epipolar line in the other view: exactly the same row."""
    return ip.v


def backproject_ray(ip: ImagePoint, cal: ScannerCalibration) -> Ray:
    """Emission line through an image point, from the emitter toward the detector.

    The fan is confined to the axial plane, so the direction has no z
    component; the ray's height is the emitter height for that row.
    """
    z = cal.row_z(ip.v)
    if ip.view is View.FRONTAL:
        y_iso = pixel_to_isocenter_plane(ip, cal)
        origin = WorldPoint(-cal.f_frontal, 0.0, z)
        dx, dy = cal.f_frontal, y_iso
    else:
        x_iso = pixel_to_isocenter_plane(ip, cal)
        origin = WorldPoint(0.0, -cal.f_lateral, z)
        dx, dy = x_iso, cal.f_lateral
    n = math.hypot(dx, dy)
    return Ray(origin, (dx / n, dy / n, 0.0))


def reconstruct(pair: StereoPair, cal: ScannerCalibration) -> WorldPoint:
    """Recover the 3D point whose projections are the given stereo pair.

    The in-plane position solves the 2x2 system

        [-y_f  f_f] [P_x]   [f_f y_f]
        [ f_l -x_l] [P_y] = [f_l x_l]

    (the matrix form of the back-projected line equations); the height uses
    the average of the two rows, which tolerates small labeling errors.
    Raises DegenerateGeometry when the back-projected rays are near parallel
    in the axial plane.
    """
    y_f = pixel_to_isocenter_plane(pair.frontal, cal)
    x_l = pixel_to_isocenter_plane(pair.lateral, cal)
    f_f, f_l = cal.f_frontal, cal.f_lateral
    det = y_f * x_l - f_f * f_l
    if abs(det) <= SINGULAR_DET_REL * f_f * f_l:
        raise DegenerateGeometry(
            f"back-projected rays near parallel (|det| = {abs(det):.3e})")
    p_x = -f_f * x_l * (y_f + f_l) / det
    p_y = -f_l * y_f * (f_f + x_l) / det
    mismatch = pair.row_mismatch
    if mismatch > ROW_MISMATCH_GATE_PX:
        warnings.warn(
            f"stereo pair {pair.label!r}: row mismatch {mismatch:.2f} px exceeds "
            f"{ROW_MISMATCH_GATE_PX} px (likely labeling error)",
            RowMismatchWarning, stacklevel=2)
    p_z = cal.z_start - cal.pitch_vertical * ((pair.frontal.v + pair.lateral.v) / 2.0)
    return WorldPoint(p_x, p_y, p_z)


@dataclass(frozen=True)
class PinholeCamera:
    """Fixed-source pinhole for standard-DR simulation.

    Shares the slot scanner's emitter-to-isocenter distance and isocenter-plane
    pixel pitches; only the source is a single point at ``source_height``
    instead of one emitter per row.
    """

    view: View
    cal: ScannerCalibration
    source_height: float

    @property
    def source(self) -> WorldPoint:
        if self.view is View.FRONTAL:
            return WorldPoint(-self.cal.f_frontal, 0.0, self.source_height)
        return WorldPoint(0.0, -self.cal.f_lateral, self.source_height)


def project_pinhole(p: WorldPoint, camera: PinholeCamera) -> ImagePoint:
    """Central projection onto the isocenter plane, same pixel grid as the slot model.

    Unlike the slot model, the row depends on the point's depth (vertical
    magnification).
    """
    cal = camera.cal
    f = cal.f(camera.view)
    depth = p.x if camera.view is View.FRONTAL else p.y
    if depth <= -f:
        raise SingularProjection(f"point at or behind the pinhole (depth {depth} <= {-f})")
    scale = f / (f + depth)
    z_iso = camera.source_height + (p.z - camera.source_height) * scale
    v = _row(z_iso, cal)
    if camera.view is View.FRONTAL:
        u = cal.cols_frontal / 2 + (p.y * scale) / cal.pitch_frontal
    else:
        u = cal.cols_lateral / 2 - (p.x * scale) / cal.pitch_lateral
    return ImagePoint(camera.view, u, v)


def pinhole_ray(ip: ImagePoint, camera: PinholeCamera) -> Ray:
    """Emission line from the fixed source through a pixel's isocenter-plane point."""
    cal = camera.cal
    z = cal.row_z(ip.v)
    if camera.view is View.FRONTAL:
        target = WorldPoint(0.0, pixel_to_isocenter_plane(ip, cal), z)
    else:
        target = WorldPoint(pixel_to_isocenter_plane(ip, cal), 0.0, z)
    src = camera.source
    dx, dy, dz = target.x - src.x, target.y - src.y, target.z - src.z
    n = math.sqrt(dx * dx + dy * dy + dz * dz)
    return Ray(src, (dx / n, dy / n, dz / n))
