import numpy as np
import pytest

from stereorad.geometry import (
    ImagePoint,
    ScannerCalibration,
    View,
    WorldPoint,
    backproject_ray,
    hss_default,
)


@pytest.fixture(scope="session")
def hss() -> ScannerCalibration:
    return hss_default()


# ---------------------------------------------------------------------------
# Independent oracles. These deliberately avoid the closed-form projection /
# reconstruction code paths: projection is done by intersecting an explicit
# 3D emission line with the isocenter plane, reconstruction by the
# closest-point-of-approach of the two back-projected rays.
# ---------------------------------------------------------------------------

def oracle_project(p: WorldPoint, view: View, cal: ScannerCalibration) -> ImagePoint:
    """Project by constructing the emission line and intersecting x=0 / y=0."""
    if view is View.FRONTAL:
        emitter = np.array([-cal.f_frontal, 0.0, p.z])
        d = np.array(p.as_tuple()) - emitter
        t = -emitter[0] / d[0]
        y_iso = emitter[1] + t * d[1]
        u = cal.cols_frontal / 2 + y_iso / cal.pitch_frontal
    else:
        emitter = np.array([0.0, -cal.f_lateral, p.z])
        d = np.array(p.as_tuple()) - emitter
        t = -emitter[1] / d[1]
        x_iso = emitter[0] + t * d[0]
        u = cal.cols_lateral / 2 - x_iso / cal.pitch_lateral
    v = (cal.z_start - p.z) / cal.pitch_vertical
    return ImagePoint(view, u, v)


def silhouette_extent_px(pixels: np.ndarray, axis: int, level: float) -> float:
    """Sub-pixel silhouette extent along rows (axis=0) or columns (axis=1).

    The profile is the per-row/column maximum; the extent is the distance
    between the two linear-interpolated crossings of ``level``. For a
    voxelised binary object rendered with trilinear interpolation, the
    strict >0 support overshoots the true silhouette by one interpolation
    kernel (one voxel per side past the quantised surface); crossing the
    profile at half the rim-plateau value localises the surface itself, so
    measured extents are comparable with analytic silhouette sizes.
    """
    profile = pixels.max(axis=1 - axis)
    idx = np.flatnonzero(profile > level)
    first, last = int(idx[0]), int(idx[-1])
    if first > 0:
        p0, p1 = profile[first - 1], profile[first]
        c0 = first - 1 + (level - p0) / (p1 - p0)
    else:
        c0 = float(first)
    if last < profile.size - 1:
        q0, q1 = profile[last], profile[last + 1]
        c1 = last + (q0 - level) / (q0 - q1)
    else:
        c1 = float(last)
    return float(c1 - c0)


def sphere_rim_level(radius: float, voxel: float) -> float:
    """Half the rim-plateau of a voxelised binary sphere's silhouette profile.

    The outermost occupied voxel layer sits about half a voxel inside the
    true surface; rays through it see a chord of 2*sqrt(r*s - s^2/4). The
    silhouette edge crosses half that plateau at the surface.
    """
    return float(np.sqrt(radius * voxel - voxel * voxel / 4))


def support_extent_px(pixels: np.ndarray, axis: int) -> int:
    """Strict >0 support extent in whole pixels."""
    profile = pixels.max(axis=1 - axis)
    idx = np.flatnonzero(profile > 0)
    return int(idx[-1] - idx[0] + 1) if idx.size else 0


def oracle_two_ray_midpoint(pair, cal) -> np.ndarray:
    """Midpoint of the closest-approach segment of the two back-projected rays."""
    rf = backproject_ray(pair.frontal, cal)
    rl = backproject_ray(pair.lateral, cal)
    o1 = np.array(rf.origin.as_tuple())
    d1 = np.array(rf.direction)
    o2 = np.array(rl.origin.as_tuple())
    d2 = np.array(rl.direction)
    # Solve for the parameters minimising |(o1 + t1 d1) - (o2 + t2 d2)|.
    r = o1 - o2
    a, b, c = d1 @ d1, d1 @ d2, d2 @ d2
    d, e = d1 @ r, d2 @ r
    denom = a * c - b * b
    t1 = (b * e - c * d) / denom
    t2 = (a * e - b * d) / denom
    return ((o1 + t1 * d1) + (o2 + t2 * d2)) / 2.0
