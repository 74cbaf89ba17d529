"""Procedural test phantoms: binary shapes voxelised at the grid centers.

Phantom JSON schema (all lengths mm):
    {"kind": "sphere",   "dims": [nx,ny,nz], "spacing": [sx,sy,sz],
     "radius": r, "value": 1.0, "center": [x,y,z]}
    {"kind": "cylinder", ..., "radius": r, "height": h, "value": 1.0}
    {"kind": "spine",    ..., "levels": n, "pitch": p, "body_radius": r1,
     "process_radius": r2, "process_offset": d, "value": 1.0}

"origin" (world position of voxel (0,0,0) center) defaults to centering the
volume on the world origin. A voxel takes ``value`` when its center lies
inside the shape, else 0; shapes of a spine stack are combined by maximum.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from stereorad.geometry import WorldPoint
from stereorad.volume import ParseError, Volume


def _grid(dims, spacing, origin):
    axes = [origin[a] + spacing[a] * np.arange(dims[a]) for a in range(3)]
    return np.meshgrid(*axes, indexing="ij")


def _centered_origin(dims, spacing):
    return tuple(-(n - 1) / 2 * s for n, s in zip(dims, spacing))


def _base(dims, spacing, origin):
    dims = tuple(int(n) for n in dims)
    spacing = tuple(float(s) for s in spacing)
    if origin is None:
        origin = _centered_origin(dims, spacing)
    data = np.zeros(dims)
    return dims, spacing, tuple(float(c) for c in origin), data


def sphere_phantom(dims=(128, 128, 128), spacing=(2.0, 2.0, 2.0), radius=50.0,
                   value=1.0, center=(0.0, 0.0, 0.0), origin=None) -> Volume:
    dims, spacing, origin, data = _base(dims, spacing, origin)
    x, y, z = _grid(dims, spacing, origin)
    inside = ((x - center[0]) ** 2 + (y - center[1]) ** 2
              + (z - center[2]) ** 2) <= radius ** 2
    data[inside] = value
    return Volume(data, spacing, WorldPoint(*origin))


def cylinder_phantom(dims=(128, 128, 128), spacing=(2.0, 2.0, 2.0), radius=40.0,
                     height=None, value=1.0, center=(0.0, 0.0, 0.0),
                     origin=None) -> Volume:
    """Axis-aligned (z) cylinder; height defaults to the full grid extent."""
    dims, spacing, origin, data = _base(dims, spacing, origin)
    x, y, z = _grid(dims, spacing, origin)
    inside = ((x - center[0]) ** 2 + (y - center[1]) ** 2) <= radius ** 2
    if height is not None:
        inside &= np.abs(z - center[2]) <= height / 2
    data[inside] = value
    return Volume(data, spacing, WorldPoint(*origin))


def spine_phantom(dims=(128, 128, 256), spacing=(2.0, 2.0, 2.0), levels=5,
                  pitch=35.0, body_radius=14.0, process_radius=7.0,
                  process_offset=28.0, value=1.0, origin=None) -> Volume:
    """Stack of two-sphere units: a body sphere plus a posterior process sphere.

    Levels are spaced ``pitch`` apart in z and centered on the grid; the
    process sphere sits ``process_offset`` behind the body along +y, giving
    distinct frontal and lateral silhouettes.
    """
    dims, spacing, origin, data = _base(dims, spacing, origin)
    x, y, z = _grid(dims, spacing, origin)
    z0 = -(levels - 1) / 2 * pitch
    for i in range(levels):
        zc = z0 + i * pitch
        body = (x ** 2 + y ** 2 + (z - zc) ** 2) <= body_radius ** 2
        process = (x ** 2 + (y - process_offset) ** 2
                   + (z - zc) ** 2) <= process_radius ** 2
        data[body | process] = value
    return Volume(data, spacing, WorldPoint(*origin))


_BUILDERS = {
    "sphere": sphere_phantom,
    "cylinder": cylinder_phantom,
    "spine": spine_phantom,
}

_COMMON_KEYS = {"kind", "dims", "spacing", "origin"}
_KIND_KEYS = {
    "sphere": {"radius", "value", "center"},
    "cylinder": {"radius", "height", "value", "center"},
    "spine": {"levels", "pitch", "body_radius", "process_radius",
              "process_offset", "value"},
}


def phantom_from_description(desc: dict) -> Volume:
    if not isinstance(desc, dict) or "kind" not in desc:
        raise ParseError("phantom description must be an object with a 'kind'")
    kind = desc["kind"]
    if kind not in _BUILDERS:
        raise ParseError(f"unknown phantom kind {kind!r} (expected one of {sorted(_BUILDERS)})")
    unknown = set(desc) - _COMMON_KEYS - _KIND_KEYS[kind]
    if unknown:
        raise ParseError(f"unknown phantom keys for kind {kind!r}: {sorted(unknown)}")
    kwargs = {k: v for k, v in desc.items() if k != "kind"}
    try:
        return _BUILDERS[kind](**kwargs)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad phantom parameters: {exc}") from exc


def phantom_from_json(path) -> Volume:
    try:
        desc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ParseError(f"cannot read phantom description {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed phantom JSON in {path}: {exc}") from exc
    return phantom_from_description(desc)
