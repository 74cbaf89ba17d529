"""Batch stereo-landmark reconstruction and rigid 6-DOF model fitting.

Landmarks are matched by label. Reconstruction applies the core stereo
solve per pair and reports per-point diagnostics (row mismatch, reprojection
residual); fitting uses the closed-form SVD alignment for labelled
correspondences (rotation + translation, no scale).
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from stereorad.geometry import (
    DegenerateGeometry,
    ImagePoint,
    ScannerCalibration,
    StereoPair,
    View,
    WorldPoint,
    project_frontal,
    project_lateral,
    reconstruct,
)


class InsufficientCorrespondences(ValueError):
    """Fewer than three labels shared between model and target."""


class DegenerateConfiguration(ValueError):
    """Common landmarks are collinear or coincident; rotation is not unique."""


class LandmarkFormatError(ValueError):
    """Malformed landmark CSV."""


@dataclass(frozen=True)
class LandmarkSet:
    """Ordered, uniquely-labelled 3D landmarks."""

    entries: tuple[tuple[str, WorldPoint], ...]

    def __post_init__(self):
        labels = [label for label, _ in self.entries]
        if len(set(labels)) != len(labels):
            raise ValueError("landmark labels must be unique within a set")

    @classmethod
    def from_pairs(cls, pairs) -> "LandmarkSet":
        return cls(tuple((label, p) for label, p in pairs))

    def labels(self) -> list[str]:
        return [label for label, _ in self.entries]

    def point(self, label: str) -> WorldPoint:
        for name, p in self.entries:
            if name == label:
                return p
        raise KeyError(label)

    def __len__(self) -> int:
        return len(self.entries)

    def as_array(self, labels=None) -> np.ndarray:
        if labels is None:
            return np.array([p.as_tuple() for _, p in self.entries])
        by_label = dict(self.entries)
        return np.array([by_label[label].as_tuple() for label in labels])


@dataclass(frozen=True)
class RigidTransform:
    """Proper rotation plus translation (mm)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation must be orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must be proper (det = +1)")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        r.setflags(write=False)
        t.setflags(write=False)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rotation.T + self.translation

    def apply_point(self, p: WorldPoint) -> WorldPoint:
        v = self.apply(np.array([p.as_tuple()]))[0]
        return WorldPoint(*v)

    def compose(self, first: "RigidTransform") -> "RigidTransform":
        """self after first: returns T with T(x) = self(first(x))."""
        return RigidTransform(self.rotation @ first.rotation,
                              self.rotation @ first.translation + self.translation)

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(),
                "translation": self.translation.tolist()}


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh with named landmark vertices."""

    vertices: np.ndarray                 # (n, 3) float
    faces: np.ndarray                    # (m, 3) int
    landmarks: dict = field(default_factory=dict)   # label -> vertex index
    name: str = "mesh"

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=int).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face indices out of range")
        if len(set(self.landmarks)) != len(self.landmarks):
            raise ValueError("landmark labels must be unique")
        for idx in self.landmarks.values():
            if not 0 <= idx < len(v):
                raise ValueError("landmark vertex index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def landmark_set(self) -> LandmarkSet:
        return LandmarkSet.from_pairs(
            (label, WorldPoint(*self.vertices[idx]))
            for label, idx in self.landmarks.items())


@dataclass(frozen=True)
class PointDiagnostics:
    """Per-landmark reconstruction report."""

    label: str
    ok: bool
    row_mismatch: float
    reprojection_residual_px: float
    error: str = ""


def reprojection_residual_px(p: WorldPoint, pair: StereoPair,
                             cal: ScannerCalibration) -> float:
    """Mean of the two views' Euclidean reprojection distances (px)."""
    rf = project_frontal(p, cal)
    rl = project_lateral(p, cal)
    df = math.hypot(rf.u - pair.frontal.u, rf.v - pair.frontal.v)
    dl = math.hypot(rl.u - pair.lateral.u, rl.v - pair.lateral.v)
    return (df + dl) / 2.0


def reconstruct_set(pairs, cal: ScannerCalibration) -> tuple[LandmarkSet, list[PointDiagnostics]]:
    """Reconstruct a batch of stereo pairs; failed points are reported, not fatal.

    Returns the landmark set of successful reconstructions (input order
    preserved) plus one diagnostics record per input pair.
    """
    labels = [pair.label for pair in pairs]
    if len(set(labels)) != len(labels):
        raise ValueError("stereo pair labels must be unique")
    entries: list[tuple[str, WorldPoint]] = []
    diagnostics: list[PointDiagnostics] = []
    for pair in pairs:
        try:
            p = reconstruct(pair, cal)
        except DegenerateGeometry as exc:
            diagnostics.append(PointDiagnostics(
                pair.label, False, pair.row_mismatch, math.nan, str(exc)))
            continue
        entries.append((pair.label, p))
        diagnostics.append(PointDiagnostics(
            pair.label, True, pair.row_mismatch,
            reprojection_residual_px(p, pair, cal)))
    return LandmarkSet.from_pairs(entries), diagnostics


def fit_rigid(model: LandmarkSet, target: LandmarkSet) -> tuple[RigidTransform, float]:
    """Least-squares rigid alignment of model onto target over common labels.

    Closed-form SVD solution of argmin_T sum ||T(model_i) - target_i||^2 with
    a proper rotation (reflection corrected via the sign of the smallest
    singular value). Returns the transform and the RMS residual in mm.
    """
    common = [label for label in model.labels() if label in set(target.labels())]
    if len(common) < 3:
        raise InsufficientCorrespondences(
            f"need >= 3 common labels, have {len(common)}")
    a = model.as_array(common)
    b = target.as_array(common)
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    h = (a - ca).T @ (b - cb)
    u, s, vt = np.linalg.svd(h)
    # collinear or coincident sets leave the rotation about the point axis
    # undetermined: the cross-covariance then has rank <= 1
    if s[1] < 1e-9 * s[0] or s[0] == 0.0:
        raise DegenerateConfiguration(
            "common landmarks are collinear or coincident")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = cb - rot @ ca
    transform = RigidTransform(rot, t)
    residual = transform.apply(a) - b
    rms = float(np.sqrt((residual ** 2).sum(axis=1).mean()))
    return transform, rms


def apply_transform(t: RigidTransform, mesh: Mesh) -> Mesh:
    """Map mesh vertices by R v + t; faces and landmark labels unchanged."""
    return Mesh(t.apply(mesh.vertices), mesh.faces, dict(mesh.landmarks), mesh.name)


# ---------------------------------------------------------------------------
# CSV landmark formats (header row required, units mm / px)
# ---------------------------------------------------------------------------

def read_landmarks_3d(text: str) -> LandmarkSet:
    """Parse 'label,x,y,z' CSV into a landmark set."""
    rows = _read_csv(text, ("label", "x", "y", "z"))
    return LandmarkSet.from_pairs(
        (r["label"], WorldPoint(float(r["x"]), float(r["y"]), float(r["z"])))
        for r in rows)


def write_landmarks_3d(points: LandmarkSet) -> str:
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(["label", "x", "y", "z"])
    for label, p in points.entries:
        w.writerow([label, repr(p.x), repr(p.y), repr(p.z)])
    return out.getvalue()


def read_landmarks_2d(text: str) -> list[ImagePoint | None]:
    """Parse 'label,view,u,v' CSV into labelled image points."""
    rows = _read_csv(text, ("label", "view", "u", "v"))
    points = []
    for r in rows:
        try:
            view = View(r["view"].strip().lower())
        except ValueError as exc:
            raise LandmarkFormatError(f"unknown view {r['view']!r}") from exc
        points.append((r["label"], ImagePoint(view, float(r["u"]), float(r["v"]))))
    return points


def pairs_from_2d(points) -> list[StereoPair]:
    """Group labelled image points into stereo pairs (both views required)."""
    by_label: dict[str, dict[View, ImagePoint]] = {}
    order: list[str] = []
    for label, ip in points:
        slot = by_label.setdefault(label, {})
        if ip.view in slot:
            raise LandmarkFormatError(
                f"duplicate placement for label {label!r} view {ip.view.value}")
        slot[ip.view] = ip
        if label not in order:
            order.append(label)
    pairs = []
    for label in order:
        views = by_label[label]
        if View.FRONTAL not in views or View.LATERAL not in views:
            raise LandmarkFormatError(f"label {label!r} is missing a view")
        pairs.append(StereoPair(label, views[View.FRONTAL], views[View.LATERAL]))
    return pairs


def write_landmarks_2d(points) -> str:
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(["label", "view", "u", "v"])
    for label, ip in points:
        w.writerow([label, ip.view.value, repr(ip.u), repr(ip.v)])
    return out.getvalue()


def _read_csv(text: str, columns) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise LandmarkFormatError("empty landmark CSV")
    have = [name.strip() for name in reader.fieldnames]
    missing = [c for c in columns if c not in have]
    if missing:
        raise LandmarkFormatError(
            f"landmark CSV must have a header with columns {list(columns)}; "
            f"missing {missing}")
    rows = []
    for i, row in enumerate(reader, start=2):
        if all((v or "").strip() == "" for v in row.values()):
            continue
        try:
            rows.append({c: row[c].strip() for c in columns})
        except (AttributeError, KeyError) as exc:
            raise LandmarkFormatError(f"line {i}: short row") from exc
    return rows


# ---------------------------------------------------------------------------
# Scene export: OBJ meshes plus a JSON file placing the radiographs at the
# isocenter planes (frontal in x = 0, lateral in y = 0)
# ---------------------------------------------------------------------------

def meshes_to_obj(meshes) -> str:
    lines = []
    offset = 1  # OBJ indices are 1-based and global
    for mesh in meshes:
        lines.append(f"o {mesh.name}")
        for v in mesh.vertices:
            lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
        for f in mesh.faces:
            lines.append(f"f {f[0] + offset} {f[1] + offset} {f[2] + offset}")
        offset += len(mesh.vertices)
    return "\n".join(lines) + "\n"


def image_planes(cal: ScannerCalibration, image_files: dict | None = None,
                 rows: int | None = None) -> list[dict]:
    """Isocenter-plane placements of the two radiographs with mm extents.

    The frontal image lies in the x = 0 plane, the lateral in y = 0; widths
    come from the effective image width at the isocenter, heights from the
    row count times the vertical pitch.
    """
    height = (rows if rows is not None else cal.rows) * cal.pitch_vertical
    planes = []
    for view, plane, axis in ((View.FRONTAL, "x=0", "y"), (View.LATERAL, "y=0", "x")):
        planes.append({
            "view": view.value,
            "plane": plane,
            "horizontal_axis": axis,
            "width_mm": cal.effective_width(view),
            "height_mm": height,
            "top_z": cal.z_start,
            "file": (image_files or {}).get(view.value),
        })
    return planes


def export_scene(meshes, cal: ScannerCalibration, path,
                 image_files: dict | None = None) -> None:
    """Write <path>.obj and <path>.json describing meshes and image planes.

    Image planes carry their mm extents at the isocenter: width from the
    effective image width, height from the scan's row count. ``image_files``
    may map view names to the exported radiograph files.
    """
    path = Path(path)
    obj_path = path.with_suffix(".obj")
    try:
        obj_path.write_text(meshes_to_obj(meshes))
    except OSError as exc:
        raise IOError(f"cannot write scene OBJ {obj_path}: {exc}") from exc
    scene = {
        "meshes": [{"name": m.name, "vertices": len(m.vertices),
                    "faces": len(m.faces)} for m in meshes],
        "obj_file": obj_path.name,
        "images": image_planes(cal, image_files),
    }
    json_path = path.with_suffix(".json")
    try:
        json_path.write_text(json.dumps(scene, indent=2) + "\n")
    except OSError as exc:
        raise IOError(f"cannot write scene JSON {json_path}: {exc}") from exc
