"""File-backed session store for the annotation service.

One directory per session holding the immutable image files plus a single
session.json document; every mutation rewrites the document atomically
(write to a temp file, then rename). Mutations within a session are
serialized by a per-session lock; sessions reload lazily from disk, so the
service can restart without losing state.
"""
from __future__ import annotations

import base64
import binascii
import json
import os
import tempfile
import threading
import uuid
import warnings
from datetime import datetime, timezone
from pathlib import Path

from stereorad.geometry import (
    ImagePoint,
    RowMismatchWarning,
    ScannerCalibration,
    StereoPair,
    View,
    hss_default,
    load_calibration,
    project_frontal,
    project_lateral,
    reconstruct,
)
from stereorad.images import ImageIoError, decode_image, preview_8bit, sniff_extension, write_png
from stereorad.landmarks import reprojection_residual_px


class ServiceError(Exception):
    """Base for API-visible errors: carries a stable code and HTTP status."""

    code = "service_error"
    status = 400


class UnknownSession(ServiceError):
    code = "unknown_session"
    status = 404


class UnknownLandmark(ServiceError):
    code = "unknown_landmark"
    status = 404


class OutOfRange(ServiceError):
    code = "out_of_range"
    status = 422


class ImageMismatch(ServiceError):
    code = "image_mismatch"
    status = 422


class UnreadableImage(ServiceError):
    code = "unreadable_image"
    status = 422


class BadRequest(ServiceError):
    code = "bad_request"
    status = 422


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class SessionStore:
    def __init__(self, root, default_calibration: ScannerCalibration | None = None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.default_calibration = default_calibration or hss_default()
        self._docs: dict[str, dict] = {}
        self._locks: dict[str, threading.RLock] = {}
        self._registry_lock = threading.Lock()

    # -- plumbing ----------------------------------------------------------

    def _dir(self, sid: str) -> Path:
        return self.root / sid

    def _lock(self, sid: str) -> threading.RLock:
        with self._registry_lock:
            return self._locks.setdefault(sid, threading.RLock())

    def _save(self, doc: dict) -> None:
        sdir = self._dir(doc["id"])
        fd, tmp = tempfile.mkstemp(dir=sdir, prefix=".session-", suffix=".json")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(json.dumps(doc, indent=2))
            os.replace(tmp, sdir / "session.json")
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def _doc(self, sid: str) -> dict:
        doc = self._docs.get(sid)
        if doc is None:
            path = self._dir(sid) / "session.json"
            if not path.is_file():
                raise UnknownSession(f"no session {sid!r}")
            doc = json.loads(path.read_text())
            self._docs[sid] = doc
        return doc

    # -- operations ---------------------------------------------------------

    def create(self, frontal: bytes | str, lateral: bytes | str,
               calibration=None) -> str:
        """Create and persist a session from two images (bytes or file path).

        Rejects undecodable images and row-count mismatches between views.
        """
        blobs = {}
        for view, source in ((View.FRONTAL, frontal), (View.LATERAL, lateral)):
            if isinstance(source, (str, Path)):
                try:
                    blob = Path(source).read_bytes()
                except OSError as exc:
                    raise UnreadableImage(f"{view.value}: {exc}") from exc
            else:
                blob = source
            try:
                ext = sniff_extension(blob)
                arr = decode_image(blob)
            except ImageIoError as exc:
                raise UnreadableImage(f"{view.value}: {exc}") from exc
            blobs[view] = (blob, ext, arr)
        rows_f = blobs[View.FRONTAL][2].shape[0]
        rows_l = blobs[View.LATERAL][2].shape[0]
        if rows_f != rows_l:
            raise ImageMismatch(
                f"row counts differ: frontal {rows_f}, lateral {rows_l} "
                "(the views of one scan share rows)")
        if calibration is None:
            cal = self.default_calibration
        else:
            cal = load_calibration(calibration)

        sid = uuid.uuid4().hex
        sdir = self._dir(sid)
        sdir.mkdir(parents=True)
        images = {}
        for view, (blob, ext, arr) in blobs.items():
            name = f"{view.value}{ext}"
            (sdir / name).write_bytes(blob)
            images[view.value] = {"file": name, "rows": int(arr.shape[0]),
                                  "cols": int(arr.shape[1])}
        doc = {
            "id": sid,
            "created_at": _now(),
            "calibration": cal.to_dict(),
            "images": images,
            "landmarks": {},
            "audit": [{"ts": _now(), "action": "create", "label": None,
                       "view": None, "u": None, "v": None, "client_ts": None}],
        }
        with self._lock(sid):
            self._docs[sid] = doc
            self._save(doc)
        return sid

    def document(self, sid: str) -> dict:
        """Raw persisted session document (read-only use)."""
        return self._doc(sid)

    def calibration(self, sid: str) -> ScannerCalibration:
        return load_calibration(self._doc(sid)["calibration"])

    def place(self, sid: str, label: str, view: View, u: float, v: float,
              client_ts: str | None = None) -> dict:
        """Store (or replace) one placement; returns the session document."""
        with self._lock(sid):
            doc = self._doc(sid)
            info = doc["images"][view.value]
            if not (0 <= u <= info["cols"] - 1) or not (0 <= v < info["rows"]):
                raise OutOfRange(
                    f"({u}, {v}) outside [0, {info['cols'] - 1}] x [0, {info['rows']})")
            slot = doc["landmarks"].setdefault(label, {"frontal": None, "lateral": None})
            # idempotent replacement: latest placement wins, both events logged
            slot[view.value] = {"u": float(u), "v": float(v), "placed_at": _now()}
            doc["audit"].append({"ts": _now(), "action": "place", "label": label,
                                 "view": view.value, "u": float(u), "v": float(v),
                                 "client_ts": client_ts})
            self._save(doc)
            return doc

    def delete(self, sid: str, label: str, view: View | None = None) -> dict:
        """Remove one view's placement, or the whole landmark when view is None."""
        with self._lock(sid):
            doc = self._doc(sid)
            slot = doc["landmarks"].get(label)
            if slot is None:
                raise UnknownLandmark(f"no landmark {label!r}")
            if view is None:
                del doc["landmarks"][label]
            else:
                if slot.get(view.value) is None:
                    raise UnknownLandmark(f"{label!r} has no {view.value} placement")
                slot[view.value] = None
                if slot["frontal"] is None and slot["lateral"] is None:
                    del doc["landmarks"][label]
            doc["audit"].append({"ts": _now(), "action": "delete", "label": label,
                                 "view": view.value if view else None,
                                 "u": None, "v": None, "client_ts": None})
            self._save(doc)
            return doc

    def snapshot(self, sid: str) -> dict:
        """Consistent full-state view with reconstructions computed on the fly."""
        with self._lock(sid):
            doc = self._doc(sid)
            return build_snapshot(doc)

    def image_file(self, sid: str, view: View) -> Path:
        doc = self._doc(sid)
        return self._dir(sid) / doc["images"][view.value]["file"]

    def preview_file(self, sid: str, view: View) -> Path:
        """8-bit downscaled preview PNG, rendered on first request."""
        with self._lock(sid):
            doc = self._doc(sid)
            out = self._dir(sid) / f"preview_{view.value}.png"
            if not out.exists():
                arr = decode_image(self.image_file(sid, view).read_bytes())
                write_png(out, preview_8bit(arr))
            return out

    def stereo_pairs(self, sid: str) -> list[StereoPair]:
        """Completed pairs, in landmark insertion order."""
        doc = self._doc(sid)
        pairs = []
        for label, slot in doc["landmarks"].items():
            if slot["frontal"] and slot["lateral"]:
                pairs.append(StereoPair(
                    label,
                    ImagePoint(View.FRONTAL, slot["frontal"]["u"], slot["frontal"]["v"]),
                    ImagePoint(View.LATERAL, slot["lateral"]["u"], slot["lateral"]["v"])))
        return pairs


def decode_payload(payload) -> bytes | str:
    """ImagePayload -> raw bytes (base64) or a server-local path string."""
    if payload.path is not None:
        return payload.path
    try:
        return base64.b64decode(payload.data_b64, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise UnreadableImage(f"bad base64 image payload: {exc}") from exc


def landmark_state(label: str, slot: dict, cal: ScannerCalibration) -> dict:
    """One landmark's API state; the reconstruction (when both views are
    placed) is computed by the core geometry, never re-derived here."""
    state: dict = {"label": label, "frontal": slot["frontal"],
                   "lateral": slot["lateral"], "reconstruction": None}
    if slot["frontal"] and slot["lateral"]:
        pair = StereoPair(
            label,
            ImagePoint(View.FRONTAL, slot["frontal"]["u"], slot["frontal"]["v"]),
            ImagePoint(View.LATERAL, slot["lateral"]["u"], slot["lateral"]["v"]))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RowMismatchWarning)
            p = reconstruct(pair, cal)
        rf = project_frontal(p, cal)
        rl = project_lateral(p, cal)
        state["reconstruction"] = {
            "x": p.x, "y": p.y, "z": p.z,
            "row_mismatch": pair.row_mismatch,
            "residual_px": reprojection_residual_px(p, pair, cal),
            "reprojected_frontal": {"u": rf.u, "v": rf.v},
            "reprojected_lateral": {"u": rl.u, "v": rl.v},
        }
    return state


def build_snapshot(doc: dict) -> dict:
    cal = load_calibration(doc["calibration"])
    return {
        "id": doc["id"],
        "created_at": doc["created_at"],
        "calibration": doc["calibration"],
        "images": doc["images"],
        "landmarks": [landmark_state(label, slot, cal)
                      for label, slot in doc["landmarks"].items()],
        "audit": doc["audit"],
    }
