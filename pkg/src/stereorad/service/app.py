"""FastAPI application for the landmark annotation workflow.

Resource-oriented JSON API over the session store; all geometry (epipolar
rows, reconstructions, fitting) is delegated to the core package. Errors are
returned as ``{"code", "message"}`` JSON bodies. The built browser UI, when
present, is served statically at ``/``.
"""
from __future__ import annotations

import json
import warnings
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from stereorad import __version__
from stereorad.geometry import (
    CalibrationError,
    ImagePoint,
    RowMismatchWarning,
    ScannerCalibration,
    View,
    epipolar_row,
    load_calibration,
)
from stereorad.landmarks import (
    InsufficientCorrespondences,
    LandmarkFormatError,
    LandmarkSet,
    fit_rigid,
    image_planes,
    read_landmarks_3d,
    reconstruct_set,
    write_landmarks_2d,
    write_landmarks_3d,
)
from stereorad.service.schemas import (
    CreateSessionRequest,
    CreateSessionResponse,
    FitRequest,
    FitResponse,
    Guidance,
    PlacementBody,
    PlacementResponse,
    SessionSnapshot,
)
from stereorad.service.store import (
    BadRequest,
    ServiceError,
    SessionStore,
    UnknownLandmark,
    decode_payload,
    landmark_state,
)

_MEDIA_TYPES = {".png": "image/png", ".pgm": "image/x-portable-graymap"}


def _view(name: str) -> View:
    try:
        return View(name.lower())
    except ValueError:
        raise BadRequest(f"unknown view {name!r} (frontal or lateral)") from None


def create_app(session_dir="./sessions", calibration: ScannerCalibration | None = None,
               ui_dir=None) -> FastAPI:
    store = SessionStore(session_dir, calibration)
    app = FastAPI(title="stereorad annotation service", version=__version__)
    app.state.store = store

    @app.exception_handler(ServiceError)
    async def service_error(_: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": str(exc)})

    @app.exception_handler(CalibrationError)
    async def calibration_error(_: Request, exc: CalibrationError):
        return JSONResponse(status_code=422,
                            content={"code": "bad_calibration", "message": str(exc)})

    @app.post("/sessions", response_model=CreateSessionResponse)
    def create_session(body: CreateSessionRequest):
        sid = store.create(decode_payload(body.frontal), decode_payload(body.lateral),
                           calibration=body.calibration)
        return {"id": sid}

    @app.get("/sessions/{sid}", response_model=SessionSnapshot)
    def get_state(sid: str):
        return store.snapshot(sid)

    @app.get("/sessions/{sid}/images/{view}")
    def get_image(sid: str, view: str, variant: str = "full"):
        v = _view(view)
        if variant == "preview":
            return FileResponse(store.preview_file(sid, v), media_type="image/png")
        if variant != "full":
            raise BadRequest(f"unknown image variant {variant!r} (full or preview)")
        path = store.image_file(sid, v)
        return FileResponse(path, media_type=_MEDIA_TYPES.get(path.suffix, "application/octet-stream"))

    @app.put("/sessions/{sid}/landmarks/{label}/{view}", response_model=PlacementResponse)
    def place_landmark(sid: str, label: str, view: str, body: PlacementBody):
        v = _view(view)
        doc = store.place(sid, label, v, body.u, body.v, body.client_ts)
        cal = load_calibration(doc["calibration"])
        state = landmark_state(label, doc["landmarks"][label], cal)
        other = View.LATERAL if v is View.FRONTAL else View.FRONTAL
        guidance = Guidance(
            view=other.value,
            epipolar_row=epipolar_row(ImagePoint(v, body.u, body.v)))
        return {"landmark": state, "guidance": guidance}

    @app.delete("/sessions/{sid}/landmarks/{label}/{view}", response_model=SessionSnapshot)
    def delete_placement(sid: str, label: str, view: str):
        store.delete(sid, label, _view(view))
        return store.snapshot(sid)

    @app.delete("/sessions/{sid}/landmarks/{label}", response_model=SessionSnapshot)
    def delete_landmark(sid: str, label: str):
        store.delete(sid, label, None)
        return store.snapshot(sid)

    @app.get("/sessions/{sid}/export")
    def export_session(sid: str, format: str):
        doc = store.document(sid)
        cal = load_calibration(doc["calibration"])
        if format == "landmarks2d":
            points = []
            for label, slot in doc["landmarks"].items():
                for view in View:
                    placed = slot[view.value]
                    if placed:
                        points.append((label, ImagePoint(view, placed["u"], placed["v"])))
            return Response(write_landmarks_2d(points), media_type="text/csv",
                            headers={"Content-Disposition":
                                     f'attachment; filename="{sid}-landmarks2d.csv"'})
        if format == "landmarks3d":
            return Response(write_landmarks_3d(_reconstructed_set(store, sid)),
                            media_type="text/csv",
                            headers={"Content-Disposition":
                                     f'attachment; filename="{sid}-landmarks3d.csv"'})
        if format == "scene":
            rows = doc["images"]["frontal"]["rows"]
            scene = {
                "session": sid,
                "images": image_planes(cal, {v.value: doc["images"][v.value]["file"]
                                             for v in View}, rows=rows),
                "landmarks": [landmark_state(label, slot, cal)
                              for label, slot in doc["landmarks"].items()],
            }
            return Response(json.dumps(scene, indent=2), media_type="application/json",
                            headers={"Content-Disposition":
                                     f'attachment; filename="{sid}-scene.json"'})
        raise BadRequest(f"unknown export format {format!r} "
                         "(landmarks2d, landmarks3d, or scene)")

    @app.post("/sessions/{sid}/fit", response_model=FitResponse)
    def fit_model(sid: str, body: FitRequest):
        try:
            model = read_landmarks_3d(body.model_csv)
        except LandmarkFormatError as exc:
            raise BadRequest(str(exc)) from exc
        target = _reconstructed_set(store, sid)
        try:
            transform, rms = fit_rigid(model, target)
        except InsufficientCorrespondences as exc:
            raise BadRequest(str(exc)) from exc
        matched = [label for label in model.labels() if label in set(target.labels())]
        return {"rotation": transform.rotation.tolist(),
                "translation": transform.translation.tolist(),
                "rms_mm": rms,
                "matched_labels": matched}

    if ui_dir is None:
        ui_dir = _default_ui_dir()
    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app


def _default_ui_dir() -> Path | None:
    """Built UI bundle: ./frontend/dist, or the checkout the package runs from."""
    candidates = [Path("frontend/dist"),
                  Path(__file__).resolve().parents[3] / "frontend" / "dist"]
    for cand in candidates:
        if (cand / "index.html").is_file():
            return cand
    return None


def _reconstructed_set(store: SessionStore, sid: str) -> LandmarkSet:
    """3D landmarks of all completed pairs, via the core reconstruction."""
    cal = store.calibration(sid)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RowMismatchWarning)
        points, _ = reconstruct_set(store.stereo_pairs(sid), cal)
    return points
