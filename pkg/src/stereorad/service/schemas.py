"""Pydantic request/response models for the annotation service API."""
from __future__ import annotations

from pydantic import BaseModel, Field, model_validator


class ImagePayload(BaseModel):
    """One uploaded radiograph: a server-local path or base64 file content."""

    path: str | None = None
    data_b64: str | None = None

    @model_validator(mode="after")
    def _exactly_one_source(self):
        if (self.path is None) == (self.data_b64 is None):
            raise ValueError("provide exactly one of 'path' or 'data_b64'")
        return self


class CreateSessionRequest(BaseModel):
    frontal: ImagePayload
    lateral: ImagePayload
    calibration: str | dict | None = Field(
        default=None,
        description="profile name, calibration file path, or inline fields; "
                    "defaults to the service calibration")


class CreateSessionResponse(BaseModel):
    id: str


class PlacementBody(BaseModel):
    u: float
    v: float
    client_ts: str | None = None


class PlacedPoint(BaseModel):
    u: float
    v: float
    placed_at: str


class Reprojection(BaseModel):
    u: float
    v: float


class Reconstruction(BaseModel):
    x: float
    y: float
    z: float
    row_mismatch: float
    residual_px: float
    reprojected_frontal: Reprojection
    reprojected_lateral: Reprojection


class LandmarkState(BaseModel):
    label: str
    frontal: PlacedPoint | None = None
    lateral: PlacedPoint | None = None
    reconstruction: Reconstruction | None = None


class Guidance(BaseModel):
    """Epipolar hint: highlight this row on the other view."""

    view: str
    epipolar_row: float


class PlacementResponse(BaseModel):
    landmark: LandmarkState
    guidance: Guidance


class ImageInfo(BaseModel):
    rows: int
    cols: int
    file: str


class AuditEvent(BaseModel):
    ts: str
    action: str
    label: str | None = None
    view: str | None = None
    u: float | None = None
    v: float | None = None
    client_ts: str | None = None


class SessionSnapshot(BaseModel):
    id: str
    created_at: str
    calibration: dict
    images: dict[str, ImageInfo]
    landmarks: list[LandmarkState]
    audit: list[AuditEvent]


class FitRequest(BaseModel):
    model_csv: str = Field(description="model landmark CSV (label,x,y,z)")


class FitResponse(BaseModel):
    rotation: list[list[float]]
    translation: list[float]
    rms_mm: float
    matched_labels: list[str]


class ErrorBody(BaseModel):
    code: str
    message: str
