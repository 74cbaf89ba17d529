// Typed client for the annotation service HTTP API.

export type ViewName = "frontal" | "lateral";

export interface PlacedPoint {
  u: number;
  v: number;
  placed_at: string;
}

export interface Reprojection {
  u: number;
  v: number;
}

export interface Reconstruction {
  x: number;
  y: number;
  z: number;
  row_mismatch: number;
  residual_px: number;
  reprojected_frontal: Reprojection;
  reprojected_lateral: Reprojection;
}

export interface LandmarkState {
  label: string;
  frontal: PlacedPoint | null;
  lateral: PlacedPoint | null;
  reconstruction: Reconstruction | null;
}

export interface ImageInfo {
  rows: number;
  cols: number;
  file: string;
}

export interface SessionSnapshot {
  id: string;
  created_at: string;
  calibration: Record<string, number>;
  images: Record<ViewName, ImageInfo>;
  landmarks: LandmarkState[];
  audit: unknown[];
}

export interface Guidance {
  view: ViewName;
  epipolar_row: number;
}

export interface PlacementResponse {
  landmark: LandmarkState;
  guidance: Guidance;
}

export interface FitResult {
  rotation: number[][];
  translation: number[];
  rms_mm: number;
  matched_labels: string[];
}

export interface ApiError {
  code: string;
  message: string;
}

async function unwrap<T>(resp: Response): Promise<T> {
  if (resp.ok) {
    return (await resp.json()) as T;
  }
  let detail = `${resp.status}`;
  try {
    const body = (await resp.json()) as ApiError;
    detail = body.message ?? body.code ?? detail;
  } catch {
    /* non-JSON error body */
  }
  throw new Error(detail);
}

export class ApiClient {
  constructor(private base: string = "") {}

  async createSession(frontalB64: string, lateralB64: string): Promise<string> {
    const resp = await fetch(`${this.base}/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        frontal: { data_b64: frontalB64 },
        lateral: { data_b64: lateralB64 },
      }),
    });
    const body = await unwrap<{ id: string }>(resp);
    return body.id;
  }

  getState(sid: string): Promise<SessionSnapshot> {
    return fetch(`${this.base}/sessions/${sid}`).then((r) =>
      unwrap<SessionSnapshot>(r));
  }

  place(sid: string, label: string, view: ViewName, u: number, v: number):
      Promise<PlacementResponse> {
    return fetch(
      `${this.base}/sessions/${sid}/landmarks/${encodeURIComponent(label)}/${view}`,
      {
        method: "PUT",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ u, v, client_ts: new Date().toISOString() }),
      }).then((r) => unwrap<PlacementResponse>(r));
  }

  deletePlacement(sid: string, label: string, view?: ViewName):
      Promise<SessionSnapshot> {
    const tail = view === undefined ? "" : `/${view}`;
    return fetch(
      `${this.base}/sessions/${sid}/landmarks/${encodeURIComponent(label)}${tail}`,
      { method: "DELETE" }).then((r) => unwrap<SessionSnapshot>(r));
  }

  fit(sid: string, modelCsv: string): Promise<FitResult> {
    return fetch(`${this.base}/sessions/${sid}/fit`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ model_csv: modelCsv }),
    }).then((r) => unwrap<FitResult>(r));
  }

  imageUrl(sid: string, view: ViewName, variant: "full" | "preview" = "preview"): string {
    return `${this.base}/sessions/${sid}/images/${view}?variant=${variant}`;
  }

  exportUrl(sid: string, format: "landmarks2d" | "landmarks3d" | "scene"): string {
    return `${this.base}/sessions/${sid}/export?format=${format}`;
  }
}
