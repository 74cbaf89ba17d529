// Pure view-model logic, kept DOM-free so it is directly testable:
// which guide lines each pane shows, row-snap behaviour, and snapshot
// updates from placement responses. No geometry beyond copying rows the
// API provided.

import type {
  Guidance,
  LandmarkState,
  PlacementResponse,
  SessionSnapshot,
  ViewName,
} from "./api.js";

export function otherView(view: ViewName): ViewName {
  return view === "frontal" ? "lateral" : "frontal";
}

export interface UiState {
  snapshot: SessionSnapshot;
  activeLabel: string | null;
  rowSnap: boolean;
  flip: boolean;
  lastGuidance: Guidance | null;
}

export interface GuideLine {
  label: string;
  row: number;
}

/**
 * Guide lines for one pane: every landmark placed only on the other view
 * contributes a horizontal line at its epipolar row. Rows come verbatim
 * from the API (the live guidance response, or the placement row the
 * snapshot reported, which the service guarantees equal).
 */
export function guideLines(state: UiState, pane: ViewName): GuideLine[] {
  const lines: GuideLine[] = [];
  for (const mark of state.snapshot.landmarks) {
    const here = pane === "frontal" ? mark.frontal : mark.lateral;
    const there = pane === "frontal" ? mark.lateral : mark.frontal;
    if (here === null && there !== null) {
      let row = there.v;
      if (state.lastGuidance !== null && state.lastGuidance.view === pane
          && guidanceLabel(state) === mark.label) {
        row = state.lastGuidance.epipolar_row;
      }
      lines.push({ label: mark.label, row });
    }
  }
  return lines;
}

function guidanceLabel(state: UiState): string | null {
  return state.activeLabel;
}

/**
 * Row-snap assist: when enabled and the landmark already has a placement on
 * the other view, clicks on this pane snap to that epipolar row (the
 * hardware guarantees the correspondence row). Otherwise the click row is
 * kept.
 */
export function snapRow(state: UiState, label: string, view: ViewName,
                        clickedRow: number): number {
  if (!state.rowSnap) {
    return clickedRow;
  }
  const mark = state.snapshot.landmarks.find((m) => m.label === label);
  const there = mark
    ? (view === "frontal" ? mark.lateral : mark.frontal)
    : null;
  return there !== null && there !== undefined ? there.v : clickedRow;
}

/** Fold a placement response into the snapshot (replace or append). */
export function applyPlacement(state: UiState, resp: PlacementResponse): UiState {
  const landmarks = state.snapshot.landmarks.slice();
  const idx = landmarks.findIndex((m) => m.label === resp.landmark.label);
  if (idx >= 0) {
    landmarks[idx] = resp.landmark;
  } else {
    landmarks.push(resp.landmark);
  }
  return {
    ...state,
    snapshot: { ...state.snapshot, landmarks },
    lastGuidance: resp.guidance,
  };
}

export interface TableRow {
  label: string;
  frontal: string;
  lateral: string;
  xyz: string;
  rowMismatch: number | null;
  mismatchWarning: boolean;
}

const MISMATCH_WARN_PX = 5;

function fmtPlaced(p: { u: number; v: number } | null): string {
  return p === null ? "-" : `(${p.u.toFixed(1)}, ${p.v.toFixed(1)})`;
}

/** Flatten landmark state for the table; 3D values are API output verbatim. */
export function tableRows(landmarks: LandmarkState[]): TableRow[] {
  return landmarks.map((m) => ({
    label: m.label,
    frontal: fmtPlaced(m.frontal),
    lateral: fmtPlaced(m.lateral),
    xyz: m.reconstruction === null
      ? "-"
      : `(${m.reconstruction.x.toFixed(2)}, ${m.reconstruction.y.toFixed(2)}, `
        + `${m.reconstruction.z.toFixed(2)})`,
    rowMismatch: m.reconstruction === null ? null : m.reconstruction.row_mismatch,
    mismatchWarning: m.reconstruction !== null
      && m.reconstruction.row_mismatch > MISMATCH_WARN_PX,
  }));
}

/** Serialize one in-flight mutation at a time (the service serializes
 * writes per session; the client never overlaps them). */
export class MutationQueue {
  private chain: Promise<unknown> = Promise.resolve();
  private depth = 0;

  get pending(): number {
    return this.depth;
  }

  run<T>(task: () => Promise<T>): Promise<T> {
    this.depth += 1;
    const result = this.chain.then(task).finally(() => {
      this.depth -= 1;
    });
    // keep the chain alive even when a task rejects
    this.chain = result.catch(() => undefined);
    return result;
  }
}
