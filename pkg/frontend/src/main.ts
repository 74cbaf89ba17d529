// Application wiring: session lifecycle, dual panes, palette, toggles.

import { ApiClient, SessionSnapshot, ViewName } from "./api.js";
import {
  MutationQueue,
  UiState,
  applyPlacement,
  guideLines,
  snapRow,
} from "./logic.js";
import { renderExports, renderTable } from "./table.js";
import { Pane } from "./viewer.js";

const DEFAULT_LABELS = ["sup-ant", "sup-post", "inf-ant", "inf-post",
                        "ped-left", "ped-right"];

const api = new ApiClient("");
const queue = new MutationQueue();

let state: UiState | null = null;
let panes: Record<ViewName, Pane> | null = null;

function $(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) {
    throw new Error(`missing element #${id}`);
  }
  return el;
}

function banner(message: string, isError = true): void {
  const el = $("banner");
  el.textContent = message;
  el.className = isError ? "banner error" : "banner";
  if (message) {
    setTimeout(() => {
      if (el.textContent === message) {
        el.textContent = "";
        el.className = "banner";
      }
    }, 6000);
  }
}

function redraw(): void {
  if (!state || !panes) {
    return;
  }
  for (const view of ["frontal", "lateral"] as const) {
    panes[view].update(state.snapshot.landmarks, guideLines(state, view));
  }
  renderTable($("table-holder"), state.snapshot, state.activeLabel, {
    onDelete: (label) => {
      if (!state) return;
      const sid = state.snapshot.id;
      queue.run(() => api.deletePlacement(sid, label))
        .then((snap) => {
          if (state) {
            state = { ...state, snapshot: snap };
            redraw();
          }
        })
        .catch((err) => banner(`delete failed: ${err.message}`));
    },
    onSelect: (label) => {
      if (state) {
        state = { ...state, activeLabel: label };
        renderPalette();
        redraw();
      }
    },
  });
  $("hover-readout").textContent = "";
}

function renderPalette(): void {
  const holder = $("palette");
  holder.replaceChildren();
  const labels = new Set<string>(DEFAULT_LABELS);
  state?.snapshot.landmarks.forEach((m) => labels.add(m.label));
  for (const label of labels) {
    const chip = document.createElement("button");
    chip.textContent = label;
    chip.className = state?.activeLabel === label ? "chip active" : "chip";
    chip.addEventListener("click", () => {
      if (state) {
        state = { ...state, activeLabel: label };
        renderPalette();
        redraw();
      }
    });
    holder.appendChild(chip);
  }
}

function onPlace(view: ViewName, u: number, v: number): void {
  if (!state) {
    return;
  }
  const label = state.activeLabel
    ?? (document.getElementById("custom-label") as HTMLInputElement).value.trim();
  if (!label) {
    banner("pick a landmark label first");
    return;
  }
  const row = snapRow(state, label, view, v);
  const sid = state.snapshot.id;
  queue.run(() => api.place(sid, label, view, u, row))
    .then((resp) => {
      if (state) {
        state = applyPlacement(state, resp);
        redraw();
      }
    })
    .catch((err) => banner(`placement rejected: ${err.message}`));
}

function onHover(view: ViewName, u: number, v: number): void {
  $("hover-readout").textContent =
    `${view}: u=${u.toFixed(1)} v=${v.toFixed(1)}`;
}

async function openSession(sid: string): Promise<void> {
  const snap = await api.getState(sid);
  startSession(snap);
}

function startSession(snap: SessionSnapshot): void {
  state = {
    snapshot: snap,
    activeLabel: DEFAULT_LABELS[0],
    rowSnap: (document.getElementById("row-snap") as HTMLInputElement).checked,
    flip: false,
    lastGuidance: null,
  };
  localStorage.setItem("stereorad-session", snap.id);
  $("session-id").textContent = snap.id;
  $("workspace").classList.remove("hidden");
  if (!panes) {
    panes = {
      frontal: new Pane("frontal", $("pane-frontal"), { onPlace, onHover }),
      lateral: new Pane("lateral", $("pane-lateral"), { onPlace, onHover }),
    };
  }
  for (const view of ["frontal", "lateral"] as const) {
    const info = snap.images[view];
    panes[view].loadImage(api.imageUrl(snap.id, view), info.cols, info.rows);
  }
  renderExports($("exports"), api, snap.id);
  renderPalette();
  redraw();
}

function fileToB64(file: File): Promise<string> {
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onload = () => {
      const url = reader.result as string;
      resolve(url.slice(url.indexOf(",") + 1));
    };
    reader.onerror = () => reject(reader.error);
    reader.readAsDataURL(file);
  });
}

function wireControls(): void {
  $("create-form").addEventListener("submit", async (ev) => {
    ev.preventDefault();
    const frontal = (document.getElementById("frontal-file") as HTMLInputElement).files?.[0];
    const lateral = (document.getElementById("lateral-file") as HTMLInputElement).files?.[0];
    if (!frontal || !lateral) {
      banner("choose both images");
      return;
    }
    try {
      const sid = await api.createSession(await fileToB64(frontal),
                                          await fileToB64(lateral));
      await openSession(sid);
      banner(`session ${sid} created`, false);
    } catch (err) {
      banner(`create failed: ${(err as Error).message}`);
    }
  });

  $("open-form").addEventListener("submit", async (ev) => {
    ev.preventDefault();
    const sid = (document.getElementById("open-id") as HTMLInputElement).value.trim();
    try {
      await openSession(sid);
    } catch (err) {
      banner(`open failed: ${(err as Error).message}`);
    }
  });

  $("row-snap").addEventListener("change", (ev) => {
    if (state) {
      state = { ...state, rowSnap: (ev.target as HTMLInputElement).checked };
    }
  });

  $("flip").addEventListener("change", (ev) => {
    const flip = (ev.target as HTMLInputElement).checked;
    if (state && panes) {
      state = { ...state, flip };
      panes.frontal.setFlip(flip);
      panes.lateral.setFlip(flip);
    }
  });

  const wl = document.getElementById("window-high") as HTMLInputElement;
  wl.addEventListener("input", () => {
    if (panes) {
      panes.frontal.setWindow(0, Number(wl.value));
      panes.lateral.setWindow(0, Number(wl.value));
    }
  });

  $("add-label").addEventListener("click", () => {
    const input = document.getElementById("custom-label") as HTMLInputElement;
    const label = input.value.trim();
    if (label && state) {
      state = { ...state, activeLabel: label };
      DEFAULT_LABELS.push(label);
      renderPalette();
    }
  });

  $("fit-form").addEventListener("submit", async (ev) => {
    ev.preventDefault();
    const file = (document.getElementById("model-file") as HTMLInputElement).files?.[0];
    if (!file || !state) {
      banner("choose a model CSV");
      return;
    }
    try {
      const result = await api.fit(state.snapshot.id, await file.text());
      $("fit-result").textContent =
        `RMS ${result.rms_mm.toFixed(3)} mm over ${result.matched_labels.length} labels; `
        + `t = (${result.translation.map((t) => t.toFixed(2)).join(", ")}) mm`;
    } catch (err) {
      banner(`fit failed: ${(err as Error).message}`);
    }
  });

  const last = localStorage.getItem("stereorad-session");
  if (last) {
    (document.getElementById("open-id") as HTMLInputElement).value = last;
  }
}

wireControls();
