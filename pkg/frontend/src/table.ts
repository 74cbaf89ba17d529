// Landmark table: placements, live 3D readout, mismatch warnings, exports.

import type { ApiClient, SessionSnapshot } from "./api.js";
import { tableRows } from "./logic.js";

export interface TableCallbacks {
  onDelete(label: string): void;
  onSelect(label: string): void;
}

export function renderTable(container: HTMLElement, snapshot: SessionSnapshot,
                            activeLabel: string | null,
                            callbacks: TableCallbacks): void {
  const rows = tableRows(snapshot.landmarks);
  const table = document.createElement("table");
  table.innerHTML =
    "<thead><tr><th>label</th><th>frontal (u, v)</th><th>lateral (u, v)</th>"
    + "<th>3D (x, y, z) mm</th><th>Δrow</th><th></th></tr></thead>";
  const body = document.createElement("tbody");
  for (const row of rows) {
    const tr = document.createElement("tr");
    if (row.label === activeLabel) {
      tr.className = "active-row";
    }
    const mismatch = row.rowMismatch === null ? "-" : row.rowMismatch.toFixed(2);
    tr.innerHTML =
      `<td>${row.label}</td><td>${row.frontal}</td><td>${row.lateral}</td>`
      + `<td>${row.xyz}</td>`
      + `<td class="${row.mismatchWarning ? "warn" : ""}">${mismatch}</td>`;
    const td = document.createElement("td");
    const del = document.createElement("button");
    del.textContent = "✕";
    del.title = `delete ${row.label}`;
    del.addEventListener("click", (ev) => {
      ev.stopPropagation();
      callbacks.onDelete(row.label);
    });
    td.appendChild(del);
    tr.appendChild(td);
    tr.addEventListener("click", () => callbacks.onSelect(row.label));
    body.appendChild(tr);
  }
  table.appendChild(body);
  container.replaceChildren(table);
}

export function renderExports(container: HTMLElement, api: ApiClient,
                              sid: string): void {
  container.replaceChildren();
  for (const fmt of ["landmarks2d", "landmarks3d", "scene"] as const) {
    const a = document.createElement("a");
    a.href = api.exportUrl(sid, fmt);
    a.textContent = fmt;
    a.download = "";
    container.appendChild(a);
  }
}
