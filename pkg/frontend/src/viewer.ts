// One canvas pane: preview image with pan/zoom, landmark markers,
// reprojected markers, and epipolar guide lines.

import type { LandmarkState, ViewName } from "./api.js";
import type { GuideLine } from "./logic.js";
import {
  Viewport,
  fitImage,
  flipColumn,
  imageToScreen,
  panBy,
  screenToImage,
  zoomAround,
} from "./transform.js";

export interface PaneCallbacks {
  onPlace(view: ViewName, u: number, v: number): void;
  onHover(view: ViewName, u: number, v: number): void;
}

const MARKER_COLOR = "#3dd68c";
const REPROJECTION_COLOR = "#e4b34a";
const GUIDE_COLOR = "#4aa3e4";

export class Pane {
  readonly canvas: HTMLCanvasElement;
  private ctx: CanvasRenderingContext2D;
  private image: HTMLImageElement | null = null;
  private viewport: Viewport = { zoom: 1, panX: 0, panY: 0 };
  private cols = 0;
  private rows = 0;
  private flip = false;
  private landmarks: LandmarkState[] = [];
  private guides: GuideLine[] = [];
  private dragging: { x: number; y: number } | null = null;
  private moved = false;
  private windowLow = 0;
  private windowHigh = 255;

  constructor(readonly view: ViewName, container: HTMLElement,
              private callbacks: PaneCallbacks) {
    this.canvas = document.createElement("canvas");
    this.canvas.className = "pane-canvas";
    container.appendChild(this.canvas);
    const ctx = this.canvas.getContext("2d");
    if (!ctx) {
      throw new Error("canvas 2d context unavailable");
    }
    this.ctx = ctx;
    this.wireEvents();
  }

  loadImage(url: string, cols: number, rows: number): void {
    this.cols = cols;
    this.rows = rows;
    const img = new Image();
    img.onload = () => {
      this.image = img;
      this.resetView();
    };
    img.src = url;
  }

  resetView(): void {
    this.resizeBacking();
    this.viewport = fitImage(this.cols, this.rows,
                             this.canvas.width, this.canvas.height);
    this.draw();
  }

  setFlip(flip: boolean): void {
    this.flip = flip;
    this.draw();
  }

  setWindow(low: number, high: number): void {
    this.windowLow = low;
    this.windowHigh = Math.max(high, low + 1);
    this.draw();
  }

  update(landmarks: LandmarkState[], guides: GuideLine[]): void {
    this.landmarks = landmarks;
    this.guides = guides;
    this.draw();
  }

  /** Image coordinates of a mouse event (display flip undone). */
  toImage(ev: MouseEvent): { u: number; v: number } {
    const rect = this.canvas.getBoundingClientRect();
    const p = screenToImage(this.viewport,
                            { x: ev.clientX - rect.left, y: ev.clientY - rect.top });
    const u = this.flip ? flipColumn(p.x, this.cols) : p.x;
    return { u, v: p.y };
  }

  private markerScreen(u: number, v: number): { x: number; y: number } {
    const x = this.flip ? flipColumn(u, this.cols) : u;
    return imageToScreen(this.viewport, { x, y: v });
  }

  private resizeBacking(): void {
    const w = this.canvas.clientWidth || this.canvas.parentElement?.clientWidth || 640;
    const h = this.canvas.clientHeight || 720;
    if (this.canvas.width !== w || this.canvas.height !== h) {
      this.canvas.width = w;
      this.canvas.height = h;
    }
  }

  draw(): void {
    const { ctx, canvas } = this;
    ctx.save();
    ctx.fillStyle = "#101215";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    if (this.image) {
      const span = (this.windowHigh - this.windowLow) / 255;
      ctx.save();
      ctx.imageSmoothingEnabled = this.viewport.zoom < 1;
      // window/level on the 8-bit preview via canvas filters
      ctx.filter = `brightness(${(1 / Math.max(span, 0.004)).toFixed(3)}) `
        + `contrast(1) invert(0)`;
      ctx.translate(this.viewport.panX, this.viewport.panY);
      ctx.scale(this.viewport.zoom, this.viewport.zoom);
      if (this.flip) {
        ctx.translate(this.cols, 0);
        ctx.scale(-1, 1);
      }
      ctx.drawImage(this.image, this.flip ? 1 : 0, 0, this.cols, this.rows);
      ctx.restore();
    }
    for (const guide of this.guides) {
      const y = imageToScreen(this.viewport, { x: 0, y: guide.row }).y;
      ctx.strokeStyle = GUIDE_COLOR;
      ctx.setLineDash([6, 4]);
      ctx.beginPath();
      ctx.moveTo(0, y);
      ctx.lineTo(canvas.width, y);
      ctx.stroke();
      ctx.setLineDash([]);
      ctx.fillStyle = GUIDE_COLOR;
      ctx.font = "11px sans-serif";
      ctx.fillText(guide.label, 6, y - 4);
    }
    for (const mark of this.landmarks) {
      const placed = this.view === "frontal" ? mark.frontal : mark.lateral;
      if (placed) {
        this.drawMarker(placed.u, placed.v, mark.label, MARKER_COLOR);
      }
      if (mark.reconstruction) {
        const re = this.view === "frontal"
          ? mark.reconstruction.reprojected_frontal
          : mark.reconstruction.reprojected_lateral;
        this.drawCross(re.u, re.v, REPROJECTION_COLOR);
      }
    }
    ctx.restore();
  }

  private drawMarker(u: number, v: number, label: string, color: string): void {
    const { ctx } = this;
    const p = this.markerScreen(u, v);
    ctx.strokeStyle = color;
    ctx.beginPath();
    ctx.arc(p.x, p.y, 5, 0, Math.PI * 2);
    ctx.stroke();
    ctx.fillStyle = color;
    ctx.font = "11px sans-serif";
    ctx.fillText(label, p.x + 7, p.y - 5);
  }

  private drawCross(u: number, v: number, color: string): void {
    const { ctx } = this;
    const p = this.markerScreen(u, v);
    ctx.strokeStyle = color;
    ctx.beginPath();
    ctx.moveTo(p.x - 4, p.y);
    ctx.lineTo(p.x + 4, p.y);
    ctx.moveTo(p.x, p.y - 4);
    ctx.lineTo(p.x, p.y + 4);
    ctx.stroke();
  }

  private wireEvents(): void {
    this.canvas.addEventListener("mousedown", (ev) => {
      this.dragging = { x: ev.clientX, y: ev.clientY };
      this.moved = false;
    });
    window.addEventListener("mousemove", (ev) => {
      if (this.dragging) {
        const dx = ev.clientX - this.dragging.x;
        const dy = ev.clientY - this.dragging.y;
        if (Math.abs(dx) + Math.abs(dy) > 2) {
          this.moved = true;
          this.viewport = panBy(this.viewport, dx, dy);
          this.dragging = { x: ev.clientX, y: ev.clientY };
          this.draw();
        }
      } else if (ev.target === this.canvas) {
        const p = this.toImage(ev);
        this.callbacks.onHover(this.view, p.u, p.v);
      }
    });
    window.addEventListener("mouseup", (ev) => {
      if (this.dragging && !this.moved && ev.target === this.canvas) {
        const p = this.toImage(ev);
        if (p.u >= 0 && p.u <= this.cols - 1 && p.v >= 0 && p.v < this.rows) {
          this.callbacks.onPlace(this.view, p.u, p.v);
        }
      }
      this.dragging = null;
    });
    this.canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      const rect = this.canvas.getBoundingClientRect();
      const factor = ev.deltaY < 0 ? 1.15 : 1 / 1.15;
      this.viewport = zoomAround(
        this.viewport,
        { x: ev.clientX - rect.left, y: ev.clientY - rect.top },
        factor);
      this.draw();
    }, { passive: false });
  }
}
