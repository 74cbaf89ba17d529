// Screen <-> image affine transform for a pan/zoom viewer pane.
// This is the only coordinate math the UI performs; everything 3D comes
// from the service API.

export interface Viewport {
  zoom: number;   // screen px per image px, > 0
  panX: number;   // screen position of image (0, 0)
  panY: number;
}

export interface Point {
  x: number;
  y: number;
}

export function imageToScreen(vp: Viewport, p: Point): Point {
  return { x: vp.panX + p.x * vp.zoom, y: vp.panY + p.y * vp.zoom };
}

export function screenToImage(vp: Viewport, p: Point): Point {
  return { x: (p.x - vp.panX) / vp.zoom, y: (p.y - vp.panY) / vp.zoom };
}

export function panBy(vp: Viewport, dx: number, dy: number): Viewport {
  return { zoom: vp.zoom, panX: vp.panX + dx, panY: vp.panY + dy };
}

/** Zoom by `factor` keeping the given screen point fixed. */
export function zoomAround(vp: Viewport, screen: Point, factor: number,
                           minZoom = 0.05, maxZoom = 64): Viewport {
  const zoom = Math.min(maxZoom, Math.max(minZoom, vp.zoom * factor));
  const scale = zoom / vp.zoom;
  return {
    zoom,
    panX: screen.x - (screen.x - vp.panX) * scale,
    panY: screen.y - (screen.y - vp.panY) * scale,
  };
}

/** Initial viewport: image centered and contained in the canvas. */
export function fitImage(cols: number, rows: number,
                         width: number, height: number): Viewport {
  const zoom = Math.min(width / cols, height / rows);
  return {
    zoom,
    panX: (width - cols * zoom) / 2,
    panY: (height - rows * zoom) / 2,
  };
}

/** Mirrored column for the radiographic-vs-3D display flip toggle. */
export function flipColumn(u: number, cols: number): number {
  return cols - 1 - u;
}
