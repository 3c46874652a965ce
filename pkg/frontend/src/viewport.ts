/**
 * Zoom/pan transform between image pixels and screen pixels.
 *
 * The transform is a pure scale + translate, so it is exactly invertible:
 * a box drawn at any zoom level lands on the same image pixels as one
 * drawn at zoom 1, up to the half-pixel quantization of mouse coordinates.
 */

import type { Box } from './types.js';

export interface Viewport {
  /** screen pixels per image pixel */
  zoom: number;
  /** image coordinates of the screen origin (top-left) */
  panX: number;
  panY: number;
}

export interface Point {
  x: number;
  y: number;
}

export const MIN_ZOOM = 0.05;
export const MAX_ZOOM = 32;

export function initialViewport(
  imageW: number,
  imageH: number,
  canvasW: number,
  canvasH: number,
): Viewport {
  const zoom = Math.min(canvasW / imageW, canvasH / imageH);
  // center the image
  const panX = (imageW - canvasW / zoom) / 2;
  const panY = (imageH - canvasH / zoom) / 2;
  return { zoom, panX, panY };
}

export function imageToScreen(vp: Viewport, pt: Point): Point {
  return { x: (pt.x - vp.panX) * vp.zoom, y: (pt.y - vp.panY) * vp.zoom };
}

export function screenToImage(vp: Viewport, pt: Point): Point {
  return { x: pt.x / vp.zoom + vp.panX, y: pt.y / vp.zoom + vp.panY };
}

/** Zoom by a factor keeping the given screen point fixed on the image. */
export function zoomAt(vp: Viewport, screenPt: Point, factor: number): Viewport {
  const zoom = Math.min(MAX_ZOOM, Math.max(MIN_ZOOM, vp.zoom * factor));
  const anchor = screenToImage(vp, screenPt);
  return {
    zoom,
    panX: anchor.x - screenPt.x / zoom,
    panY: anchor.y - screenPt.y / zoom,
  };
}

export function panBy(vp: Viewport, dxScreen: number, dyScreen: number): Viewport {
  return {
    zoom: vp.zoom,
    panX: vp.panX - dxScreen / vp.zoom,
    panY: vp.panY - dyScreen / vp.zoom,
  };
}

/** Image-space rectangle currently visible in a canvas of the given size. */
export function visibleRect(vp: Viewport, canvasW: number, canvasH: number): Box {
  return { x: vp.panX, y: vp.panY, w: canvasW / vp.zoom, h: canvasH / vp.zoom };
}

/** Normalize two drag corners (screen space) into an image-space box. */
export function boxFromDrag(vp: Viewport, a: Point, b: Point): Box {
  const p = screenToImage(vp, a);
  const q = screenToImage(vp, b);
  const x = Math.min(p.x, q.x);
  const y = Math.min(p.y, q.y);
  return { x, y, w: Math.abs(q.x - p.x), h: Math.abs(q.y - p.y) };
}

export function clampBoxToImage(box: Box, imageW: number, imageH: number): Box | null {
  const x0 = Math.max(0, box.x);
  const y0 = Math.max(0, box.y);
  const x1 = Math.min(imageW, box.x + box.w);
  const y1 = Math.min(imageH, box.y + box.h);
  if (x1 - x0 <= 0 || y1 - y0 <= 0) return null;
  return { x: x0, y: y0, w: x1 - x0, h: y1 - y0 };
}
