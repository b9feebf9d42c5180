// Overlay geometry: box derivation, marker styling, zoom/pan transform.

import type { OverlayPayload } from "./types.js";

export interface Box {
  x: number;
  y: number;
  w: number;
  h: number;
}

const MPII_SCALE_UNIT = 200;

/**
 * The box drawn for a task: COCO tasks show the ground-truth box, MPII
 * tasks the square of side scale*200 centered on the person center.
 */
export function taskBox(overlay: OverlayPayload): Box {
  if (overlay.convention === "MPII16" && overlay.center && overlay.scale) {
    const side = overlay.scale * MPII_SCALE_UNIT;
    return {
      x: overlay.center[0] - side / 2,
      y: overlay.center[1] - side / 2,
      w: side,
      h: side,
    };
  }
  const [x, y, w, h] = overlay.bbox;
  return { x, y, w, h };
}

export interface Marker {
  joint: number;
  name: string;
  x: number;
  y: number;
  labeled: boolean;
  flagged: boolean;
}

export function markers(overlay: OverlayPayload): Marker[] {
  const flagged = new Set(overlay.flagged_joints);
  return overlay.keypoints.map(([x, y, v], joint) => ({
    joint,
    name: overlay.joint_names[joint],
    x,
    y,
    labeled: v > 0,
    flagged: flagged.has(joint),
  }));
}

export function flipPartner(overlay: OverlayPayload, joint: number): number | null {
  for (const [a, b] of overlay.flip_pairs) {
    if (a === joint) return b;
    if (b === joint) return a;
  }
  return null;
}

/** Pixel-space view transform: screen = image * scale + (tx, ty). */
export interface ViewTransform {
  scale: number;
  tx: number;
  ty: number;
}

export function fitToBox(box: Box, viewW: number, viewH: number, margin = 0.1): ViewTransform {
  const scale = Math.min(
    viewW / (box.w * (1 + 2 * margin)),
    viewH / (box.h * (1 + 2 * margin)),
  );
  const cx = box.x + box.w / 2;
  const cy = box.y + box.h / 2;
  return { scale, tx: viewW / 2 - cx * scale, ty: viewH / 2 - cy * scale };
}

export function applyTransform(t: ViewTransform, x: number, y: number): [number, number] {
  return [x * t.scale + t.tx, y * t.scale + t.ty];
}

/** Zoom by a factor keeping the screen point (px, py) fixed. */
export function zoomAt(t: ViewTransform, factor: number, px: number, py: number): ViewTransform {
  const scale = Math.min(64, Math.max(1 / 64, t.scale * factor));
  const k = scale / t.scale;
  return { scale, tx: px - (px - t.tx) * k, ty: py - (py - t.ty) * k };
}

export function pan(t: ViewTransform, dx: number, dy: number): ViewTransform {
  return { scale: t.scale, tx: t.tx + dx, ty: t.ty + dy };
}
