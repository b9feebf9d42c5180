// Canvas drawing of the task image with the skeleton overlay. DOM-bound;
// geometry lives in overlay.ts where it is unit-tested.

import { applyTransform, markers, taskBox, type ViewTransform } from "./overlay.js";
import type { OverlayState } from "./session.js";

const COLOR_MARKER = "#4ea1ff";
const COLOR_FLAGGED = "#ff4d4d";
const COLOR_SELECTED = "#ffd23c";
const COLOR_BOX = "#9ece6a";
const COLOR_UNLABELED = "#9aa0a6";

export function draw(
  canvas: HTMLCanvasElement,
  state: OverlayState,
  image: HTMLImageElement | null,
  view: ViewTransform,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.save();
  ctx.setTransform(view.scale, 0, 0, view.scale, view.tx, view.ty);
  if (image) ctx.drawImage(image, 0, 0);
  ctx.restore();

  const box = taskBox(state.task.overlay);
  const [bx, by] = applyTransform(view, box.x, box.y);
  ctx.strokeStyle = COLOR_BOX;
  ctx.lineWidth = 2;
  ctx.strokeRect(bx, by, box.w * view.scale, box.h * view.scale);
  if (state.task.overlay.center) {
    const [cx, cy] = applyTransform(view, ...state.task.overlay.center);
    ctx.beginPath();
    ctx.arc(cx, cy, 4, 0, 2 * Math.PI);
    ctx.fillStyle = COLOR_BOX;
    ctx.fill();
  }

  for (const m of markers(state.task.overlay)) {
    if (!m.labeled && !m.flagged) continue;
    const [x, y] = applyTransform(view, m.x, m.y);
    ctx.beginPath();
    ctx.arc(x, y, m.joint === state.selectedJoint ? 8 : 5, 0, 2 * Math.PI);
    ctx.fillStyle = m.flagged ? COLOR_FLAGGED : m.labeled ? COLOR_MARKER : COLOR_UNLABELED;
    ctx.fill();
    if (m.joint === state.selectedJoint) {
      ctx.strokeStyle = COLOR_SELECTED;
      ctx.lineWidth = 3;
      ctx.stroke();
    }
    if (state.selections.has(m.joint)) {
      ctx.font = "11px ui-sans-serif";
      ctx.fillStyle = COLOR_SELECTED;
      ctx.fillText([...state.selections.get(m.joint)!].map((c) => c[0]).join(""), x + 9, y - 9);
    }
  }
}
