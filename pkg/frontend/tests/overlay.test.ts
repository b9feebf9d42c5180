import { describe, expect, it } from "vitest";

import {
  applyTransform,
  fitToBox,
  flipPartner,
  markers,
  pan,
  taskBox,
  zoomAt,
} from "../src/overlay.js";
import { cocoTask, mpiiTask } from "./fake_server.js";

describe("task box geometry", () => {
  it("MPII tasks show the square of side scale*200 centered on the person", () => {
    const task = mpiiTask(0);
    task.overlay.center = [100, 100];
    task.overlay.scale = 2.0;
    const box = taskBox(task.overlay);
    expect(box).toEqual({ x: -100, y: -100, w: 400, h: 400 });
  });

  it("COCO tasks show the ground-truth box", () => {
    const task = cocoTask(0);
    expect(taskBox(task.overlay)).toEqual({ x: 60, y: 50, w: 180, h: 260 });
  });
});

describe("markers", () => {
  it("COCO tasks produce 17 joint markers", () => {
    expect(markers(cocoTask(0).overlay)).toHaveLength(17);
  });

  it("flagged joints are visually distinct and unlabeled joints are marked", () => {
    const task = mpiiTask(0, [3, 7]);
    const ms = markers(task.overlay);
    expect(ms.filter((m) => m.flagged).map((m) => m.joint)).toEqual([3, 7]);
    expect(ms[6].labeled).toBe(false); // pelvis is unlabeled in the fixture
    expect(ms[0].labeled).toBe(true);
  });

  it("flip partners resolve in both directions", () => {
    const overlay = mpiiTask(0).overlay;
    expect(flipPartner(overlay, 0)).toBe(5);
    expect(flipPartner(overlay, 5)).toBe(0);
    expect(flipPartner(overlay, 6)).toBeNull(); // pelvis has no partner
  });
});

describe("view transform", () => {
  it("fitToBox centers the box in the viewport", () => {
    const t = fitToBox({ x: 0, y: 0, w: 100, h: 100 }, 800, 600);
    const [cx, cy] = applyTransform(t, 50, 50);
    expect(cx).toBeCloseTo(400);
    expect(cy).toBeCloseTo(300);
  });

  it("zoomAt keeps the anchor point fixed", () => {
    const t0 = fitToBox({ x: 0, y: 0, w: 100, h: 100 }, 800, 600);
    const anchorImage: [number, number] = [30, 70];
    const [px, py] = applyTransform(t0, ...anchorImage);
    const t1 = zoomAt(t0, 2.0, px, py);
    const [qx, qy] = applyTransform(t1, ...anchorImage);
    expect(qx).toBeCloseTo(px);
    expect(qy).toBeCloseTo(py);
    expect(t1.scale).toBeCloseTo(t0.scale * 2);
  });

  it("pan shifts by screen pixels", () => {
    const t0 = fitToBox({ x: 0, y: 0, w: 100, h: 100 }, 800, 600);
    const t1 = pan(t0, 15, -25);
    const [x0, y0] = applyTransform(t0, 10, 10);
    const [x1, y1] = applyTransform(t1, 10, 10);
    expect(x1 - x0).toBeCloseTo(15);
    expect(y1 - y0).toBeCloseTo(-25);
  });

  it("zoom is clamped", () => {
    let t = fitToBox({ x: 0, y: 0, w: 100, h: 100 }, 800, 600);
    for (let i = 0; i < 60; i++) t = zoomAt(t, 4, 400, 300);
    expect(t.scale).toBeLessThanOrEqual(64);
  });
});
