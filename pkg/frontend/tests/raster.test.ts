import { describe, expect, it } from "vitest";

import { StrokeCanvas, brushFootprint } from "../src/raster.js";
import type { StrokePoint } from "../src/raster.js";

function inkIndices(canvas: StrokeCanvas): Set<number> {
  const out = new Set<number>();
  const pixels = canvas.pixels();
  for (let i = 0; i < pixels.length; i++) {
    if (pixels[i] === 0) out.add(i);
  }
  return out;
}

/** Expected ink for one polyline, built from the stated stamping rule. */
function expectedStroke(points: StrokePoint[], width: number,
                        size: number): Set<number> {
  const out = new Set<number>();
  const first = points[0]!;
  for (const i of brushFootprint(first.x, first.y, width, size)) out.add(i);
  for (let k = 1; k < points.length; k++) {
    const a = points[k - 1]!;
    const b = points[k]!;
    const steps = Math.max(Math.abs(b.x - a.x), Math.abs(b.y - a.y), 1);
    for (let i = 0; i <= steps; i++) {
      const t = i / steps;
      const x = Math.round(a.x + (b.x - a.x) * t);
      const y = Math.round(a.y + (b.y - a.y) * t);
      for (const idx of brushFootprint(x, y, width, size)) out.add(idx);
    }
  }
  return out;
}

describe("StrokeCanvas", () => {
  it("rejects non positive or fractional sizes", () => {
    expect(() => new StrokeCanvas(0)).toThrow(/positive integer/);
    expect(() => new StrokeCanvas(2.5)).toThrow(/positive integer/);
  });

  it("starts blank with background everywhere", () => {
    const canvas = new StrokeCanvas(8);
    expect(canvas.hasInk()).toBe(false);
    expect(canvas.strokeCount).toBe(0);
    expect(Array.from(canvas.pixels())).toEqual(new Array(64).fill(1));
  });

  it("keeps every pixel strictly binary", () => {
    const canvas = new StrokeCanvas(32);
    canvas.addStroke([{ x: 2, y: 3 }, { x: 29, y: 7 }, { x: 15, y: 28 }], 5);
    canvas.addStroke([{ x: 0, y: 0 }, { x: 31, y: 31 }], 3);
    for (const v of canvas.pixels()) {
      expect(v === 0 || v === 1).toBe(true);
    }
  });

  it("marks exactly the named pixel at width 1", () => {
    const canvas = new StrokeCanvas(16);
    canvas.addStroke([{ x: 5, y: 9 }], 1);
    expect(inkIndices(canvas)).toEqual(new Set([9 * 16 + 5]));
  });

  it("stamps a dot matching the published brush footprint", () => {
    for (const width of [1, 3, 5, 7]) {
      const canvas = new StrokeCanvas(24);
      canvas.addStroke([{ x: 11, y: 12 }], width);
      expect(inkIndices(canvas)).toEqual(brushFootprint(11, 12, width, 24));
    }
  });

  it("stamps a segment as the union of dots along the walk", () => {
    const canvas = new StrokeCanvas(48);
    const points = [{ x: 4, y: 40 }, { x: 37, y: 9 }, { x: 44, y: 30 }];
    canvas.addStroke(points, 3);
    expect(inkIndices(canvas)).toEqual(expectedStroke(points, 3, 48));
  });

  it("clips strokes at the canvas edge without error", () => {
    const canvas = new StrokeCanvas(10);
    canvas.addStroke([{ x: 0, y: 0 }, { x: 9, y: 0 }], 5);
    expect(canvas.hasInk()).toBe(true);
    expect(canvas.pixels().length).toBe(100);
  });

  it("ignores repeated extend points", () => {
    const canvas = new StrokeCanvas(16);
    canvas.beginStroke(4, 4);
    canvas.extendStroke(4, 4);
    canvas.extendStroke(4, 4);
    canvas.endStroke();
    const plain = new StrokeCanvas(16);
    plain.addStroke([{ x: 4, y: 4 }]);
    expect(canvas.pixels()).toEqual(plain.pixels());
  });

  it("undo restores the previous raster bit for bit", () => {
    const canvas = new StrokeCanvas(32);
    canvas.addStroke([{ x: 3, y: 3 }, { x: 20, y: 25 }], 3);
    const before = canvas.pixels();
    canvas.addStroke([{ x: 28, y: 2 }, { x: 2, y: 29 }], 5);
    expect(canvas.pixels()).not.toEqual(before);
    canvas.undo();
    expect(canvas.pixels()).toEqual(before);
    expect(canvas.strokeCount).toBe(1);
  });

  it("undo handles overlapping strokes correctly", () => {
    // The second stroke crosses the first; popping it must keep the
    // crossing pixels inked because the first stroke still covers them.
    const canvas = new StrokeCanvas(32);
    canvas.addStroke([{ x: 4, y: 16 }, { x: 27, y: 16 }], 3);
    const before = canvas.pixels();
    canvas.addStroke([{ x: 16, y: 4 }, { x: 16, y: 27 }], 3);
    canvas.undo();
    expect(canvas.pixels()).toEqual(before);
  });

  it("undo on an empty canvas is a no-op", () => {
    const canvas = new StrokeCanvas(8);
    canvas.undo();
    expect(canvas.hasInk()).toBe(false);
    expect(canvas.strokeCount).toBe(0);
  });

  it("undoing every stroke returns to blank", () => {
    const canvas = new StrokeCanvas(16);
    canvas.addStroke([{ x: 2, y: 2 }, { x: 12, y: 12 }]);
    canvas.addStroke([{ x: 12, y: 2 }, { x: 2, y: 12 }]);
    canvas.undo();
    canvas.undo();
    expect(canvas.hasInk()).toBe(false);
    expect(canvas.strokeCount).toBe(0);
  });

  it("clear drops strokes and ink together", () => {
    const canvas = new StrokeCanvas(16);
    canvas.addStroke([{ x: 2, y: 2 }, { x: 12, y: 12 }]);
    canvas.clear();
    expect(canvas.hasInk()).toBe(false);
    expect(canvas.strokeCount).toBe(0);
  });

  it("addStroke leaves the interactive brush width untouched", () => {
    const canvas = new StrokeCanvas(16);
    canvas.brushWidth = 3;
    canvas.addStroke([{ x: 8, y: 8 }], 7);
    expect(canvas.brushWidth).toBe(3);
  });

  it("counts only completed strokes", () => {
    const canvas = new StrokeCanvas(16);
    canvas.beginStroke(4, 4);
    canvas.extendStroke(8, 8);
    expect(canvas.strokeCount).toBe(0);
    canvas.endStroke();
    expect(canvas.strokeCount).toBe(1);
  });
});
