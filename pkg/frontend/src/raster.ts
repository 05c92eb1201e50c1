/**
 * Stroke canvas model: a binary raster at the service's input resolution.
 *
 * Pixel convention matches the inference service: 0 = stroke ink,
 * 1 = background. The model is deliberately independent of the DOM so the
 * exact pixels that will be submitted can be unit tested; the on-screen
 * canvas is just a scaled view of this buffer.
 *
 * A stroke is a polyline stamped with a round brush: a pixel is covered
 * when its center lies within (width - 1) / 2 of a stamp center, so
 * width 1 marks exactly the named pixel. Undo removes whole strokes and
 * replays the rest, which keeps the buffer bit-exact with the stroke list.
 */

export interface StrokePoint {
  x: number;
  y: number;
}

export interface Stroke {
  width: number;
  points: StrokePoint[];
}

export class StrokeCanvas {
  readonly size: number;
  brushWidth = 3;
  private buffer: Uint8Array;
  private strokes: Stroke[] = [];
  private current: Stroke | null = null;

  constructor(size: number) {
    if (!Number.isInteger(size) || size < 1) {
      throw new Error(`canvas size must be a positive integer, got ${size}`);
    }
    this.size = size;
    this.buffer = new Uint8Array(size * size).fill(1);
  }

  get strokeCount(): number {
    return this.strokes.length;
  }

  hasInk(): boolean {
    return this.buffer.includes(0);
  }

  /** Snapshot of the raster, strictly 0 (ink) / 1 (background). */
  pixels(): Uint8Array {
    return this.buffer.slice();
  }

  beginStroke(x: number, y: number): void {
    this.current = { width: this.brushWidth, points: [{ x, y }] };
    this.stampDot(x, y, this.brushWidth);
  }

  extendStroke(x: number, y: number): void {
    if (!this.current) return;
    const prev = this.current.points[this.current.points.length - 1];
    if (prev && prev.x === x && prev.y === y) return;
    this.current.points.push({ x, y });
    if (prev) this.stampSegment(prev.x, prev.y, x, y, this.current.width);
  }

  endStroke(): void {
    if (this.current) {
      this.strokes.push(this.current);
      this.current = null;
    }
  }

  /** Remove the latest completed stroke and rebuild the raster. */
  undo(): void {
    this.strokes.pop();
    this.replay();
  }

  clear(): void {
    this.strokes = [];
    this.current = null;
    this.buffer.fill(1);
  }

  /** Stamp one polyline as a finished stroke (programmatic drawing). */
  addStroke(points: StrokePoint[], width = this.brushWidth): void {
    const prev = this.brushWidth;
    this.brushWidth = width;
    const first = points[0];
    if (!first) return;
    this.beginStroke(first.x, first.y);
    for (const p of points.slice(1)) this.extendStroke(p.x, p.y);
    this.endStroke();
    this.brushWidth = prev;
  }

  private replay(): void {
    this.buffer.fill(1);
    for (const s of this.strokes) {
      const first = s.points[0];
      if (!first) continue;
      this.stampDot(first.x, first.y, s.width);
      for (let i = 1; i < s.points.length; i++) {
        const a = s.points[i - 1]!;
        const b = s.points[i]!;
        this.stampSegment(a.x, a.y, b.x, b.y, s.width);
      }
    }
  }

  private stampDot(x: number, y: number, width: number): void {
    const r = (width - 1) / 2;
    const r2 = r * r;
    const lo = Math.floor(-r);
    const hi = Math.ceil(r);
    for (let dy = lo; dy <= hi; dy++) {
      for (let dx = lo; dx <= hi; dx++) {
        if (dx * dx + dy * dy > r2) continue;
        const px = x + dx;
        const py = y + dy;
        if (px < 0 || py < 0 || px >= this.size || py >= this.size) continue;
        this.buffer[py * this.size + px] = 0;
      }
    }
  }

  private stampSegment(x0: number, y0: number, x1: number, y1: number,
                       width: number): void {
    // Walk the segment densely enough that consecutive stamps overlap.
    const steps = Math.max(Math.abs(x1 - x0), Math.abs(y1 - y0), 1);
    for (let i = 0; i <= steps; i++) {
      const t = i / steps;
      this.stampDot(Math.round(x0 + (x1 - x0) * t),
                    Math.round(y0 + (y1 - y0) * t), width);
    }
  }
}

/** Pixel set the brush covers for a dot at (x, y); mirrors stampDot. */
export function brushFootprint(x: number, y: number, width: number,
                               size: number): Set<number> {
  const out = new Set<number>();
  const r = (width - 1) / 2;
  const r2 = r * r;
  for (let dy = Math.floor(-r); dy <= Math.ceil(r); dy++) {
    for (let dx = Math.floor(-r); dx <= Math.ceil(r); dx++) {
      if (dx * dx + dy * dy > r2) continue;
      const px = x + dx;
      const py = y + dy;
      if (px < 0 || py < 0 || px >= size || py >= size) continue;
      out.add(py * size + px);
    }
  }
  return out;
}
