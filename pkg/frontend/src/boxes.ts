// Bounding-box tool: drag gestures over an annotated element become
// corner-normalized, bounds-clamped, element-relative pixel boxes.

export interface Box {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export function normalizeBox(ax: number, ay: number, bx: number, by: number): Box {
  return {
    x0: Math.min(ax, bx),
    y0: Math.min(ay, by),
    x1: Math.max(ax, bx),
    y1: Math.max(ay, by),
  };
}

export function clampBox(box: Box, width: number, height: number): Box {
  const clampX = (v: number) => Math.min(Math.max(v, 0), width);
  const clampY = (v: number) => Math.min(Math.max(v, 0), height);
  return { x0: clampX(box.x0), y0: clampY(box.y0), x1: clampX(box.x1), y1: clampY(box.y1) };
}

export class BoxDrag {
  private startPoint: { x: number; y: number } | null = null;

  start(x: number, y: number): void {
    this.startPoint = { x, y };
  }

  get active(): boolean {
    return this.startPoint !== null;
  }

  preview(x: number, y: number): Box | null {
    if (!this.startPoint) return null;
    return normalizeBox(this.startPoint.x, this.startPoint.y, x, y);
  }

  end(x: number, y: number, width: number, height: number): Box | null {
    if (!this.startPoint) return null;
    const box = clampBox(
      normalizeBox(this.startPoint.x, this.startPoint.y, x, y), width, height);
    this.startPoint = null;
    return box;
  }

  abort(): void {
    this.startPoint = null;
  }
}
