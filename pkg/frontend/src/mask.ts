// Mask drafting for the query image. Vertices are normalized to [0,1]
// so the serialized polygons are resolution-independent, which is the
// shape the /queries endpoint accepts in its "mask" form field.

export type Vertex = [number, number];

export interface MaskSpecJson {
  polygons: Vertex[][];
}

type MaskOp = { kind: "vertex"; x: number; y: number } | { kind: "close" };

function clamp01(v: number): number {
  return v < 0 ? 0 : v > 1 ? 1 : v;
}

// The draft is a replayed op log rather than mutable polygon arrays:
// undo is then exactly "forget the last action" with no edge cases
// around reopening a just-closed polygon.
export class MaskDraft {
  private ops: MaskOp[] = [];

  addVertex(x: number, y: number): void {
    this.ops.push({ kind: "vertex", x: clamp01(x), y: clamp01(y) });
  }

  // A polygon needs at least 3 vertices to close; short ones stay open.
  closePolygon(): boolean {
    if (this.openVertices().length < 3) return false;
    this.ops.push({ kind: "close" });
    return true;
  }

  undo(): void {
    this.ops.pop();
  }

  clear(): void {
    this.ops = [];
  }

  get isEmpty(): boolean {
    return this.ops.length === 0;
  }

  private replay(): { closed: Vertex[][]; open: Vertex[] } {
    const closed: Vertex[][] = [];
    let open: Vertex[] = [];
    for (const op of this.ops) {
      if (op.kind === "vertex") {
        open.push([op.x, op.y]);
      } else if (open.length >= 3) {
        closed.push(open);
        open = [];
      }
    }
    return { closed, open };
  }

  // Completed polygons only; an unfinished outline never reaches the wire.
  polygons(): Vertex[][] {
    return this.replay().closed;
  }

  // Vertices of the polygon still being drawn.
  openVertices(): Vertex[] {
    return this.replay().open;
  }

  toMaskSpec(): MaskSpecJson {
    return { polygons: this.polygons() };
  }

  serialize(): string {
    return JSON.stringify(this.toMaskSpec());
  }

  static fromMaskSpec(spec: MaskSpecJson): MaskDraft {
    const draft = new MaskDraft();
    for (const poly of spec.polygons) {
      for (const [x, y] of poly) draft.addVertex(x, y);
      draft.ops.push({ kind: "close" });
    }
    return draft;
  }

  static parse(json: string): MaskDraft {
    const obj = JSON.parse(json);
    if (typeof obj !== "object" || obj === null || !Array.isArray(obj.polygons)) {
      throw new Error("mask JSON must be an object with a polygons list");
    }
    return MaskDraft.fromMaskSpec(obj as MaskSpecJson);
  }
}

// True when a click lands close enough to the first vertex of the open
// polygon to mean "close it" (distance in normalized units).
export function nearFirstVertex(draft: MaskDraft, x: number, y: number, tolerance = 0.02): boolean {
  const open = draft.openVertices();
  if (open.length === 0) return false;
  const first = open[0]!;
  const dx = first[0] - x;
  const dy = first[1] - y;
  return dx * dx + dy * dy <= tolerance * tolerance;
}
