// Mask drafting contract: what the investigator draws is exactly what
// goes over the wire, vertex for vertex, and undo steps back one action.

import { describe, expect, it } from "vitest";

import { MaskDraft, nearFirstVertex } from "../src/mask.js";
import { WorkbenchClient, ApiError, errorBannerText } from "../src/api.js";
import { loadRecordings, recordedStub } from "./stub.js";

function drawRectangle(draft: MaskDraft): void {
  draft.addVertex(0.1, 0.1);
  draft.addVertex(0.4, 0.1);
  draft.addVertex(0.4, 0.4);
  draft.addVertex(0.1, 0.4);
  draft.closePolygon();
}

describe("mask serialization", () => {
  it("one drawn rectangle serializes to one 4-vertex polygon in [0,1]", () => {
    const draft = new MaskDraft();
    drawRectangle(draft);
    const spec = draft.toMaskSpec();
    expect(spec.polygons).toHaveLength(1);
    expect(spec.polygons[0]).toHaveLength(4);
    for (const [x, y] of spec.polygons[0]!) {
      expect(x).toBeGreaterThanOrEqual(0);
      expect(x).toBeLessThanOrEqual(1);
      expect(y).toBeGreaterThanOrEqual(0);
      expect(y).toBeLessThanOrEqual(1);
    }
  });

  it("serializes to the exact string the live server accepted with 201", () => {
    const recorded = loadRecordings().find((r) => r.name === "create_masked");
    expect(recorded?.response.status).toBe(201);
    const draft = new MaskDraft();
    drawRectangle(draft);
    expect(draft.serialize()).toBe(recorded!.request.form!.mask);
  });

  it("round trips through JSON vertex-identically", () => {
    // Deterministic PRNG so a failure reproduces.
    let state = 0x2545f491;
    const rand = () => {
      state = (state * 1103515245 + 12345) & 0x7fffffff;
      return state / 0x7fffffff;
    };

    for (let trial = 0; trial < 50; trial++) {
      const draft = new MaskDraft();
      const polygonCount = 1 + Math.floor(rand() * 4);
      for (let p = 0; p < polygonCount; p++) {
        const vertices = 3 + Math.floor(rand() * 6);
        for (let v = 0; v < vertices; v++) draft.addVertex(rand(), rand());
        draft.closePolygon();
      }
      const wire = draft.serialize();
      const redrawn = MaskDraft.parse(wire);
      expect(redrawn.polygons()).toEqual(draft.polygons());
      expect(redrawn.serialize()).toBe(wire);
    }
  });
});

describe("mask editing", () => {
  it("undo after two polygons leaves one on the wire", () => {
    const draft = new MaskDraft();
    drawRectangle(draft);
    draft.addVertex(0.6, 0.6);
    draft.addVertex(0.9, 0.6);
    draft.addVertex(0.9, 0.9);
    draft.closePolygon();
    expect(draft.toMaskSpec().polygons).toHaveLength(2);

    draft.undo();
    expect(draft.toMaskSpec().polygons).toHaveLength(1);
  });

  it("undoing a close reopens the polygon with its vertices intact", () => {
    const draft = new MaskDraft();
    drawRectangle(draft);
    draft.undo();
    expect(draft.polygons()).toHaveLength(0);
    expect(draft.openVertices()).toEqual([
      [0.1, 0.1],
      [0.4, 0.1],
      [0.4, 0.4],
      [0.1, 0.4],
    ]);
  });

  it("undo removes the last vertex while drawing", () => {
    const draft = new MaskDraft();
    draft.addVertex(0.2, 0.2);
    draft.addVertex(0.5, 0.2);
    draft.undo();
    expect(draft.openVertices()).toEqual([[0.2, 0.2]]);
  });

  it("refuses to close with fewer than 3 vertices", () => {
    const draft = new MaskDraft();
    draft.addVertex(0.2, 0.2);
    draft.addVertex(0.5, 0.2);
    expect(draft.closePolygon()).toBe(false);
    expect(draft.polygons()).toHaveLength(0);
  });

  it("clamps vertices into the unit square", () => {
    const draft = new MaskDraft();
    draft.addVertex(-0.2, 1.7);
    expect(draft.openVertices()).toEqual([[0, 1]]);
  });

  it("clear empties the draft", () => {
    const draft = new MaskDraft();
    drawRectangle(draft);
    draft.clear();
    expect(draft.isEmpty).toBe(true);
    expect(draft.toMaskSpec().polygons).toHaveLength(0);
  });

  it("detects a click near the first vertex as a close gesture", () => {
    const draft = new MaskDraft();
    draft.addVertex(0.3, 0.3);
    draft.addVertex(0.6, 0.3);
    draft.addVertex(0.6, 0.6);
    expect(nearFirstVertex(draft, 0.305, 0.295)).toBe(true);
    expect(nearFirstVertex(draft, 0.5, 0.5)).toBe(false);
  });
});

describe("masked query submission", () => {
  it("a fully masked query is refused with the server's 422 body", async () => {
    const stub = recordedStub();
    const client = new WorkbenchClient("http://stub", stub.fetch);
    const draft = new MaskDraft();
    draft.addVertex(0, 0);
    draft.addVertex(1, 0);
    draft.addVertex(1, 1);
    draft.addVertex(0, 1);
    draft.closePolygon();

    const err = await client
      .createQuery({ tensor: new Blob([new Uint8Array(8)]) }, draft.toMaskSpec(), null)
      .then(() => null)
      .catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(422);
    expect((err as ApiError).code).toBe("fully_masked");
    expect(errorBannerText(err)).toContain("fully_masked");
  });
});
