// Export contract: the HTML the server renders for a report is one
// self-contained document. Opening it must not trigger any further
// network traffic, so every reference a browser would fetch is flagged.

import { describe, expect, it } from "vitest";

import { WorkbenchClient } from "../src/api.js";
import type { Report } from "../src/api.js";
import { externalReferences, isSelfContained } from "../src/export.js";
import { fixtureJson, recordedStub } from "./stub.js";

describe("export self-containment", () => {
  it("the rendered report references nothing the browser would fetch", async () => {
    const stub = recordedStub();
    const client = new WorkbenchClient("http://stub", stub.fetch);
    const reportId = fixtureJson<Report>("report_created").report_id;

    const html = await client.renderHtml(reportId);

    expect(html.toLowerCase()).toContain("<!doctype html");
    expect(externalReferences(html)).toEqual([]);
    expect(isSelfContained(html)).toBe(true);
  });

  it("fetching the export is the only network activity; reading it adds none", async () => {
    const stub = recordedStub();
    const client = new WorkbenchClient("http://stub", stub.fetch);
    const reportId = fixtureJson<Report>("report_created").report_id;

    const html = await client.renderHtml(reportId);
    expect(client.log).toHaveLength(1);
    expect(client.log[0]!.method).toBe("GET");
    expect(client.log[0]!.url).toBe(`http://stub/api/v1/reports/${reportId}?format=html`);

    // Consuming the document is pure string work: the log stays put.
    externalReferences(html);
    isSelfContained(html);
    expect(client.log).toHaveLength(1);
    expect(stub.seen).toHaveLength(1);
    expect(stub.seen[0]!.matched).toBe("export_html");
  });

  it("the export carries the curated content inline", async () => {
    const stub = recordedStub();
    const client = new WorkbenchClient("http://stub", stub.fetch);
    const report = fixtureJson<Report>("report_after_notes");

    const html = await client.renderHtml(report.report_id);

    expect(html).toContain(report.notes);
    for (const entry of report.entries) {
      expect(html).toContain(String(entry.image_id));
    }
  });
});

describe("external reference scanning", () => {
  it("flags fetching attributes wherever they appear", () => {
    expect(externalReferences('<img src="http://cdn.example/x.png">')).toEqual([
      "http://cdn.example/x.png",
    ]);
    expect(externalReferences("<link rel='stylesheet' href='https://fonts.example/a.css'>")).toEqual(
      ["https://fonts.example/a.css"],
    );
    expect(externalReferences('<script src="../vendor/app.js"></script>')).toEqual([
      "../vendor/app.js",
    ]);
    expect(externalReferences('<img srcset="small.png 1x, http://cdn.example/big.png 2x">')).toEqual(
      ["small.png", "http://cdn.example/big.png"],
    );
  });

  it("flags CSS url() references, including protocol-relative ones", () => {
    const html = '<style>body { background: url(//cdn.example/bg.png); }</style>';
    expect(externalReferences(html)).toEqual(["//cdn.example/bg.png"]);
    expect(isSelfContained(html)).toBe(false);
    expect(externalReferences('<div style="background: url(\'img/tile.png\')"></div>')).toEqual([
      "img/tile.png",
    ]);
  });

  it("does not flag inline or inert references", () => {
    const html = [
      '<img src="data:image/png;base64,iVBORw0KGgo=">',
      '<a href="#section-2">jump</a>',
      '<a href="mailto:desk@example.org">mail</a>',
      '<a href="javascript:void(0)">noop</a>',
      '<iframe src="about:blank"></iframe>',
      '<img src="">',
      "<style>.x { background: url(data:image/gif;base64,R0lGOD); }</style>",
    ].join("\n");
    expect(externalReferences(html)).toEqual([]);
    expect(isSelfContained(html)).toBe(true);
  });

  it("a single stray reference breaks self-containment", () => {
    const doc = "<!doctype html><html><body><p>fine</p></body></html>";
    expect(isSelfContained(doc)).toBe(true);
    expect(isSelfContained(doc.replace("<p>", '<p background="x"><img src="/logo.svg">'))).toBe(
      false,
    );
  });
});

describe("export link", () => {
  it("the export button's URL is the render endpoint", () => {
    const client = new WorkbenchClient("http://stub");
    expect(client.renderUrl("abc123", "html")).toBe(
      "http://stub/api/v1/reports/abc123?format=html",
    );
    expect(client.renderUrl("abc123", "json")).toBe(
      "http://stub/api/v1/reports/abc123?format=json",
    );
  });
});
