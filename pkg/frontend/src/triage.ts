// Triage state for one query: the returned results, the investigator's
// ordered selection, and the open explanation panel. All numbers shown
// (scores, group stats) are taken verbatim from the results payload;
// nothing is recomputed client-side.

import type { ExplainMode, HotelGroup, QueryFilters, ResultEntry, SearchResults } from "./api.js";

export interface GroupView {
  header: HotelGroup;
  entries: ResultEntry[];
}

export interface ExplainPanel {
  imageId: number;
  mode: ExplainMode;
}

export class TriageState {
  queryId: string | null = null;
  filters: QueryFilters | null = null;
  results: SearchResults | null = null;
  selection: number[] = []; // ordered image ids, order is user-controlled
  panel: ExplainPanel | null = null;

  startQuery(queryId: string, filters: QueryFilters | null): void {
    this.queryId = queryId;
    this.filters = filters;
    this.results = null;
    this.selection = [];
    this.panel = null;
  }

  // New results invalidate any selected id that is no longer returned,
  // keeping selection a subset of the visible results.
  setResults(results: SearchResults): void {
    this.results = results;
    const returned = new Set(results.results.map((r) => r.image_id));
    this.selection = this.selection.filter((id) => returned.has(id));
    if (this.panel && !returned.has(this.panel.imageId)) this.panel = null;
  }

  resultIds(): number[] {
    return this.results ? this.results.results.map((r) => r.image_id) : [];
  }

  entryFor(imageId: number): ResultEntry | undefined {
    return this.results?.results.find((r) => r.image_id === imageId);
  }

  isSelected(imageId: number): boolean {
    return this.selection.includes(imageId);
  }

  toggleSelect(imageId: number): void {
    if (!this.results || !this.results.results.some((r) => r.image_id === imageId)) return;
    const at = this.selection.indexOf(imageId);
    if (at >= 0) this.selection.splice(at, 1);
    else this.selection.push(imageId);
  }

  moveSelection(fromIndex: number, toIndex: number): void {
    if (fromIndex < 0 || fromIndex >= this.selection.length) return;
    if (toIndex < 0 || toIndex >= this.selection.length) return;
    const [id] = this.selection.splice(fromIndex, 1);
    this.selection.splice(toIndex, 0, id!);
  }

  openPanel(imageId: number, mode: ExplainMode): void {
    if (!this.results || !this.results.results.some((r) => r.image_id === imageId)) return;
    this.panel = { imageId, mode };
  }

  toggleMode(): void {
    if (!this.panel) return;
    this.panel = {
      imageId: this.panel.imageId,
      mode: this.panel.mode === "heatmap" ? "correspondence" : "heatmap",
    };
  }

  closePanel(): void {
    this.panel = null;
  }
}

// Partition the ranked results under the server's hotel group headers.
// Group order and the header numbers come from the payload; each group's
// entries keep their payload rank order.
export function groupResults(results: SearchResults): GroupView[] {
  return results.hotel_groups.map((header) => ({
    header,
    entries: results.results.filter((r) => r.hotel_id === header.hotel_id),
  }));
}

// Shown when a query returns nothing; suggests loosening whichever
// filters were active.
export function emptyStateMessage(filters: QueryFilters | null): string {
  if (!filters) return "No results in the index for this query.";
  const active: string[] = [];
  if (filters.bbox) active.push("bounding box");
  if (filters.center) active.push("radius");
  if (filters.chain_id !== undefined) active.push("chain");
  if (filters.terms) active.push("terms");
  if (active.length === 0) return "No results in the index for this query.";
  return `No results match the current filters. Try relaxing the ${active.join(", ")} filter${
    active.length > 1 ? "s" : ""
  }.`;
}
