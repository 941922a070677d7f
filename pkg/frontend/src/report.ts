// Report curation against the server's edit protocol. The panel's order
// is always the last server-confirmed order: every edit is a PATCH and
// the response replaces local state wholesale. Edits are serialized so
// at most one is in flight; a drag fired mid-save queues behind it.

import { ApiError, type EditOp, type Report, type ReportEntry, type ResultEntry, type WorkbenchClient } from "./api.js";

export function entryFromResult(result: ResultEntry): ReportEntry {
  return {
    image_id: result.image_id,
    hotel_id: result.hotel_id,
    similarity: result.score,
    explanation_refs: [],
  };
}

export class ReportPanel {
  private client: WorkbenchClient;
  private current: Report | null = null;
  private queue: Promise<unknown> = Promise.resolve();
  stale = false; // set when the server no longer knows the report

  constructor(client: WorkbenchClient) {
    this.client = client;
  }

  get report(): Report | null {
    return this.current;
  }

  // Display order; image ids as last confirmed by the server.
  order(): number[] {
    return this.current ? this.current.entries.map((e) => e.image_id) : [];
  }

  async create(queryRef: string, criteria: Record<string, unknown>, entries: ReportEntry[]): Promise<Report> {
    const report = await this.client.createReport({
      query_ref: queryRef,
      criteria,
      entries,
    });
    this.current = report;
    this.stale = false;
    return report;
  }

  async load(reportId: string): Promise<Report> {
    const report = await this.client.getReport(reportId);
    this.current = report;
    this.stale = false;
    return report;
  }

  // One edit in flight at a time; later edits start only after the
  // previous response (or failure) lands.
  private enqueue<T>(job: () => Promise<T>): Promise<T> {
    const next = this.queue.then(job, job);
    this.queue = next.catch(() => undefined);
    return next;
  }

  private async applyEdit(edit: EditOp): Promise<Report> {
    if (!this.current) throw new Error("no report loaded");
    const reportId = this.current.report_id;
    try {
      const updated = await this.client.patchReport(reportId, edit);
      this.current = updated;
      return updated;
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) this.stale = true;
      throw err; // state unchanged; caller surfaces the message
    }
  }

  // Drag from one display index to another. The wire edit names the
  // dragged entry and its target position in the current order.
  dragMove(fromIndex: number, toIndex: number): Promise<Report> {
    return this.enqueue(() => {
      const order = this.order();
      if (fromIndex < 0 || fromIndex >= order.length) {
        return Promise.reject(new Error(`no entry at position ${fromIndex}`));
      }
      const imageId = order[fromIndex]!;
      return this.applyEdit({ op: "move", image_id: imageId, position: toIndex });
    });
  }

  setNotes(notes: string): Promise<Report> {
    return this.enqueue(() => this.applyEdit({ op: "set_notes", notes }));
  }

  addEntry(entry: ReportEntry, position: number): Promise<Report> {
    return this.enqueue(() => this.applyEdit({ op: "add", position, entry }));
  }

  removeEntry(imageId: number): Promise<Report> {
    return this.enqueue(() => this.applyEdit({ op: "remove", image_id: imageId }));
  }
}
