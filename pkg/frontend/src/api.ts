// Thin typed client over the matchscope HTTP surface (/api/v1). Every
// request is appended to a network log so tests (and the export
// self-containment check) can assert exactly what went over the wire.
// The client never computes scores or explanations itself; it only
// moves server results around.

import type { MaskSpecJson } from "./mask.js";

export interface ResultEntry {
  image_id: number;
  hotel_id: number;
  score: number;
}

export interface HotelGroup {
  hotel_id: number;
  best_score: number;
  image_count: number;
}

export interface SearchResults {
  generation: string;
  results: ResultEntry[];
  hotel_groups: HotelGroup[];
}

export interface ImageRecord {
  image_id: number;
  hotel_id: number;
  chain_id: number;
  latitude: number;
  longitude: number;
  source: string;
  captured_at: string;
  terms: string[];
}

export interface HotelImages {
  hotel_id: number;
  images: ImageRecord[];
}

export interface ReportEntry {
  image_id: number;
  hotel_id: number;
  similarity: number;
  explanation_refs: string[];
}

export interface Report {
  report_id: string;
  query_ref: string;
  criteria: Record<string, unknown>;
  notes: string;
  entries: ReportEntry[];
  created_at: string;
  updated_at: string;
}

export interface StatusInfo {
  generation: string;
  indexed_images: number;
  catalog_images: number;
  hotels: number;
  embedding_dim: number;
}

// Wire shape of the "filters" form field; mirrors the server contract.
export interface QueryFilters {
  bbox?: [number, number, number, number];
  center?: [number, number];
  radius_km?: number;
  chain_id?: number;
  terms?: string[];
}

export type ExplainMode = "heatmap" | "correspondence";

export type EditOp =
  | { op: "add"; position: number; entry: ReportEntry }
  | { op: "remove"; image_id: number }
  | { op: "move"; image_id: number; position: number }
  | { op: "set_notes"; notes: string };

export interface NetworkEntry {
  method: string;
  url: string;
}

export class ApiError extends Error {
  status: number;
  code: string;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.status = status;
    this.code = code;
  }
}

// Banner text quotes the error body verbatim so the investigator sees
// what the server actually said (e.g. which extractor call failed).
export function errorBannerText(err: unknown): string {
  if (err instanceof ApiError) return `${err.code}: ${err.message}`;
  if (err instanceof Error) return err.message;
  return String(err);
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export interface QueryUpload {
  tensor?: Blob;
  image?: Blob;
}

export class WorkbenchClient {
  readonly baseUrl: string;
  readonly log: NetworkEntry[] = [];
  private fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async request(method: string, path: string, init?: RequestInit): Promise<Response> {
    const url = this.baseUrl + path;
    this.log.push({ method, url });
    const resp = await this.fetchImpl(url, { ...init, method });
    if (!resp.ok) {
      let code = "error";
      let message = `HTTP ${resp.status}`;
      try {
        const body = await resp.json();
        if (body && typeof body.code === "string") code = body.code;
        if (body && typeof body.message === "string") message = body.message;
      } catch {
        // non-JSON error body; keep the status line
      }
      throw new ApiError(resp.status, code, message);
    }
    return resp;
  }

  private async getJson<T>(path: string): Promise<T> {
    const resp = await this.request("GET", path);
    return (await resp.json()) as T;
  }

  async status(): Promise<StatusInfo> {
    return this.getJson("/api/v1/status");
  }

  async createQuery(
    upload: QueryUpload,
    mask: MaskSpecJson | null,
    filters: QueryFilters | null,
  ): Promise<string> {
    const form = new FormData();
    if (upload.tensor) form.append("tensor", upload.tensor, "query.sfm");
    if (upload.image) form.append("image", upload.image, "query.png");
    if (mask && mask.polygons.length > 0) form.append("mask", JSON.stringify(mask));
    if (filters && Object.keys(filters).length > 0) {
      form.append("filters", JSON.stringify(filters));
    }
    const resp = await this.request("POST", "/api/v1/queries", { body: form });
    const body = (await resp.json()) as { query_id: string };
    return body.query_id;
  }

  async results(queryId: string, k: number): Promise<SearchResults> {
    return this.getJson(`/api/v1/queries/${queryId}/results?k=${k}`);
  }

  explainUrl(queryId: string, imageId: number, mode: ExplainMode, format: "png" | "json" = "png"): string {
    return `${this.baseUrl}/api/v1/queries/${queryId}/explain/${imageId}?mode=${mode}&format=${format}`;
  }

  async explainPng(queryId: string, imageId: number, mode: ExplainMode): Promise<Blob> {
    const resp = await this.request(
      "GET",
      `/api/v1/queries/${queryId}/explain/${imageId}?mode=${mode}&format=png`,
    );
    return resp.blob();
  }

  async explainJson(queryId: string, imageId: number, mode: ExplainMode): Promise<unknown> {
    return this.getJson(`/api/v1/queries/${queryId}/explain/${imageId}?mode=${mode}&format=json`);
  }

  async hotelImages(hotelId: number): Promise<HotelImages> {
    return this.getJson(`/api/v1/hotels/${hotelId}/images`);
  }

  async createReport(payload: {
    query_ref: string;
    criteria: Record<string, unknown>;
    notes?: string;
    entries?: ReportEntry[];
  }): Promise<Report> {
    const resp = await this.request("POST", "/api/v1/reports", {
      body: JSON.stringify(payload),
      headers: { "Content-Type": "application/json" },
    });
    return (await resp.json()) as Report;
  }

  async getReport(reportId: string): Promise<Report> {
    return this.getJson(`/api/v1/reports/${reportId}?format=json`);
  }

  async patchReport(reportId: string, edit: EditOp): Promise<Report> {
    const resp = await this.request("PATCH", `/api/v1/reports/${reportId}`, {
      body: JSON.stringify(edit),
      headers: { "Content-Type": "application/json" },
    });
    return (await resp.json()) as Report;
  }

  renderUrl(reportId: string, format: "json" | "html"): string {
    return `${this.baseUrl}/api/v1/reports/${reportId}?format=${format}`;
  }

  async renderHtml(reportId: string): Promise<string> {
    const resp = await this.request("GET", `/api/v1/reports/${reportId}?format=html`);
    return resp.text();
  }
}
