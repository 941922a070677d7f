// Maps the filter form to the wire JSON the /queries endpoint accepts.
// Validation mirrors the server rules so the investigator gets an
// actionable message before anything is uploaded.

import type { QueryFilters } from "./api.js";

export interface FilterForm {
  bbox: string; // "west,south,east,north" or empty
  center: string; // "lat,lon" or empty
  radiusKm: string;
  chain: string;
  terms: string; // comma-separated tokens
}

export const EMPTY_FILTER_FORM: FilterForm = {
  bbox: "",
  center: "",
  radiusKm: "",
  chain: "",
  terms: "",
};

export type FilterParse = { ok: true; filters: QueryFilters | null } | { ok: false; error: string };

function parseNumbers(text: string, count: number, label: string): number[] | string {
  const parts = text.split(",").map((p) => p.trim());
  if (parts.length !== count) return `${label} needs ${count} comma-separated numbers`;
  const values = parts.map(Number);
  if (values.some((v) => !Number.isFinite(v))) return `${label} has a non-numeric part`;
  return values;
}

export function parseFilterForm(form: FilterForm): FilterParse {
  const filters: QueryFilters = {};
  const hasBbox = form.bbox.trim() !== "";
  const hasCenter = form.center.trim() !== "";
  const hasRadius = form.radiusKm.trim() !== "";

  if (hasBbox && (hasCenter || hasRadius)) {
    return { ok: false, error: "use either a bounding box or a center radius, not both" };
  }
  if (hasCenter !== hasRadius) {
    return { ok: false, error: "center and radius must be given together" };
  }

  if (hasBbox) {
    const box = parseNumbers(form.bbox, 4, "bounding box");
    if (typeof box === "string") return { ok: false, error: box };
    filters.bbox = box as [number, number, number, number];
  } else if (hasCenter) {
    const center = parseNumbers(form.center, 2, "center");
    if (typeof center === "string") return { ok: false, error: center };
    const radius = Number(form.radiusKm);
    if (!Number.isFinite(radius) || radius <= 0) {
      return { ok: false, error: "radius must be a positive number of kilometers" };
    }
    filters.center = center as [number, number];
    filters.radius_km = radius;
  }

  if (form.chain.trim() !== "") {
    const chain = Number(form.chain);
    if (!Number.isInteger(chain) || chain < 1) {
      return { ok: false, error: "chain must be a positive integer id" };
    }
    filters.chain_id = chain;
  }

  const terms = form.terms
    .split(",")
    .map((t) => t.trim().toLowerCase())
    .filter((t) => t !== "");
  if (terms.length > 0) filters.terms = terms;

  return { ok: true, filters: Object.keys(filters).length > 0 ? filters : null };
}
