// Workbench page wiring. All state lives server-side except the unsent
// mask draft, which survives reloads in localStorage. Everything painted
// here comes straight out of API payloads.

import { errorBannerText, WorkbenchClient } from "../api.js";
import type { ExplainMode, HotelImages, QueryFilters, ResultEntry } from "../api.js";
import { MaskDraft, nearFirstVertex } from "../mask.js";
import { EMPTY_FILTER_FORM, parseFilterForm } from "../filters.js";
import type { FilterForm } from "../filters.js";
import { emptyStateMessage, groupResults, TriageState } from "../triage.js";
import { entryFromResult, ReportPanel } from "../report.js";

const MASK_DRAFT_KEY = "matchscope-mask-draft";

function byId<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function el(tag: string, className?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

const apiBase =
  new URLSearchParams(location.search).get("api") ?? location.origin;
const client = new WorkbenchClient(apiBase);
const triage = new TriageState();
const reportPanel = new ReportPanel(client);
let draft = restoreDraft();
let queryBitmap: ImageBitmap | null = null;
let uploadFile: File | null = null;

const banner = byId<HTMLDivElement>("banner");
const canvas = byId<HTMLCanvasElement>("mask-canvas");
const resultsRoot = byId<HTMLDivElement>("results");
const galleryRoot = byId<HTMLDivElement>("gallery");
const panelRoot = byId<HTMLDivElement>("explain-panel");
const reportRoot = byId<HTMLDivElement>("report");

function showError(err: unknown): void {
  banner.textContent = errorBannerText(err);
  banner.classList.add("visible");
}

function clearError(): void {
  banner.textContent = "";
  banner.classList.remove("visible");
}

function restoreDraft(): MaskDraft {
  try {
    const saved = localStorage.getItem(MASK_DRAFT_KEY);
    if (saved) return MaskDraft.parse(saved);
  } catch {
    localStorage.removeItem(MASK_DRAFT_KEY);
  }
  return new MaskDraft();
}

function persistDraft(): void {
  if (draft.isEmpty) localStorage.removeItem(MASK_DRAFT_KEY);
  else localStorage.setItem(MASK_DRAFT_KEY, draft.serialize());
}

// ---- mask canvas ----

function drawCanvas(): void {
  const ctx = canvas.getContext("2d")!;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (queryBitmap) {
    ctx.drawImage(queryBitmap, 0, 0, canvas.width, canvas.height);
  } else {
    ctx.fillStyle = "#20242b";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    ctx.fillStyle = "#5b6470";
    ctx.font = "13px sans-serif";
    ctx.textAlign = "center";
    ctx.fillText(
      uploadFile ? uploadFile.name : "choose a tensor or image file",
      canvas.width / 2,
      canvas.height / 2,
    );
  }

  ctx.lineWidth = 2;
  for (const poly of draft.polygons()) {
    ctx.strokeStyle = "rgba(255,96,96,0.95)";
    ctx.fillStyle = "rgba(255,96,96,0.30)";
    ctx.beginPath();
    poly.forEach(([x, y], i) => {
      if (i === 0) ctx.moveTo(x * canvas.width, y * canvas.height);
      else ctx.lineTo(x * canvas.width, y * canvas.height);
    });
    ctx.closePath();
    ctx.fill();
    ctx.stroke();
  }

  const open = draft.openVertices();
  if (open.length > 0) {
    ctx.strokeStyle = "rgba(255,200,80,0.95)";
    ctx.beginPath();
    open.forEach(([x, y], i) => {
      if (i === 0) ctx.moveTo(x * canvas.width, y * canvas.height);
      else ctx.lineTo(x * canvas.width, y * canvas.height);
    });
    ctx.stroke();
    for (const [x, y] of open) {
      ctx.beginPath();
      ctx.arc(x * canvas.width, y * canvas.height, 3, 0, Math.PI * 2);
      ctx.fillStyle = "rgba(255,200,80,0.95)";
      ctx.fill();
    }
  }
}

canvas.addEventListener("click", (ev) => {
  const rect = canvas.getBoundingClientRect();
  const x = (ev.clientX - rect.left) / rect.width;
  const y = (ev.clientY - rect.top) / rect.height;
  if (nearFirstVertex(draft, x, y)) draft.closePolygon();
  else draft.addVertex(x, y);
  persistDraft();
  drawCanvas();
});

canvas.addEventListener("dblclick", () => {
  draft.closePolygon();
  persistDraft();
  drawCanvas();
});

byId<HTMLButtonElement>("mask-undo").addEventListener("click", () => {
  draft.undo();
  persistDraft();
  drawCanvas();
});

byId<HTMLButtonElement>("mask-clear").addEventListener("click", () => {
  draft.clear();
  persistDraft();
  drawCanvas();
});

byId<HTMLInputElement>("upload").addEventListener("change", async (ev) => {
  const input = ev.target as HTMLInputElement;
  uploadFile = input.files && input.files[0] ? input.files[0] : null;
  queryBitmap = null;
  if (uploadFile && /\.(png|jpe?g)$/i.test(uploadFile.name)) {
    try {
      queryBitmap = await createImageBitmap(uploadFile);
    } catch {
      queryBitmap = null;
    }
  }
  drawCanvas();
});

// ---- query submission ----

function readFilterForm(): FilterForm {
  return {
    bbox: byId<HTMLInputElement>("filter-bbox").value,
    center: byId<HTMLInputElement>("filter-center").value,
    radiusKm: byId<HTMLInputElement>("filter-radius").value,
    chain: byId<HTMLInputElement>("filter-chain").value,
    terms: byId<HTMLInputElement>("filter-terms").value,
  };
}

async function submitQuery(): Promise<void> {
  clearError();
  if (!uploadFile) {
    showError(new Error("choose a tensor or image file first"));
    return;
  }
  const parsed = parseFilterForm(readFilterForm());
  if (!parsed.ok) {
    showError(new Error(parsed.error));
    return;
  }
  const isTensor = /\.sfm$/i.test(uploadFile.name);
  try {
    const queryId = await client.createQuery(
      isTensor ? { tensor: uploadFile } : { image: uploadFile },
      draft.isEmpty ? null : draft.toMaskSpec(),
      parsed.filters,
    );
    triage.startQuery(queryId, parsed.filters);
    draft.clear(); // the mask is now part of the server-side session
    persistDraft();
    drawCanvas();
    await refreshResults();
  } catch (err) {
    showError(err);
  }
}

async function refreshResults(): Promise<void> {
  if (!triage.queryId) return;
  const k = Math.max(1, Number(byId<HTMLInputElement>("k").value) || 20);
  try {
    triage.setResults(await client.results(triage.queryId, k));
    renderResults();
    renderReport();
  } catch (err) {
    showError(err);
  }
}

byId<HTMLButtonElement>("submit").addEventListener("click", () => void submitQuery());
byId<HTMLInputElement>("k").addEventListener("change", () => void refreshResults());

// ---- results grid ----

function resultCard(entry: ResultEntry): HTMLElement {
  const card = el("div", "card");
  card.append(el("div", "card-id", `image ${entry.image_id}`));
  card.append(el("div", "card-score", entry.score.toFixed(4)));

  const pick = el("button", triage.isSelected(entry.image_id) ? "picked" : "", "select") as HTMLButtonElement;
  pick.addEventListener("click", () => {
    triage.toggleSelect(entry.image_id);
    renderResults();
    renderReport();
  });
  const explain = el("button", "", "explain") as HTMLButtonElement;
  explain.addEventListener("click", () => {
    triage.openPanel(entry.image_id, "heatmap");
    renderPanel();
  });
  const gallery = el("button", "", `hotel ${entry.hotel_id}`) as HTMLButtonElement;
  gallery.addEventListener("click", () => void openGallery(entry.hotel_id));

  const row = el("div", "card-actions");
  row.append(pick, explain, gallery);
  card.append(row);
  return card;
}

function renderResults(): void {
  resultsRoot.textContent = "";
  if (!triage.results) return;
  if (triage.results.results.length === 0) {
    resultsRoot.append(el("div", "empty", emptyStateMessage(triage.filters)));
    return;
  }
  for (const group of groupResults(triage.results)) {
    const header = el("div", "group-header");
    header.append(el("span", "group-hotel", `hotel ${group.header.hotel_id}`));
    header.append(el("span", "group-best", `best ${group.header.best_score.toFixed(4)}`));
    header.append(el("span", "group-count", `${group.header.image_count} images`));
    resultsRoot.append(header);
    const grid = el("div", "group-grid");
    for (const entry of group.entries) grid.append(resultCard(entry));
    resultsRoot.append(grid);
  }
}

async function openGallery(hotelId: number): Promise<void> {
  try {
    renderGallery(await client.hotelImages(hotelId));
  } catch (err) {
    showError(err);
  }
}

function renderGallery(payload: HotelImages): void {
  galleryRoot.textContent = "";
  galleryRoot.append(el("h3", "", `hotel ${payload.hotel_id} gallery`));
  for (const record of payload.images) {
    const line = el("div", "gallery-row");
    line.append(
      el(
        "span",
        "",
        `image ${record.image_id} (${record.source}, ${record.terms.join(" ") || "no terms"})`,
      ),
    );
    galleryRoot.append(line);
  }
}

// ---- explanation panel ----

function renderPanel(): void {
  panelRoot.textContent = "";
  if (!triage.panel || !triage.queryId) return;
  const { imageId, mode } = triage.panel;
  panelRoot.append(el("h3", "", `query vs image ${imageId} (${mode})`));

  const img = el("img", "overlay") as HTMLImageElement;
  // Server-rendered PNG; the client never recomputes the overlay.
  img.src = client.explainUrl(triage.queryId, imageId, mode);
  img.alt = `${mode} overlay for image ${imageId}`;
  panelRoot.append(img);

  const toggle = el("button", "", mode === "heatmap" ? "show correspondence" : "show heatmap");
  toggle.addEventListener("click", () => {
    triage.toggleMode();
    renderPanel();
  });
  const close = el("button", "", "close");
  close.addEventListener("click", () => {
    triage.closePanel();
    renderPanel();
  });
  const row = el("div", "card-actions");
  row.append(toggle, close);
  panelRoot.append(row);
}

// ---- report panel ----

let dragFrom: number | null = null;

function renderReport(): void {
  reportRoot.textContent = "";
  const report = reportPanel.report;

  if (!report) {
    const create = el("button", "", "start report from selection") as HTMLButtonElement;
    create.disabled = triage.selection.length === 0 || !triage.queryId;
    create.addEventListener("click", () => void createReportFromSelection());
    reportRoot.append(create);
    return;
  }

  reportRoot.append(el("h3", "", `report ${report.report_id}`));
  if (reportPanel.stale) {
    const warn = el("div", "empty", "this report no longer exists on the server; reload it");
    reportRoot.append(warn);
  }

  const list = el("ul", "report-list");
  report.entries.forEach((entry, index) => {
    const item = el(
      "li",
      "report-entry",
      `image ${entry.image_id} (hotel ${entry.hotel_id}, ${entry.similarity.toFixed(4)})`,
    );
    item.draggable = true;
    item.addEventListener("dragstart", () => {
      dragFrom = index;
    });
    item.addEventListener("dragover", (ev) => ev.preventDefault());
    item.addEventListener("drop", (ev) => {
      ev.preventDefault();
      if (dragFrom === null || dragFrom === index) return;
      const from = dragFrom;
      dragFrom = null;
      reportPanel
        .dragMove(from, index)
        .then(renderReport)
        .catch(showError);
    });
    const remove = el("button", "", "remove");
    remove.addEventListener("click", () => {
      reportPanel.removeEntry(entry.image_id).then(renderReport).catch(showError);
    });
    item.append(remove);
    list.append(item);
  });
  reportRoot.append(list);

  const addable = triage.selection.filter((id) => !reportPanel.order().includes(id));
  if (addable.length > 0) {
    const add = el("button", "", `add ${addable.length} selected`);
    add.addEventListener("click", () => void addSelection(addable));
    reportRoot.append(add);
  }

  const notes = el("textarea", "notes") as HTMLTextAreaElement;
  notes.value = report.notes;
  notes.placeholder = "investigator notes";
  reportRoot.append(notes);
  const saveNotes = el("button", "", "save notes");
  saveNotes.addEventListener("click", () => {
    reportPanel.setNotes(notes.value).then(renderReport).catch(showError);
  });
  reportRoot.append(saveNotes);

  const exportBtn = el("button", "", "export html");
  exportBtn.addEventListener("click", () => {
    // The render is self-contained; open it as its own document.
    window.open(client.renderUrl(report.report_id, "html"), "_blank");
  });
  reportRoot.append(exportBtn);
}

async function createReportFromSelection(): Promise<void> {
  if (!triage.queryId) return;
  const entries = triage.selection
    .map((id) => triage.entryFor(id))
    .filter((e): e is ResultEntry => e !== undefined)
    .map(entryFromResult);
  try {
    await reportPanel.create(`query:${triage.queryId}`, { filters: triage.filters ?? {} }, entries);
    renderReport();
  } catch (err) {
    showError(err);
  }
}

async function addSelection(ids: number[]): Promise<void> {
  try {
    for (const id of ids) {
      const entry = triage.entryFor(id);
      if (!entry) continue;
      await reportPanel.addEntry(entryFromResult(entry), reportPanel.order().length);
    }
    renderReport();
  } catch (err) {
    showError(err);
  }
}

// ---- boot ----

async function boot(): Promise<void> {
  drawCanvas();
  renderReport();
  try {
    const status = await client.status();
    byId<HTMLDivElement>("status").textContent =
      `index ${status.generation}: ${status.indexed_images} images, ` +
      `${status.hotels} hotels, dim ${status.embedding_dim}`;
  } catch (err) {
    showError(err);
  }
}

void boot();

export { submitQuery, refreshResults }; // referenced from tests of the built page, if any

declare global {
  interface Window {
    _workbench?: { client: WorkbenchClient; triage: TriageState; report: ReportPanel };
  }
}
window._workbench = { client, triage, report: reportPanel };
