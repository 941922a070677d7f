"""Curatable investigation reports with self-contained rendering.

A report records what was searched (masked query thumbnail, criteria),
what the analyst wrote, and an explicitly ordered selection of results.
Reports persist one JSON file each; rendering produces either that JSON
(lossless) or a single HTML document with every image inlined as a data
URI so it survives email and print.
"""

from __future__ import annotations

import base64
import datetime as _dt
import html
import json
import re
import threading
import uuid
from dataclasses import dataclass, replace
from pathlib import Path

from matchscope.errors import NotFoundError, StorageError, ValidationError

_ID_RE = re.compile(r"^[a-z0-9][a-z0-9-]{0,63}$")

# 1x1 mid-gray PNG; stands in for any unreadable image reference.
_PLACEHOLDER_PNG = base64.b64decode(
    "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR4nGNoaGj4DwAFhAKA"
    "k61tCQAAAABJRU5ErkJggg=="
)


def _check_rfc3339(value) -> str:
    if not isinstance(value, str):
        raise ValidationError(f"timestamp must be a string, got {value!r}")
    try:
        _dt.datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError as exc:
        raise ValidationError(f"timestamp {value!r} is not RFC 3339") from exc
    return value


def _now_rfc3339() -> str:
    now = _dt.datetime.now(_dt.timezone.utc).replace(tzinfo=None)
    return now.isoformat(timespec="microseconds") + "Z"


def _advance(previous: str) -> str:
    """A timestamp strictly later than ``previous`` even on coarse clocks."""
    now = _now_rfc3339()
    if now > previous:
        return now
    prev = _dt.datetime.fromisoformat(previous.replace("Z", "+00:00"))
    bumped = (prev + _dt.timedelta(microseconds=1)).replace(tzinfo=None)
    return bumped.isoformat(timespec="microseconds") + "Z"


@dataclass(frozen=True)
class ReportEntry:
    """One selected result: identity, score, optional explanation images."""

    image_id: int
    hotel_id: int
    similarity: float
    explanation_refs: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for name in ("image_id", "hotel_id"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0 or value >= 2**64:
                raise ValidationError(f"{name} must be an unsigned 64-bit integer")
        if not isinstance(self.similarity, (int, float)):
            raise ValidationError("similarity must be a number")
        object.__setattr__(self, "similarity", float(self.similarity))
        refs = tuple(self.explanation_refs)
        for ref in refs:
            if not isinstance(ref, str) or not ref:
                raise ValidationError("explanation references must be non-empty strings")
        object.__setattr__(self, "explanation_refs", refs)

    @classmethod
    def from_json_obj(cls, obj) -> "ReportEntry":
        if not isinstance(obj, dict):
            raise ValidationError("report entry must be a JSON object")
        unknown = obj.keys() - {"image_id", "hotel_id", "similarity", "explanation_refs"}
        if unknown:
            raise ValidationError(f"unknown entry fields: {', '.join(sorted(unknown))}")
        try:
            return cls(
                image_id=obj["image_id"],
                hotel_id=obj["hotel_id"],
                similarity=obj["similarity"],
                explanation_refs=tuple(obj.get("explanation_refs", ())),
            )
        except KeyError as exc:
            raise ValidationError(f"report entry missing field {exc.args[0]!r}") from exc

    def to_json_obj(self) -> dict:
        return {
            "image_id": self.image_id,
            "hotel_id": self.hotel_id,
            "similarity": self.similarity,
            "explanation_refs": list(self.explanation_refs),
        }


@dataclass(frozen=True)
class Report:
    report_id: str
    query_ref: str
    criteria: dict
    notes: str
    entries: tuple[ReportEntry, ...]
    created_at: str
    updated_at: str

    def __post_init__(self) -> None:
        if not _ID_RE.match(self.report_id):
            raise ValidationError(f"report_id {self.report_id!r} is not a valid slug")
        if not isinstance(self.query_ref, str):
            raise ValidationError("query_ref must be a string")
        if not isinstance(self.criteria, dict):
            raise ValidationError("criteria must be a JSON object")
        if not isinstance(self.notes, str):
            raise ValidationError("notes must be a string")
        entries = tuple(self.entries)
        seen = set()
        for entry in entries:
            if entry.image_id in seen:
                raise ValidationError(f"duplicate entry image_id {entry.image_id}")
            seen.add(entry.image_id)
        object.__setattr__(self, "entries", entries)
        _check_rfc3339(self.created_at)
        _check_rfc3339(self.updated_at)

    @classmethod
    def from_json_obj(cls, obj) -> "Report":
        if not isinstance(obj, dict):
            raise ValidationError("report must be a JSON object")
        fields = {
            "report_id", "query_ref", "criteria", "notes", "entries",
            "created_at", "updated_at",
        }
        unknown = obj.keys() - fields
        if unknown:
            raise ValidationError(f"unknown report fields: {', '.join(sorted(unknown))}")
        missing = fields - obj.keys()
        if missing:
            raise ValidationError(f"report missing fields: {', '.join(sorted(missing))}")
        entries = obj["entries"]
        if not isinstance(entries, list):
            raise ValidationError("entries must be a list")
        return cls(
            report_id=obj["report_id"],
            query_ref=obj["query_ref"],
            criteria=obj["criteria"],
            notes=obj["notes"],
            entries=tuple(ReportEntry.from_json_obj(e) for e in entries),
            created_at=obj["created_at"],
            updated_at=obj["updated_at"],
        )

    def to_json_obj(self) -> dict:
        return {
            "report_id": self.report_id,
            "query_ref": self.query_ref,
            "criteria": self.criteria,
            "notes": self.notes,
            "entries": [e.to_json_obj() for e in self.entries],
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }


@dataclass(frozen=True)
class AddEntry:
    entry: ReportEntry
    position: int


@dataclass(frozen=True)
class RemoveEntry:
    image_id: int


@dataclass(frozen=True)
class MoveEntry:
    image_id: int
    position: int


@dataclass(frozen=True)
class SetNotes:
    notes: str


Edit = AddEntry | RemoveEntry | MoveEntry | SetNotes


def edit_from_json_obj(obj) -> Edit:
    """Parse one curation edit from its JSON form (the PATCH body)."""
    if not isinstance(obj, dict) or "op" not in obj:
        raise ValidationError('edit must be a JSON object with an "op" field')
    op = obj["op"]
    try:
        if op == "add":
            return AddEntry(
                entry=ReportEntry.from_json_obj(obj["entry"]),
                position=int(obj["position"]),
            )
        if op == "remove":
            return RemoveEntry(image_id=int(obj["image_id"]))
        if op == "move":
            return MoveEntry(image_id=int(obj["image_id"]), position=int(obj["position"]))
        if op == "set_notes":
            notes = obj["notes"]
            if not isinstance(notes, str):
                raise ValidationError("notes must be a string")
            return SetNotes(notes=notes)
    except KeyError as exc:
        raise ValidationError(f"edit {op!r} missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"edit {op!r} has a malformed field: {exc}") from exc
    raise ValidationError(f"unknown edit op {op!r}")


def _find_entry(report: Report, image_id: int) -> int:
    for i, entry in enumerate(report.entries):
        if entry.image_id == image_id:
            return i
    raise ValidationError(f"report has no entry with image_id {image_id}")


def apply_edit(report: Report, edit: Edit) -> Report:
    """One edit, applied atomically; returns the new report state."""
    if isinstance(edit, AddEntry):
        entries = list(report.entries)
        if any(e.image_id == edit.entry.image_id for e in entries):
            raise ValidationError(f"duplicate entry image_id {edit.entry.image_id}")
        if not (0 <= edit.position <= len(entries)):
            raise ValidationError(
                f"add position {edit.position} outside [0, {len(entries)}]"
            )
        entries.insert(edit.position, edit.entry)
        return replace(report, entries=tuple(entries))
    if isinstance(edit, RemoveEntry):
        idx = _find_entry(report, edit.image_id)
        entries = list(report.entries)
        del entries[idx]
        return replace(report, entries=tuple(entries))
    if isinstance(edit, MoveEntry):
        idx = _find_entry(report, edit.image_id)
        entries = list(report.entries)
        if not (0 <= edit.position < len(entries)):
            raise ValidationError(
                f"move position {edit.position} outside [0, {len(entries) - 1}]"
            )
        entry = entries.pop(idx)
        entries.insert(edit.position, entry)
        return replace(report, entries=tuple(entries))
    if isinstance(edit, SetNotes):
        return replace(report, notes=edit.notes)
    raise ValidationError(f"unsupported edit type {type(edit).__name__}")


@dataclass(frozen=True)
class RenderResult:
    content: bytes
    media_type: str
    warnings: tuple[str, ...] = ()


def _data_uri(blob: bytes) -> str:
    if blob.startswith(b"\x89PNG"):
        kind = "image/png"
    elif blob.startswith(b"\xff\xd8"):
        kind = "image/jpeg"
    else:
        kind = "application/octet-stream"
    return f"data:{kind};base64,{base64.b64encode(blob).decode('ascii')}"


_PLACEHOLDER_URI = _data_uri(_PLACEHOLDER_PNG)

_HTML_STYLE = """
  @page { size: A4; margin: 18mm; }
  body { font-family: Georgia, serif; color: #1a1a1a; max-width: 174mm; margin: 2em auto; }
  h1 { font-size: 1.6em; border-bottom: 2px solid #1a1a1a; padding-bottom: 0.2em; }
  h2 { font-size: 1.15em; margin-top: 1.4em; }
  .meta { color: #555; font-size: 0.85em; }
  img.query-thumb { max-width: 60mm; border: 1px solid #999; }
  dl.criteria dt { font-weight: bold; float: left; clear: left; width: 10em; }
  dl.criteria dd { margin-left: 11em; }
  .notes { white-space: pre-wrap; background: #f6f6f2; padding: 0.8em; }
  ol.results { padding-left: 0; list-style: none; counter-reset: result; }
  li.result-block { border: 1px solid #ccc; padding: 0.7em; margin-bottom: 0.8em;
                    page-break-inside: avoid; counter-increment: result; }
  li.result-block::before { content: "Result " counter(result); font-weight: bold;
                            display: block; margin-bottom: 0.3em; }
  li.result-block img { max-width: 48mm; margin-right: 4mm; border: 1px solid #999; }
  table.hotels { border-collapse: collapse; }
  table.hotels th, table.hotels td { border: 1px solid #999; padding: 0.25em 0.7em; }
"""


def _criteria_html(criteria: dict) -> str:
    if not criteria:
        return "<p>No filters; unrestricted search.</p>"
    rows = []
    for key in sorted(criteria):
        value = criteria[key]
        pretty = json.dumps(value) if isinstance(value, (dict, list)) else str(value)
        rows.append(
            f"<dt>{html.escape(str(key))}</dt><dd>{html.escape(pretty)}</dd>"
        )
    return '<dl class="criteria">' + "".join(rows) + "</dl>"


def _hotel_summary_html(entries) -> str:
    best: dict[int, float] = {}
    counts: dict[int, int] = {}
    for entry in entries:
        if entry.hotel_id not in best or entry.similarity > best[entry.hotel_id]:
            best[entry.hotel_id] = entry.similarity
        counts[entry.hotel_id] = counts.get(entry.hotel_id, 0) + 1
    ranked = sorted(best, key=lambda h: (-best[h], h))
    rows = "".join(
        f"<tr><td>{h}</td><td>{best[h]:.6f}</td><td>{counts[h]}</td></tr>" for h in ranked
    )
    return (
        '<table class="hotels"><thead><tr><th>Hotel</th><th>Best similarity</th>'
        "<th>Selected images</th></tr></thead><tbody>" + rows + "</tbody></table>"
    )


def render_report(report: Report, fmt: str, asset_resolver=None) -> RenderResult:
    """Render to bytes. JSON is lossless; HTML is one self-contained file.

    ``asset_resolver`` maps an image reference to bytes (or None). Anything
    unresolvable renders as a neutral placeholder and is reported in
    ``warnings`` rather than failing the render.
    """
    if fmt == "json":
        text = json.dumps(report.to_json_obj(), indent=2, sort_keys=False)
        return RenderResult(text.encode("utf-8"), "application/json")
    if fmt != "html":
        raise ValidationError(f"unknown render format {fmt!r}; expected json or html")

    warnings = []

    def resolve(ref: str, what: str) -> str:
        blob = None
        if ref and asset_resolver is not None:
            try:
                blob = asset_resolver(ref)
            except OSError:
                blob = None
        if blob is None:
            warnings.append(f"{what}: image {ref!r} unavailable, placeholder used")
            return _PLACEHOLDER_URI
        return _data_uri(blob)

    query_uri = resolve(report.query_ref, "query")
    blocks = []
    for entry in report.entries:
        images = "".join(
            f'<img src="{resolve(ref, f"entry {entry.image_id}")}" '
            f'alt="explanation for image {entry.image_id}">'
            for ref in entry.explanation_refs
        )
        blocks.append(
            '<li class="result-block">'
            f"<p>Image {entry.image_id} &middot; hotel {entry.hotel_id} &middot; "
            f"similarity {entry.similarity:.6f}</p>{images}</li>"
        )

    notes_html = (
        f'<div class="notes">{html.escape(report.notes)}</div>'
        if report.notes
        else "<p>No notes recorded.</p>"
    )
    hotel_section = (
        f"<section><h2>Hotel summary</h2>{_hotel_summary_html(report.entries)}</section>"
        if report.entries
        else ""
    )

    doc = f"""<!DOCTYPE html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>Investigation report {html.escape(report.report_id)}</title>
<style>{_HTML_STYLE}</style>
</head>
<body>
<header>
<h1>Investigation report</h1>
<p class="meta">Report {html.escape(report.report_id)} &middot;
created {html.escape(report.created_at)} &middot;
updated {html.escape(report.updated_at)}</p>
</header>
<section><h2>Masked query</h2>
<img class="query-thumb" src="{query_uri}" alt="masked query image">
</section>
<section><h2>Search criteria</h2>
{_criteria_html(report.criteria)}
</section>
<section><h2>Notes</h2>
{notes_html}
</section>
<section><h2>Selected results</h2>
<ol class="results">
{"".join(blocks)}
</ol>
</section>
{hotel_section}
</body>
</html>
"""
    return RenderResult(doc.encode("utf-8"), "text/html", tuple(warnings))


class ReportStore:
    """One JSON file per report under a directory; per-report edit locking."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageError(f"cannot create report directory {root}: {exc}") from exc
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock(self, report_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(report_id, threading.Lock())

    def _path(self, report_id: str) -> Path:
        if not _ID_RE.match(report_id):
            raise ValidationError(f"report_id {report_id!r} is not a valid slug")
        return self.root / f"{report_id}.json"

    def _write(self, report: Report) -> None:
        path = self._path(report.report_id)
        tmp = path.with_suffix(".json.tmp")
        try:
            tmp.write_text(
                json.dumps(report.to_json_obj(), indent=2) + "\n", encoding="utf-8"
            )
            tmp.replace(path)
        except OSError as exc:
            raise StorageError(f"cannot persist report {report.report_id}: {exc}") from exc

    def create(
        self,
        query_ref: str,
        criteria: dict,
        entries=(),
        notes: str = "",
        report_id: str | None = None,
    ) -> Report:
        if report_id is None:
            report_id = uuid.uuid4().hex[:12]
        now = _now_rfc3339()
        report = Report(
            report_id=report_id,
            query_ref=query_ref,
            criteria=criteria,
            notes=notes,
            entries=tuple(entries),
            created_at=now,
            updated_at=now,
        )
        with self._lock(report_id):
            if self._path(report_id).exists():
                raise ValidationError(f"report {report_id} already exists")
            self._write(report)
        return report

    def get(self, report_id: str) -> Report:
        path = self._path(report_id)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise NotFoundError(f"no report with id {report_id}") from None
        except OSError as exc:
            raise StorageError(f"cannot read report {report_id}: {exc}") from exc
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise StorageError(f"report file {path} is corrupt: {exc.msg}") from exc
        return Report.from_json_obj(obj)

    def curate(self, report_id: str, edit: Edit) -> Report:
        with self._lock(report_id):
            report = self.get(report_id)
            updated = apply_edit(report, edit)
            updated = replace(updated, updated_at=_advance(report.updated_at))
            self._write(updated)
        return updated

    def list_ids(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*.json"))

    def render(self, report_id: str, fmt: str, asset_resolver=None) -> RenderResult:
        return render_report(self.get(report_id), fmt, asset_resolver=asset_resolver)
