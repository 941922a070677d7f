"""
Investigation reports: curate, persist, export
==============================================

A report is an ordered, annotated shortlist of candidate matches. Edits go
through a small vocabulary of operations, every state is JSON-round-trip
safe, and the HTML export inlines its images so the file stands alone.
"""

import shutil
from pathlib import Path

import numpy as np

from matchscope.errors import ValidationError
from matchscope.explain import render_overlay
from matchscope.report import AddEntry, MoveEntry, ReportEntry, ReportStore, SetNotes

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)
# Report ids are unique per store, so reruns need a fresh one.
shutil.rmtree(out / "reports", ignore_errors=True)
store = ReportStore(out / "reports")

entries = [
    ReportEntry(image_id=311, hotel_id=42, similarity=0.871,
                explanation_refs=("heat_311.png",)),
    ReportEntry(image_id=87, hotel_id=42, similarity=0.864),
    ReportEntry(image_id=530, hotel_id=7, similarity=0.799),
]
report = store.create(
    query_ref="queries/2f4a.sfm",
    criteria={"k": 25, "filters": {"chain_id": 3}},
    entries=entries,
    notes="night shot, strong bedding match",
    report_id="case-2f4a",
)
print(f"created {report.report_id} with "
      f"{len(report.entries)} entries at {report.created_at}")

# Curated edits persist one at a time; each advances updated_at.
report = store.curate("case-2f4a", MoveEntry(image_id=530, position=0))
report = store.curate("case-2f4a", AddEntry(
    entry=ReportEntry(image_id=912, hotel_id=7, similarity=0.781), position=1,
))
report = store.curate("case-2f4a", SetNotes(notes="carpet pattern confirmed"))
print("order after curation:", [e.image_id for e in report.entries])
print("updated_at advanced:", report.updated_at > report.created_at)

# Illegal edits are rejected and leave the stored report untouched.
try:
    store.curate("case-2f4a", MoveEntry(image_id=311, position=99))
except ValidationError as err:
    print("rejected edit:", err)

# Exports: JSON is lossless, HTML inlines every image as a data URI. The
# resolver maps each explanation ref to bytes; unresolvable refs degrade to
# a placeholder plus a warning instead of breaking the document.
heat = render_overlay(np.linspace(0.0, 1.0, 16).reshape(4, 4),
                      target=(64, 64), mode="heatmap")
assets = {"heat_311.png": heat}

result = store.render("case-2f4a", "html", asset_resolver=assets.get)
html_path = out / "case-2f4a.html"
html_path.write_bytes(result.content)
print(f"wrote {html_path} ({len(result.content)} bytes, "
      f"{len(result.warnings)} warning(s))")
for warning in result.warnings:
    print("  warning:", warning)

external = [line for line in result.content.decode("utf-8").splitlines()
            if "http://" in line or "https://" in line]
print("external references in export:", len(external))
