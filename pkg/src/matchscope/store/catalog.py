"""Image catalog: identity, hotel, chain, geography, and search terms.

The catalog is newline-delimited JSON, one ImageRecord per line, loaded
fully into memory. Ingestion is all-or-nothing per line: a valid line is
inserted, an invalid one is reported with its line number and skipped.
Duplicate image ids are rejected rather than overwritten so provenance is
never silently replaced.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from datetime import datetime
from pathlib import Path
from typing import Iterable, Iterator

from matchscope.errors import StorageError, ValidationError

SOURCES = ("crowdsourced", "travel_site", "other")

_U64_MAX = 2**64 - 1


def _check_u64(name: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{name} must be an integer, got {value!r}")
    if not (0 <= value <= _U64_MAX):
        raise ValidationError(f"{name} {value} outside unsigned 64-bit range")
    return value


def _check_rfc3339(value) -> str:
    if not isinstance(value, str) or not value:
        raise ValidationError(f"captured_at must be a timestamp string, got {value!r}")
    try:
        datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError as exc:
        raise ValidationError(f"captured_at {value!r} is not an RFC 3339 timestamp") from exc
    return value


@dataclass(frozen=True)
class ImageRecord:
    """One catalog entry. ``chain_id`` 0 means independent/unknown chain."""

    image_id: int
    hotel_id: int
    chain_id: int
    latitude: float
    longitude: float
    source: str
    captured_at: str
    terms: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        _check_u64("image_id", self.image_id)
        _check_u64("hotel_id", self.hotel_id)
        _check_u64("chain_id", self.chain_id)
        lat, lon = self.latitude, self.longitude
        if not isinstance(lat, (int, float)) or not (-90.0 <= lat <= 90.0):
            raise ValidationError(f"latitude {lat!r} outside [-90, 90]")
        if not isinstance(lon, (int, float)) or not (-180.0 <= lon <= 180.0):
            raise ValidationError(f"longitude {lon!r} outside [-180, 180]")
        if self.source not in SOURCES:
            raise ValidationError(f"source {self.source!r} not one of {SOURCES}")
        _check_rfc3339(self.captured_at)
        terms = tuple(self.terms)
        for term in terms:
            if not isinstance(term, str) or not term:
                raise ValidationError(f"terms must be non-empty strings, got {term!r}")
            if term != term.lower():
                raise ValidationError(f"term {term!r} is not lowercase")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "latitude", float(lat))
        object.__setattr__(self, "longitude", float(lon))

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ImageRecord":
        if not isinstance(obj, dict):
            raise ValidationError(f"catalog line must be a JSON object, got {type(obj).__name__}")
        required = {
            "image_id", "hotel_id", "chain_id", "latitude", "longitude",
            "source", "captured_at", "terms",
        }
        missing = required - obj.keys()
        if missing:
            raise ValidationError(f"missing fields: {', '.join(sorted(missing))}")
        terms = obj["terms"]
        if not isinstance(terms, list):
            raise ValidationError(f"terms must be a list, got {terms!r}")
        return cls(
            image_id=obj["image_id"],
            hotel_id=obj["hotel_id"],
            chain_id=obj["chain_id"],
            latitude=obj["latitude"],
            longitude=obj["longitude"],
            source=obj["source"],
            captured_at=obj["captured_at"],
            terms=tuple(terms),
        )

    def to_json_obj(self) -> dict:
        obj = asdict(self)
        obj["terms"] = list(self.terms)
        return obj


@dataclass(frozen=True)
class CatalogStats:
    image_count: int
    hotel_count: int
    chain_count: int

    def __post_init__(self) -> None:
        if min(self.image_count, self.hotel_count, self.chain_count) < 0:
            raise ValidationError("catalog counts must be non-negative")
        if self.hotel_count > self.image_count:
            raise ValidationError("hotel_count cannot exceed image_count")


@dataclass
class IngestResult:
    """Outcome of one ingestion pass: post-ingest stats plus per-line rejects."""

    stats: CatalogStats
    inserted: int
    rejected: list[tuple[int, str]] = field(default_factory=list)


class Catalog:
    """In-memory image catalog with a hotel-id index.

    Read-mostly: after loading, treat the catalog as immutable; further
    ingestion builds on the same instance but callers must serialize it.
    """

    def __init__(self) -> None:
        self._records: dict[int, ImageRecord] = {}
        self._by_hotel: dict[int, list[int]] = {}

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, image_id: int) -> bool:
        return image_id in self._records

    def __iter__(self) -> Iterator[ImageRecord]:
        return iter(self._records.values())

    def get(self, image_id: int) -> ImageRecord | None:
        return self._records.get(image_id)

    def image_ids(self) -> list[int]:
        return sorted(self._records)

    def insert(self, record: ImageRecord) -> None:
        if record.image_id in self._records:
            raise ValidationError(f"duplicate image_id {record.image_id}")
        self._records[record.image_id] = record
        self._by_hotel.setdefault(record.hotel_id, []).append(record.image_id)

    def ingest_lines(self, lines: Iterable[str], first_line: int = 1) -> IngestResult:
        """Ingest newline-delimited JSON records.

        Each line either fully inserts or is rejected with its line number;
        blank lines are skipped. Re-running with a corrected line affects
        only that record.
        """
        inserted = 0
        rejected: list[tuple[int, str]] = []
        for offset, raw in enumerate(lines):
            line_no = first_line + offset
            text = raw.strip()
            if not text:
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                rejected.append((line_no, f"malformed JSON: {exc.msg}"))
                continue
            try:
                record = ImageRecord.from_json_obj(obj)
                self.insert(record)
            except ValidationError as exc:
                rejected.append((line_no, str(exc)))
                continue
            inserted += 1
        return IngestResult(stats=self.stats(), inserted=inserted, rejected=rejected)

    def get_hotel_images(self, hotel_id: int) -> list[ImageRecord]:
        """Records for one hotel, ascending image_id. Unknown hotel gives []."""
        ids = self._by_hotel.get(hotel_id)
        if not ids:
            return []
        return [self._records[i] for i in sorted(ids)]

    def hotel_ids(self) -> list[int]:
        return sorted(self._by_hotel)

    def stats(self) -> CatalogStats:
        """Counts over the loaded catalog; chain 0 (independent) is not a chain."""
        chains = {r.chain_id for r in self._records.values() if r.chain_id != 0}
        return CatalogStats(
            image_count=len(self._records),
            hotel_count=len(self._by_hotel),
            chain_count=len(chains),
        )

    def dump_lines(self) -> Iterator[str]:
        """Serialize back to JSONL, ascending image_id."""
        for image_id in sorted(self._records):
            yield json.dumps(self._records[image_id].to_json_obj(), sort_keys=True)


def load_catalog(path: str | Path) -> tuple[Catalog, IngestResult]:
    """Load a catalog JSONL file from disk."""
    catalog = Catalog()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            result = catalog.ingest_lines(fh)
    except OSError as exc:
        raise StorageError(f"cannot read catalog {path}: {exc}") from exc
    return catalog, result
