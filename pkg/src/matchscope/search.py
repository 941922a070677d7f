"""Exact filtered nearest-neighbor search with hotel-level grouping.

An index is an immutable generation: a float64 embedding matrix whose rows
are sorted by image_id, plus per-row filter attributes copied out of the
catalog. Search scans the rows passing every active filter and selects the
top k by dot product, ties broken by ascending image_id.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from matchscope.errors import FormatError, StorageError, ValidationError
from matchscope.store import Catalog

EMB_MAGIC = b"EMB1"
EARTH_RADIUS_KM = 6371.0

_EMB_HEADER = struct.Struct("<4sII")
_NORM_TOL = 1e-6


def _check_latlon(lat: float, lon: float) -> None:
    if not np.isfinite(lat) or not (-90.0 <= lat <= 90.0):
        raise ValidationError(f"latitude {lat!r} outside [-90, 90]")
    if not np.isfinite(lon) or not (-180.0 <= lon <= 180.0):
        raise ValidationError(f"longitude {lon!r} outside [-180, 180]")


def haversine_km(lat_a: float, lon_a: float, lat_b: float, lon_b: float) -> float:
    """Great-circle distance in km on a sphere of radius 6371.0 km."""
    _check_latlon(lat_a, lon_a)
    _check_latlon(lat_b, lon_b)
    phi_a, phi_b = np.radians(lat_a), np.radians(lat_b)
    d_phi = phi_b - phi_a
    d_lam = np.radians(lon_b) - np.radians(lon_a)
    h = np.sin(d_phi / 2.0) ** 2 + np.cos(phi_a) * np.cos(phi_b) * np.sin(d_lam / 2.0) ** 2
    # Rounding can push h a hair past 1 for antipodal points.
    return float(2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0))))


@dataclass(frozen=True)
class GeoRadius:
    """Circle filter: keep points within radius_km of (latitude, longitude)."""

    latitude: float
    longitude: float
    radius_km: float

    def __post_init__(self) -> None:
        _check_latlon(self.latitude, self.longitude)
        if not np.isfinite(self.radius_km) or self.radius_km <= 0:
            raise ValidationError(f"radius_km must be > 0, got {self.radius_km!r}")


@dataclass(frozen=True)
class GeoBox:
    """Rectangle filter in degrees; west <= east, south <= north."""

    west: float
    south: float
    east: float
    north: float

    def __post_init__(self) -> None:
        _check_latlon(self.south, self.west)
        _check_latlon(self.north, self.east)
        if self.west > self.east:
            raise ValidationError("bounding box west must not exceed east")
        if self.south > self.north:
            raise ValidationError("bounding box south must not exceed north")


@dataclass(frozen=True)
class QuerySpec:
    """A search request: normalized embedding, k, and optional filters."""

    embedding: np.ndarray
    k: int = 10
    geo_filter: GeoRadius | GeoBox | None = None
    chain_filter: int | None = None
    term_filter: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        emb = np.ascontiguousarray(self.embedding, dtype=np.float64)
        if emb.ndim != 1 or emb.size == 0:
            raise ValidationError("query embedding must be a non-empty 1-D vector")
        if not np.all(np.isfinite(emb)):
            raise ValidationError("query embedding has non-finite values")
        norm = float(np.linalg.norm(emb))
        if abs(norm - 1.0) > _NORM_TOL:
            raise ValidationError(f"query embedding is not unit-norm (norm={norm})")
        object.__setattr__(self, "embedding", emb)
        if not isinstance(self.k, int) or self.k < 1:
            raise ValidationError(f"k must be an integer >= 1, got {self.k!r}")
        if self.chain_filter is not None:
            if not isinstance(self.chain_filter, int) or self.chain_filter < 1:
                raise ValidationError("chain filter must be a positive chain id")
        terms = tuple(t.lower() for t in self.term_filter)
        for term in terms:
            if not term:
                raise ValidationError("term filter tokens must be non-empty")
        object.__setattr__(self, "term_filter", terms)


@dataclass(frozen=True)
class ResultEntry:
    image_id: int
    hotel_id: int
    score: float

    def to_json_obj(self) -> dict:
        return {"image_id": self.image_id, "hotel_id": self.hotel_id, "score": self.score}


@dataclass(frozen=True)
class HotelGroup:
    hotel_id: int
    best_score: float
    image_count: int

    def to_json_obj(self) -> dict:
        return {
            "hotel_id": self.hotel_id,
            "best_score": self.best_score,
            "image_count": self.image_count,
        }


@dataclass(frozen=True)
class SearchResult:
    generation: str
    entries: tuple[ResultEntry, ...]
    hotel_groups: tuple[HotelGroup, ...]

    def to_json_obj(self) -> dict:
        return {
            "generation": self.generation,
            "results": [e.to_json_obj() for e in self.entries],
            "hotel_groups": [g.to_json_obj() for g in self.hotel_groups],
        }


class SearchIndex:
    """Immutable search generation. Build via :func:`build_index`."""

    def __init__(
        self,
        generation: str,
        image_ids: np.ndarray,
        embeddings: np.ndarray,
        hotel_ids: np.ndarray,
        chain_ids: np.ndarray,
        latitudes: np.ndarray,
        longitudes: np.ndarray,
        terms: tuple[frozenset[str], ...],
    ) -> None:
        n = len(image_ids)
        if embeddings.shape[0] != n or len(terms) != n:
            raise ValidationError("index row tables are misaligned")
        for arr in (hotel_ids, chain_ids, latitudes, longitudes):
            if len(arr) != n:
                raise ValidationError("index row tables are misaligned")
        self.generation = generation
        self.image_ids = image_ids
        self.embeddings = embeddings
        self.hotel_ids = hotel_ids
        self.chain_ids = chain_ids
        self.latitudes = latitudes
        self.longitudes = longitudes
        self.terms = terms
        for arr in (image_ids, embeddings, hotel_ids, chain_ids, latitudes, longitudes):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.image_ids)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1] if self.embeddings.ndim == 2 else 0


def _generation_id(image_ids: np.ndarray, embeddings: np.ndarray) -> str:
    digest = hashlib.sha256()
    digest.update(image_ids.astype("<u8").tobytes())
    digest.update(embeddings.astype("<f8").tobytes())
    return digest.hexdigest()[:16]


def build_index(catalog: Catalog, embeddings: Mapping[int, np.ndarray]) -> SearchIndex:
    """Assemble an immutable generation; rows sorted by ascending image_id."""
    ids = sorted(embeddings)
    for image_id in ids:
        if image_id not in catalog:
            raise ValidationError(f"embedding for image_id {image_id} has no catalog record")

    if not ids:
        matrix = np.zeros((0, 0), dtype=np.float64)
        empty_u64 = np.zeros(0, dtype=np.uint64)
        empty_f64 = np.zeros(0, dtype=np.float64)
        return SearchIndex(
            _generation_id(empty_u64, matrix),
            empty_u64, matrix, empty_u64.copy(), empty_u64.copy(),
            empty_f64, empty_f64.copy(), (),
        )

    rows = []
    dim = None
    for image_id in ids:
        vec = np.ascontiguousarray(embeddings[image_id], dtype=np.float64)
        if vec.ndim != 1:
            raise ValidationError(f"embedding for image_id {image_id} is not 1-D")
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise ValidationError(
                f"embedding for image_id {image_id} has dimension {vec.size}, expected {dim}"
            )
        norm = float(np.linalg.norm(vec))
        if not np.isfinite(norm) or abs(norm - 1.0) > _NORM_TOL:
            raise ValidationError(f"embedding for image_id {image_id} is not unit-norm")
        rows.append(vec)

    matrix = np.vstack(rows)
    records = [catalog.get(i) for i in ids]
    image_ids = np.asarray(ids, dtype=np.uint64)
    return SearchIndex(
        _generation_id(image_ids, matrix),
        image_ids,
        matrix,
        np.asarray([r.hotel_id for r in records], dtype=np.uint64),
        np.asarray([r.chain_id for r in records], dtype=np.uint64),
        np.asarray([r.latitude for r in records], dtype=np.float64),
        np.asarray([r.longitude for r in records], dtype=np.float64),
        tuple(frozenset(r.terms) for r in records),
    )


def _filter_mask(index: SearchIndex, q: QuerySpec) -> np.ndarray:
    mask = np.ones(len(index), dtype=bool)
    if q.chain_filter is not None:
        mask &= index.chain_ids == np.uint64(q.chain_filter)
    if q.term_filter:
        wanted = set(q.term_filter)
        keep = np.fromiter(
            (wanted <= row_terms for row_terms in index.terms), dtype=bool, count=len(index)
        )
        mask &= keep
    geo = q.geo_filter
    if isinstance(geo, GeoBox):
        mask &= (
            (index.longitudes >= geo.west)
            & (index.longitudes <= geo.east)
            & (index.latitudes >= geo.south)
            & (index.latitudes <= geo.north)
        )
    elif isinstance(geo, GeoRadius):
        candidates = np.flatnonzero(mask)
        for row in candidates:
            d = haversine_km(
                geo.latitude, geo.longitude,
                float(index.latitudes[row]), float(index.longitudes[row]),
            )
            if d > geo.radius_km:
                mask[row] = False
    return mask


def _top_k_rows(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores; ties kept in ascending index order."""
    n = scores.size
    if n <= k:
        return np.argsort(-scores, kind="stable")
    # Partial selection: find the k-th score, then stable-sort only the rows
    # at or above it so boundary ties still resolve by index order.
    threshold = np.partition(scores, n - k)[n - k]
    contenders = np.flatnonzero(scores >= threshold)
    order = contenders[np.argsort(-scores[contenders], kind="stable")]
    return order[:k]


def search(index: SearchIndex, q: QuerySpec) -> SearchResult:
    """Exact top-k by dot product over the rows passing all filters."""
    if len(index) == 0:
        return SearchResult(index.generation, (), ())
    if q.embedding.size != index.dim:
        raise ValidationError(
            f"query dimension {q.embedding.size} does not match index dimension {index.dim}"
        )
    rows = np.flatnonzero(_filter_mask(index, q))
    if rows.size == 0:
        return SearchResult(index.generation, (), ())

    scores = index.embeddings[rows] @ q.embedding
    selected = _top_k_rows(scores, q.k)
    entries = tuple(
        ResultEntry(
            image_id=int(index.image_ids[rows[sel]]),
            hotel_id=int(index.hotel_ids[rows[sel]]),
            score=float(scores[sel]),
        )
        for sel in selected
    )
    return SearchResult(index.generation, entries, aggregate_hotels(entries))


def aggregate_hotels(entries: Sequence[ResultEntry]) -> tuple[HotelGroup, ...]:
    """One group per hotel: best member score and member count.

    Input must already be sorted by score descending, so the first entry
    seen for a hotel carries its best score.
    """
    best: dict[int, float] = {}
    counts: dict[int, int] = {}
    for entry in entries:
        if entry.hotel_id not in best:
            best[entry.hotel_id] = entry.score
        counts[entry.hotel_id] = counts.get(entry.hotel_id, 0) + 1
    groups = [
        HotelGroup(hotel_id=h, best_score=best[h], image_count=counts[h]) for h in best
    ]
    groups.sort(key=lambda g: (-g.best_score, g.hotel_id))
    return tuple(groups)


def load_index(catalog: Catalog, table_path: str | Path) -> SearchIndex:
    """Build a generation from a persisted embedding table."""
    ids, matrix = read_embedding_table(table_path)
    rows = {int(image_id): matrix[i].astype(np.float64) for i, image_id in enumerate(ids)}
    return build_index(catalog, rows)


def filters_from_json_obj(obj) -> dict:
    """Parse the filter JSON used on the wire into QuerySpec keyword args.

    Accepted keys: ``bbox`` [west, south, east, north], ``center``
    [lat, lon] with ``radius_km``, ``chain_id``, ``terms``. Bounding box
    and radius are mutually exclusive.
    """
    if not isinstance(obj, dict):
        raise ValidationError("filters must be a JSON object")
    unknown = obj.keys() - {"bbox", "center", "radius_km", "chain_id", "terms"}
    if unknown:
        raise ValidationError(f"unknown filter keys: {', '.join(sorted(unknown))}")
    if "bbox" in obj and ("center" in obj or "radius_km" in obj):
        raise ValidationError("bbox and center/radius_km filters are mutually exclusive")
    if ("center" in obj) != ("radius_km" in obj):
        raise ValidationError("center and radius_km must be supplied together")

    kwargs: dict = {}
    if "bbox" in obj:
        box = obj["bbox"]
        if not isinstance(box, (list, tuple)) or len(box) != 4:
            raise ValidationError("bbox must be [west, south, east, north]")
        west, south, east, north = (float(v) for v in box)
        kwargs["geo_filter"] = GeoBox(west=west, south=south, east=east, north=north)
    elif "center" in obj:
        center = obj["center"]
        if not isinstance(center, (list, tuple)) or len(center) != 2:
            raise ValidationError("center must be [latitude, longitude]")
        kwargs["geo_filter"] = GeoRadius(
            latitude=float(center[0]),
            longitude=float(center[1]),
            radius_km=float(obj["radius_km"]),
        )
    if "chain_id" in obj:
        chain = obj["chain_id"]
        if not isinstance(chain, int) or isinstance(chain, bool):
            raise ValidationError("chain_id must be an integer")
        kwargs["chain_filter"] = chain
    if "terms" in obj:
        terms = obj["terms"]
        if not isinstance(terms, list) or not all(isinstance(t, str) for t in terms):
            raise ValidationError("terms must be a list of strings")
        kwargs["term_filter"] = tuple(terms)
    return kwargs


def write_embedding_table(path: str | Path, image_ids, embeddings: np.ndarray) -> None:
    """Persist (image_id, f32 vector) rows; little-endian, id-aligned."""
    ids = np.ascontiguousarray(image_ids, dtype="<u8")
    matrix = np.ascontiguousarray(embeddings, dtype="<f4")
    if ids.ndim != 1 or matrix.ndim != 2 or matrix.shape[0] != ids.size:
        raise ValidationError("ids and embedding rows must align")
    if not np.all(np.isfinite(matrix)):
        raise ValidationError("refusing to write non-finite embeddings")
    row = np.dtype([("image_id", "<u8"), ("embedding", "<f4", (matrix.shape[1],))])
    table = np.empty(ids.size, dtype=row)
    table["image_id"] = ids
    table["embedding"] = matrix
    try:
        with open(path, "wb") as fh:
            fh.write(_EMB_HEADER.pack(EMB_MAGIC, ids.size, matrix.shape[1]))
            fh.write(table.tobytes())
    except OSError as exc:
        raise StorageError(f"cannot write embedding table {path}: {exc}") from exc


def read_embedding_table(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read an embedding table; returns (image_ids u64, embeddings f32)."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise StorageError(f"cannot read embedding table {path}: {exc}") from exc
    if len(blob) < _EMB_HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, count, dim = _EMB_HEADER.unpack_from(blob)
    if magic != EMB_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {EMB_MAGIC!r}")
    if dim < 1 and count > 0:
        raise FormatError(f"{path}: zero-dimension rows")
    row = np.dtype([("image_id", "<u8"), ("embedding", "<f4", (max(dim, 1),))])
    expected = _EMB_HEADER.size + count * row.itemsize
    if count == 0:
        expected = _EMB_HEADER.size
    if len(blob) != expected:
        raise FormatError(f"{path}: payload is {len(blob)} bytes, expected {expected}")
    if count == 0:
        return np.zeros(0, dtype=np.uint64), np.zeros((0, dim), dtype=np.float32)
    table = np.frombuffer(blob, dtype=row, count=count, offset=_EMB_HEADER.size)
    ids = table["image_id"].astype(np.uint64)
    matrix = table["embedding"].astype(np.float32).reshape(count, dim)
    if not np.all(np.isfinite(matrix)):
        raise FormatError(f"{path}: embedding table has non-finite values")
    return ids, matrix
