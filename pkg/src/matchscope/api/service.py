"""HTTP service: query sessions, search, explanations, galleries, reports.

Thin delegation to the library modules. Every error body is JSON with
``code`` and ``message`` fields; raw-image uploads are forwarded to an
external feature extractor over HTTP when one is configured.
"""

from __future__ import annotations

import datetime as _dt
import json
import os
import re
import uuid
from pathlib import Path

import httpx
import numpy as np
from fastapi import Body, FastAPI, File, Form
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from starlette.exceptions import HTTPException as StarletteHTTPException

from matchscope.api.config import ServiceConfig
from matchscope.errors import (
    ExtractorError,
    FormatError,
    FullyMaskedError,
    NotFoundError,
    StorageError,
    ValidationError,
)
from matchscope.explain import (
    MODE_CORRESPONDENCE,
    MODE_HEATMAP,
    importance_maps,
    pca_correspondence,
    render_correspondence_pair,
    render_heatmap_pair,
)
from matchscope.features import MaskSpec, l2_normalize, masked_gap_pool, rasterize_mask_weights
from matchscope.report import ReportEntry, ReportStore, edit_from_json_obj
from matchscope.search import (
    QuerySpec,
    SearchIndex,
    build_index,
    filters_from_json_obj,
    load_index,
    search,
)
from matchscope.store import Catalog, load_catalog, read_spatial_tensor, tensor_from_bytes

_QID_RE = re.compile(r"^[a-f0-9]{12,32}$")
_RENDER_PIXELS = 224


class ExtractorClient:
    """Forwards raw image bytes to the configured extractor endpoint."""

    def __init__(self, endpoint: str | None, timeout: float = 10.0, retries: int = 1) -> None:
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries

    def extract(self, image_bytes: bytes) -> bytes:
        if not self.endpoint:
            raise ExtractorError(
                "no feature extractor configured; submit an SFM1 tensor instead "
                "or set MATCHSCOPE_EXTRACTOR_URL"
            )
        last_error = "extractor unreachable"
        for _ in range(self.retries + 1):
            try:
                resp = httpx.post(
                    self.endpoint,
                    content=image_bytes,
                    headers={"content-type": "application/octet-stream"},
                    timeout=self.timeout,
                )
            except httpx.HTTPError as exc:
                last_error = f"extractor unreachable: {exc}"
                continue
            if resp.status_code != 200:
                raise ExtractorError(f"extractor answered HTTP {resp.status_code}")
            return resp.content
        raise ExtractorError(last_error)


def _error_response(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse({"code": code, "message": message}, status_code=status)


def _now_rfc3339() -> str:
    now = _dt.datetime.now(_dt.timezone.utc).replace(tzinfo=None)
    return now.isoformat(timespec="microseconds") + "Z"


def _load_index(config: ServiceConfig, catalog: Catalog) -> SearchIndex:
    emb_path = config.data_root / "embeddings.emb"
    if not emb_path.exists():
        return build_index(catalog, {})
    return load_index(catalog, emb_path)


def create_app(config: ServiceConfig) -> FastAPI:
    data_root = config.data_root
    queries_dir = data_root / "queries"
    tensors_dir = data_root / "tensors"
    for directory in (data_root, queries_dir, tensors_dir):
        directory.mkdir(parents=True, exist_ok=True)

    catalog_path = data_root / "catalog.jsonl"
    if catalog_path.exists():
        catalog, _ = load_catalog(catalog_path)
    else:
        catalog = Catalog()

    app = FastAPI(title="matchscope", docs_url=None, redoc_url=None)
    app.state.config = config
    app.state.catalog = catalog
    app.state.index = _load_index(config, catalog)
    app.state.reports = ReportStore(data_root / "reports")
    app.state.extractor = ExtractorClient(
        config.extractor_url, config.extractor_timeout, config.extractor_retries
    )

    def _register(exc_type, status: int, code: str):
        @app.exception_handler(exc_type)
        async def _handler(request, exc, status=status, code=code):
            return _error_response(status, code, str(exc))

    _register(FullyMaskedError, 422, "fully_masked")
    _register(ValidationError, 400, "bad_request")
    _register(FormatError, 400, "bad_format")
    _register(NotFoundError, 404, "not_found")
    _register(ExtractorError, 502, "extractor_unavailable")
    _register(StorageError, 500, "storage_failure")

    @app.exception_handler(RequestValidationError)
    async def _on_request_validation(request, exc):
        return _error_response(400, "bad_request", str(exc))

    @app.exception_handler(StarletteHTTPException)
    async def _on_http_exception(request, exc):
        code = "not_found" if exc.status_code == 404 else "http_error"
        return _error_response(exc.status_code, code, str(exc.detail))

    def _session_paths(query_id: str) -> tuple[Path, Path]:
        if not _QID_RE.match(query_id):
            raise NotFoundError(f"no query with id {query_id}")
        return queries_dir / f"{query_id}.json", queries_dir / f"{query_id}.sfm"

    def _load_session(query_id: str) -> dict:
        meta_path, _ = _session_paths(query_id)
        try:
            return json.loads(meta_path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise NotFoundError(f"no query with id {query_id}") from None
        except (OSError, json.JSONDecodeError) as exc:
            raise StorageError(f"query session {query_id} unreadable: {exc}") from exc

    @app.post("/api/v1/queries")
    def create_query(
        tensor: bytes | None = File(None),
        image: bytes | None = File(None),
        mask: str | None = Form(None),
        filters: str | None = Form(None),
    ):
        if (tensor is None) == (image is None):
            raise ValidationError("submit exactly one of 'tensor' or 'image'")
        payload = tensor if tensor is not None else image
        if len(payload) > config.max_upload_bytes:
            return _error_response(
                413,
                "payload_too_large",
                f"upload is {len(payload)} bytes; limit is {config.max_upload_bytes}",
            )

        mask_spec = MaskSpec.from_json(mask) if mask else MaskSpec()
        if filters:
            try:
                filters_obj = json.loads(filters)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"filters are not valid JSON: {exc.msg}") from exc
        else:
            filters_obj = {}
        filters_from_json_obj(filters_obj)  # validate before any side effect

        if image is not None:
            blob = app.state.extractor.extract(image)
            try:
                fmap = tensor_from_bytes(blob, source="extractor response")
            except FormatError as exc:
                raise ExtractorError(f"extractor returned invalid tensor bytes: {exc}") from exc
        else:
            blob = tensor
            fmap = tensor_from_bytes(blob, source="uploaded tensor")

        weights = rasterize_mask_weights(mask_spec, (fmap.height, fmap.width))
        embedding = l2_normalize(masked_gap_pool(fmap, weights))

        query_id = uuid.uuid4().hex[:12]
        meta_path, tensor_path = _session_paths(query_id)
        try:
            tensor_path.write_bytes(blob)
            meta_path.write_text(
                json.dumps(
                    {
                        "query_id": query_id,
                        "mask": mask_spec.to_json_obj(),
                        "filters": filters_obj,
                        "created_at": _now_rfc3339(),
                        "embedding": embedding.values.tolist(),
                    }
                ),
                encoding="utf-8",
            )
        except OSError as exc:
            raise StorageError(f"cannot persist query session: {exc}") from exc
        return JSONResponse({"query_id": query_id}, status_code=201)

    @app.get("/api/v1/queries/{query_id}/results")
    def get_results(query_id: str, k: int = 20):
        if k < 1:
            raise ValidationError(f"k must be >= 1, got {k}")
        session = _load_session(query_id)
        spec = QuerySpec(
            embedding=np.asarray(session["embedding"], dtype=np.float64),
            k=k,
            **filters_from_json_obj(session.get("filters", {})),
        )
        return JSONResponse(search(app.state.index, spec).to_json_obj())

    @app.get("/api/v1/queries/{query_id}/explain/{image_id}")
    def get_explain(
        query_id: str,
        image_id: int,
        mode: str = MODE_HEATMAP,
        format: str = "png",
    ):
        if mode not in (MODE_HEATMAP, MODE_CORRESPONDENCE):
            raise ValidationError(
                f"unknown mode {mode!r}; valid modes: {MODE_HEATMAP}, {MODE_CORRESPONDENCE}"
            )
        if format not in ("png", "json"):
            raise ValidationError(f"unknown format {format!r}; valid formats: png, json")

        session = _load_session(query_id)
        _, tensor_path = _session_paths(query_id)
        result_path = tensors_dir / f"{image_id}.sfm"
        if not result_path.exists():
            raise NotFoundError(f"no stored tensor for image {image_id}")

        fq = read_spatial_tensor(tensor_path)
        fr = read_spatial_tensor(result_path, image_id=image_id)
        if (fq.height, fq.width, fq.channels) != (fr.height, fr.width, fr.channels):
            return _error_response(
                409,
                "shape_conflict",
                f"query grid {fq.height}x{fq.width}x{fq.channels} does not match "
                f"stored tensor {fr.height}x{fr.width}x{fr.channels}",
            )

        if mode == MODE_HEATMAP:
            weights = rasterize_mask_weights(
                MaskSpec.from_json_obj(session["mask"]), (fq.height, fq.width)
            )
            pair = importance_maps(fq, fr, normalize=True, query_weights=weights)
            if format == "json":
                return JSONResponse(pair.to_json_obj())
            png = render_heatmap_pair(pair, _RENDER_PIXELS)
        else:
            cmap = pca_correspondence(fq, fr)
            if format == "json":
                return JSONResponse(cmap.to_json_obj())
            png = render_correspondence_pair(cmap, _RENDER_PIXELS)
        return Response(content=png, media_type="image/png")

    @app.get("/api/v1/hotels/{hotel_id}/images")
    def get_hotel_images(hotel_id: int):
        records = app.state.catalog.get_hotel_images(hotel_id)
        return JSONResponse(
            {"hotel_id": hotel_id, "images": [r.to_json_obj() for r in records]}
        )

    @app.post("/api/v1/reports")
    def create_report(body: dict = Body(...)):
        unknown = body.keys() - {"query_ref", "criteria", "notes", "entries"}
        if unknown:
            raise ValidationError(f"unknown report fields: {', '.join(sorted(unknown))}")
        criteria = body.get("criteria", {})
        if not isinstance(criteria, dict):
            raise ValidationError("criteria must be a JSON object")
        entries_obj = body.get("entries", [])
        if not isinstance(entries_obj, list):
            raise ValidationError("entries must be a list")
        entries = tuple(ReportEntry.from_json_obj(e) for e in entries_obj)
        notes = body.get("notes", "")
        if not isinstance(notes, str):
            raise ValidationError("notes must be a string")
        report = app.state.reports.create(
            query_ref=str(body.get("query_ref", "")),
            criteria=criteria,
            entries=entries,
            notes=notes,
        )
        return JSONResponse(report.to_json_obj(), status_code=201)

    @app.patch("/api/v1/reports/{report_id}")
    def patch_report(report_id: str, body: dict = Body(...)):
        edit = edit_from_json_obj(body)
        try:
            report = app.state.reports.curate(report_id, edit)
        except NotFoundError:
            raise
        except ValidationError as exc:
            return _error_response(409, "conflict", str(exc))
        return JSONResponse(report.to_json_obj())

    @app.get("/api/v1/reports/{report_id}")
    def get_report(report_id: str, format: str = "json"):
        if format not in ("json", "html"):
            raise ValidationError(f"unknown format {format!r}; valid formats: json, html")

        root = data_root.resolve()

        def resolver(ref: str):
            candidate = (root / ref).resolve()
            if not str(candidate).startswith(str(root) + os.sep):
                return None
            try:
                return candidate.read_bytes()
            except OSError:
                return None

        rendered = app.state.reports.render(report_id, format, asset_resolver=resolver)
        return Response(content=rendered.content, media_type=rendered.media_type)

    @app.get("/api/v1/status")
    def get_status():
        stats = app.state.catalog.stats()
        return JSONResponse(
            {
                "generation": app.state.index.generation,
                "indexed_images": len(app.state.index),
                "catalog_images": stats.image_count,
                "hotels": stats.hotel_count,
                "embedding_dim": app.state.index.dim,
            }
        )

    return app


def serve(config: ServiceConfig, host: str = "127.0.0.1") -> None:
    """Run the service until interrupted."""
    import uvicorn

    uvicorn.run(create_app(config), host=host, port=config.port, log_level="warning")
