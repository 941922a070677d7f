"""Command-line driver: ingest, index, query, explain, report, lab, serve.

Machine-readable JSON goes to standard output; diagnostics go to standard
error. Exit codes: 0 success, 1 usage error, 2 data error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from matchscope.api.config import ENV_DATA_ROOT, load_config
from matchscope.errors import (
    FormatError,
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
from matchscope.metric import ExperimentConfig, run_experiment
from matchscope.report import ReportEntry, ReportStore, edit_from_json_obj, render_report
from matchscope.search import (
    GeoBox,
    GeoRadius,
    QuerySpec,
    build_index,
    load_index,
    search,
    write_embedding_table,
)
from matchscope.store import load_catalog, read_spatial_tensor

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_IO = 3

_RENDER_PIXELS = 224


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; the contract wants 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _data_root(args) -> Path:
    if args.data_root:
        return Path(args.data_root)
    if os.environ.get(ENV_DATA_ROOT):
        return Path(os.environ[ENV_DATA_ROOT])
    return Path.cwd() / "matchscope_data"


def _load_data_root_index(root: Path):
    catalog_path = root / "catalog.jsonl"
    if not catalog_path.exists():
        raise StorageError(f"no catalog at {catalog_path}; run ingest first")
    catalog, _ = load_catalog(catalog_path)
    table_path = root / "embeddings.emb"
    if not table_path.exists():
        raise StorageError(f"no embedding table at {table_path}; run index build first")
    return catalog, load_index(catalog, table_path)


def _pooled_query_embedding(tensor_path: str, mask_path: str | None):
    fmap = read_spatial_tensor(tensor_path)
    if mask_path:
        mask = MaskSpec.from_json(Path(mask_path).read_text(encoding="utf-8"))
    else:
        mask = MaskSpec()
    weights = rasterize_mask_weights(mask, (fmap.height, fmap.width))
    return fmap, mask, l2_normalize(masked_gap_pool(fmap, weights))


def _read_json_file(path: str, what: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{what} is not valid JSON: {exc.msg}") from exc


def _parse_floats(text: str, n: int, what: str) -> list[float]:
    parts = text.split(",")
    if len(parts) != n:
        raise UsageError(f"{what} needs {n} comma-separated numbers, got {text!r}")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise UsageError(f"{what} needs numbers, got {text!r}") from None


def _geo_kwargs(args) -> dict:
    kwargs: dict = {}
    if args.bbox and (args.center or args.radius_km is not None):
        raise UsageError("--bbox and --center/--radius-km are mutually exclusive")
    if (args.center is None) != (args.radius_km is None):
        raise UsageError("--center and --radius-km must be supplied together")
    if args.bbox:
        west, south, east, north = _parse_floats(args.bbox, 4, "--bbox")
        kwargs["geo_filter"] = GeoBox(west=west, south=south, east=east, north=north)
    elif args.center:
        lat, lon = _parse_floats(args.center, 2, "--center")
        kwargs["geo_filter"] = GeoRadius(latitude=lat, longitude=lon, radius_km=args.radius_km)
    if args.chain is not None:
        kwargs["chain_filter"] = args.chain
    if args.terms:
        kwargs["term_filter"] = tuple(t for t in args.terms.split(",") if t)
    return kwargs


def _cmd_ingest(args) -> dict:
    root = _data_root(args)
    root.mkdir(parents=True, exist_ok=True)
    catalog, ingest = load_catalog(args.catalog)
    with open(root / "catalog.jsonl", "w", encoding="utf-8") as fh:
        for line in catalog.dump_lines():
            fh.write(line + "\n")

    tensors_dir = root / "tensors"
    tensors_dir.mkdir(exist_ok=True)
    copied = 0
    tensor_rejects: list[list] = []
    if args.features_dir:
        for path in sorted(Path(args.features_dir).glob("*.sfm")):
            try:
                image_id = int(path.stem)
            except ValueError:
                tensor_rejects.append([path.name, "file name is not an image_id"])
                continue
            try:
                read_spatial_tensor(path, image_id=image_id)
            except FormatError as exc:
                tensor_rejects.append([path.name, str(exc)])
                continue
            if image_id not in catalog:
                tensor_rejects.append([path.name, f"image_id {image_id} not in catalog"])
                continue
            (tensors_dir / path.name).write_bytes(path.read_bytes())
            copied += 1

    for line_no, reason in ingest.rejected:
        print(f"catalog line {line_no} rejected: {reason}", file=sys.stderr)
    for name, reason in tensor_rejects:
        print(f"tensor {name} rejected: {reason}", file=sys.stderr)
    stats = ingest.stats
    return {
        "data_root": str(root),
        "images": stats.image_count,
        "hotels": stats.hotel_count,
        "chains": stats.chain_count,
        "rejected_lines": [[n, r] for n, r in ingest.rejected],
        "tensors_ingested": copied,
        "tensors_rejected": tensor_rejects,
    }


def _cmd_index_build(args) -> dict:
    root = _data_root(args)
    catalog_path = root / "catalog.jsonl"
    if not catalog_path.exists():
        raise StorageError(f"no catalog at {catalog_path}; run ingest first")
    catalog, _ = load_catalog(catalog_path)

    embeddings: dict[int, np.ndarray] = {}
    tensors_dir = root / "tensors"
    if tensors_dir.is_dir():
        for path in sorted(tensors_dir.glob("*.sfm")):
            try:
                image_id = int(path.stem)
            except ValueError:
                print(f"skipping {path.name}: file name is not an image_id", file=sys.stderr)
                continue
            fmap = read_spatial_tensor(path, image_id=image_id)
            pooled = l2_normalize(masked_gap_pool(
                fmap, rasterize_mask_weights(MaskSpec(), (fmap.height, fmap.width))
            ))
            # Round to f32 now so the built generation matches what a later
            # load of the persisted table produces.
            embeddings[image_id] = pooled.values.astype(np.float32).astype(np.float64)

    index = build_index(catalog, embeddings)
    out = Path(args.out) if args.out else root / "embeddings.emb"
    write_embedding_table(out, index.image_ids, index.embeddings.astype(np.float32))
    return {
        "rows": len(index),
        "dim": index.dim,
        "generation": index.generation,
        "out": str(out),
    }


def _cmd_query(args) -> dict:
    root = _data_root(args)
    _, index = _load_data_root_index(root)
    _, _, embedding = _pooled_query_embedding(args.tensor, args.mask)
    spec = QuerySpec(embedding=embedding.values, k=args.k, **_geo_kwargs(args))
    return search(index, spec).to_json_obj()


def _cmd_explain(args) -> dict:
    root = _data_root(args)
    result_path = root / "tensors" / f"{args.result_id}.sfm"
    if not result_path.exists():
        raise NotFoundError(f"no stored tensor for image {args.result_id}")

    fq = read_spatial_tensor(args.query)
    fr = read_spatial_tensor(result_path, image_id=args.result_id)
    if args.mask:
        mask = MaskSpec.from_json(Path(args.mask).read_text(encoding="utf-8"))
    else:
        mask = MaskSpec()

    out: dict = {"mode": args.mode}
    if args.mode == MODE_HEATMAP:
        weights = rasterize_mask_weights(mask, (fq.height, fq.width))
        pair = importance_maps(fq, fr, normalize=True, query_weights=weights)
        png = render_heatmap_pair(pair, _RENDER_PIXELS)
        json_obj = pair.to_json_obj()
        out["total_similarity"] = pair.total_similarity
    else:
        cmap = pca_correspondence(fq, fr)
        png = render_correspondence_pair(cmap, _RENDER_PIXELS)
        json_obj = cmap.to_json_obj()
        out["explained_fraction"] = cmap.explained_fraction

    png_path = Path(f"{args.out_prefix}.png")
    json_path = Path(f"{args.out_prefix}.json")
    png_path.parent.mkdir(parents=True, exist_ok=True)
    png_path.write_bytes(png)
    json_path.write_text(json.dumps(json_obj), encoding="utf-8")
    out["png"] = str(png_path)
    out["json"] = str(json_path)
    return out


def _report_store(args) -> ReportStore:
    return ReportStore(_data_root(args) / "reports")


def _cmd_report_new(args) -> dict:
    criteria = {}
    if args.criteria:
        criteria = _read_json_file(args.criteria, "criteria file")
        if not isinstance(criteria, dict):
            raise ValidationError("criteria file must hold a JSON object")
    entries = ()
    if args.entries:
        obj = _read_json_file(args.entries, "entries file")
        if not isinstance(obj, list):
            raise ValidationError("entries file must hold a JSON list")
        entries = tuple(ReportEntry.from_json_obj(e) for e in obj)
    report = _report_store(args).create(
        query_ref=args.query_ref or "",
        criteria=criteria,
        entries=entries,
        notes=args.notes or "",
    )
    return report.to_json_obj()


def _cmd_report_edit(args) -> dict:
    if (args.edit_json is None) == (args.edit_file is None):
        raise UsageError("supply exactly one of --edit-json or --edit-file")
    text = args.edit_json if args.edit_json else Path(args.edit_file).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"edit is not valid JSON: {exc.msg}") from exc
    report = _report_store(args).curate(args.id, edit_from_json_obj(obj))
    return report.to_json_obj()


def _cmd_report_render(args) -> dict:
    root = _data_root(args).resolve()

    def resolver(ref: str):
        candidate = (root / ref).resolve()
        if not str(candidate).startswith(str(root) + os.sep):
            return None
        try:
            return candidate.read_bytes()
        except OSError:
            return None

    store = _report_store(args)
    report = store.get(args.id)
    rendered = render_report(report, args.format, asset_resolver=resolver)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_bytes(rendered.content)
    for warning in rendered.warnings:
        print(warning, file=sys.stderr)
    return {
        "report_id": args.id,
        "format": args.format,
        "out": str(out_path),
        "warnings": list(rendered.warnings),
    }


def _cmd_lab_run(args) -> dict:
    obj = _read_json_file(args.config, "experiment config")
    cfg = ExperimentConfig.from_json_obj(obj)
    results = run_experiment(cfg)
    return {"config": dataclasses.asdict(cfg), **results}


def _cmd_serve(args) -> dict:
    from matchscope.api.service import serve

    config = load_config(path=args.config, data_root=args.data_root or None)
    if args.port is not None:
        config = dataclasses.replace(config, port=args.port)
    print(f"serving on {args.host}:{config.port} (data root {config.data_root})",
          file=sys.stderr)
    serve(config, host=args.host)
    return {"status": "stopped"}


def build_parser() -> _Parser:
    parser = _Parser(prog="matchscope", description=__doc__)
    parser.add_argument("--data-root", default=None, help=f"overrides ${ENV_DATA_ROOT}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", help="load a catalog and tensor files into the data root")
    p.add_argument("--catalog", required=True, help="catalog JSONL file")
    p.add_argument("--features-dir", default=None, help="directory of <image_id>.sfm files")
    p.set_defaults(func=_cmd_ingest)

    p_index = sub.add_parser("index", help="index operations")
    index_sub = p_index.add_subparsers(dest="index_command", parser_class=_Parser)
    p = index_sub.add_parser("build", help="pool tensors and write the embedding table")
    p.add_argument("--out", default=None, help="embedding table path (default in data root)")
    p.set_defaults(func=_cmd_index_build)

    p = sub.add_parser("query", help="search the index with a tensor file")
    p.add_argument("--tensor", required=True)
    p.add_argument("--mask", default=None, help="mask JSON file")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--bbox", default=None, help="west,south,east,north degrees")
    p.add_argument("--center", default=None, help="lat,lon degrees")
    p.add_argument("--radius-km", type=float, default=None)
    p.add_argument("--chain", type=int, default=None)
    p.add_argument("--terms", default=None, help="comma-separated tokens, all must match")
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("explain", help="explain one query/result pair")
    p.add_argument("--query", required=True, help="query tensor file")
    p.add_argument("--result-id", type=int, required=True)
    p.add_argument("--mode", choices=[MODE_HEATMAP, MODE_CORRESPONDENCE], required=True)
    p.add_argument("--mask", default=None, help="mask JSON file for the query side")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=_cmd_explain)

    p_report = sub.add_parser("report", help="create, edit, or render reports")
    report_sub = p_report.add_subparsers(dest="report_command", parser_class=_Parser)
    p = report_sub.add_parser("new")
    p.add_argument("--query-ref", default="")
    p.add_argument("--criteria", default=None, help="criteria JSON file")
    p.add_argument("--entries", default=None, help="entries JSON file")
    p.add_argument("--notes", default="")
    p.set_defaults(func=_cmd_report_new)
    p = report_sub.add_parser("edit")
    p.add_argument("--id", required=True)
    p.add_argument("--edit-json", default=None, help="one edit as inline JSON")
    p.add_argument("--edit-file", default=None, help="one edit as a JSON file")
    p.set_defaults(func=_cmd_report_edit)
    p = report_sub.add_parser("render")
    p.add_argument("--id", required=True)
    p.add_argument("--format", choices=["json", "html"], default="html")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report_render)

    p_lab = sub.add_parser("lab", help="training experiments")
    lab_sub = p_lab.add_subparsers(dest="lab_command", parser_class=_Parser)
    p = lab_sub.add_parser("run")
    p.add_argument("--config", required=True, help="experiment config JSON file")
    p.set_defaults(func=_cmd_lab_run)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--config", default=None, help="service config JSON file")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            parser.print_usage(sys.stderr)
            print("error: missing subcommand", file=sys.stderr)
            return EXIT_USAGE
        result = args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, FormatError, NotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (StorageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    json.dump(result, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
