"""Acceptance gate: the behaviors the package must deliver, checked end to end.

Each test prints exactly one PASS/FAIL line with the measured numbers, then
asserts. Oracles are deliberately independent re-derivations: nested sums,
a dense eigensolver, central finite differences, and full-sort rankings.
"""

import io
import json
import struct
import threading
import time
from http.server import ThreadingHTTPServer

import numpy as np
import pytest
from conftest import make_record, random_fmap
from fastapi.testclient import TestClient
from PIL import Image
from test_api import FULL_MASK, _StubHandler, build_corpus
from test_metric import finite_difference_grad, stable_training_instance

from matchscope.api.config import ServiceConfig
from matchscope.api.service import create_app
from matchscope.errors import FormatError, StorageError
from matchscope.explain import importance_maps, joint_principal_components, pca_correspondence
from matchscope.features import gap_pool, l2_normalize
from matchscope.metric import ExperimentConfig, run_experiment, train_step
from matchscope.metric.losses import LOSS_BATCH_ALL, LOSS_EASY_POSITIVE
from matchscope.report import Report, ReportEntry, apply_edit, edit_from_json_obj, render_report
from matchscope.search import (
    GeoBox,
    GeoRadius,
    QuerySpec,
    build_index,
    load_index,
    read_embedding_table,
    search,
    write_embedding_table,
)
from matchscope.store import (
    Catalog,
    SpatialFeatureMap,
    read_spatial_tensor,
    tensor_from_bytes,
    tensor_to_bytes,
    write_spatial_tensor,
)

NOW = "2024-05-01T12:00:00.000000Z"

PNG_1PX = bytes.fromhex(
    "89504e470d0a1a0a0000000d4948445200000001000000010802000000907753de"
    "0000000c49444154789c63f8cfc0000000040001a3e000ee0000000049454e44ae426082"
)


@pytest.fixture
def announce(capsys):
    """Print one PASS/FAIL line for the criterion, then enforce it."""

    def _announce(name, ok, detail):
        with capsys.disabled():
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, f"{name}: {detail}"

    return _announce


# ---------------------------------------------------------------------------
# The importance decomposition reproduces the retrieval score exactly.
# ---------------------------------------------------------------------------


def test_decomposition_identity(announce):
    rng = np.random.default_rng(20240801)
    channel_pool = [4, 8, 16, 32, 64, 128, 256]
    started = time.monotonic()
    worst = 0.0
    pairs = 0
    for trial in range(200):
        if trial == 0:
            h, w, c = 2, 2, 4
        elif trial == 1:
            h, w, c = 7, 7, 2048
        else:
            h = int(rng.integers(2, 8))
            w = int(rng.integers(2, 8))
            c = channel_pool[int(rng.integers(0, len(channel_pool)))]
        fq = random_fmap(rng, h, w, c, image_id=1)
        fr = random_fmap(rng, h, w, c, image_id=2)

        # Oracle: the raw score is the dot product of the two mean-pooled
        # vectors; the normalized score is their cosine.
        flat_q = fq.values.reshape(h * w, c).astype(np.float64)
        flat_r = fr.values.reshape(h * w, c).astype(np.float64)
        oracle_raw = float(np.dot(flat_q.mean(axis=0), flat_r.mean(axis=0)))
        oracle_cos = oracle_raw / (
            np.linalg.norm(flat_q.mean(axis=0)) * np.linalg.norm(flat_r.mean(axis=0))
        )

        raw = importance_maps(fq, fr, normalize=False)
        for value in (
            float(raw.query_importance.sum()),
            float(raw.result_importance.sum()),
            raw.total_similarity,
        ):
            worst = max(worst, abs(value - oracle_raw) / max(abs(oracle_raw), 1e-12))

        cos = importance_maps(fq, fr, normalize=True)
        for value in (
            float(cos.query_importance.sum()),
            float(cos.result_importance.sum()),
            cos.total_similarity,
        ):
            worst = max(worst, abs(value - oracle_cos) / max(abs(oracle_cos), 1e-12))
        pairs += 1
    elapsed = time.monotonic() - started
    ok = worst <= 1e-5 and elapsed < 30.0
    announce(
        "decomposition-identity",
        ok,
        f"{pairs} tensor pairs, max rel err {worst:.3e} (tol 1e-5), {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# Joint principal components agree with a dense eigensolver.
# ---------------------------------------------------------------------------


def test_pca_matches_dense_eigensolver(announce):
    rng = np.random.default_rng(20240801)
    channel_cycle = [64, 128, 256]
    worst_eig = 0.0
    worst_vec = 0.0
    for trial in range(50):
        c = channel_cycle[trial % len(channel_cycle)]
        rows = rng.standard_normal((98, c))
        eigenvalues, directions, projections = joint_principal_components(rows)

        centered = rows - rows.mean(axis=0)
        scatter = centered.T @ centered
        dense_vals, dense_vecs = np.linalg.eigh(scatter)
        for k in range(3):
            oracle_val = dense_vals[-1 - k]
            worst_eig = max(
                worst_eig, abs(eigenvalues[k] - oracle_val) / max(abs(oracle_val), 1e-12)
            )
            oracle_vec = dense_vecs[:, -1 - k]
            oracle_proj = centered @ oracle_vec
            if oracle_proj[np.argmax(np.abs(oracle_proj))] < 0:
                oracle_vec = -oracle_vec
            worst_vec = max(worst_vec, float(np.max(np.abs(directions[:, k] - oracle_vec))))
        assert np.allclose(projections, centered @ directions, atol=1e-9)

    # A rank-1 pair of tensors must be explained almost entirely by one axis.
    base = rng.standard_normal(16)
    coeff = rng.standard_normal((2 * 3 * 3, 1))
    stack = (coeff @ base[None, :]).reshape(2, 3, 3, 16).astype(np.float32)
    corr = pca_correspondence(
        SpatialFeatureMap(values=stack[0], image_id=1),
        SpatialFeatureMap(values=stack[1], image_id=2),
    )
    rank1_ok = corr.explained_fraction >= 1.0 - 1e-6

    ok = worst_eig <= 1e-6 and worst_vec <= 1e-5 and rank1_ok
    announce(
        "pca-correctness",
        ok,
        f"50 stacks vs np.linalg.eigh, max eigenvalue rel {worst_eig:.3e} (tol 1e-6), "
        f"max direction err {worst_vec:.3e} (tol 1e-5), rank-1 explained "
        f"{corr.explained_fraction:.9f}",
    )


# ---------------------------------------------------------------------------
# Analytic loss gradients match central finite differences.
# ---------------------------------------------------------------------------


def test_loss_gradients_match_finite_differences(announce):
    rng = np.random.default_rng(99)
    worst = 0.0
    checked = 0
    for kind in (LOSS_BATCH_ALL, LOSS_EASY_POSITIVE):
        for _ in range(12):
            batch, model = stable_training_instance(rng, kind)
            _, report = train_step(model, batch, kind, margin=0.2)
            numeric = finite_difference_grad(model, batch, kind, margin=0.2)
            scale = max(float(np.abs(report.grad).max()), float(np.abs(numeric).max()), 1e-12)
            worst = max(worst, float(np.abs(report.grad - numeric).max()) / scale)
            checked += 1
    ok = checked >= 20 and worst < 1e-4
    announce(
        "gradient-checks",
        ok,
        f"{checked} random instances over both losses, max rel err {worst:.3e} (tol 1e-4)",
    )


# ---------------------------------------------------------------------------
# Training moves retrieval in the right direction, and the mined loss wins.
# ---------------------------------------------------------------------------


def test_easy_positive_outperforms_batch_all(announce):
    started = time.monotonic()
    results = run_experiment(ExperimentConfig())
    elapsed = time.monotonic() - started
    ba = results["losses"][LOSS_BATCH_ALL]["final_holdout_recall_at_1"]
    ep = results["losses"][LOSS_EASY_POSITIVE]["final_holdout_recall_at_1"]
    chance = results["chance_recall_at_1"]
    ok = (
        ep >= ba
        and min(ba, ep) >= 5 * chance
        and min(ba, ep) >= 0.1
        and elapsed < 300.0
    )
    announce(
        "training-direction",
        ok,
        f"holdout recall@1: easy-positive {ep:.4f} >= batch-all {ba:.4f}, "
        f"chance {chance:.4f}, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# Search is exact: full-sort oracle agreement under every filter type.
# ---------------------------------------------------------------------------


def _oracle_haversine_km(lat0, lon0, lats, lons):
    """Vectorized great-circle distance, written apart from the library path."""
    p0, l0 = np.radians(lat0), np.radians(lon0)
    p, l = np.radians(np.asarray(lats)), np.radians(np.asarray(lons))
    h = np.sin((p - p0) / 2.0) ** 2 + np.cos(p0) * np.cos(p) * np.sin((l - l0) / 2.0) ** 2
    return 2.0 * 6371.0 * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def test_search_matches_brute_force(announce):
    rng = np.random.default_rng(5)
    n, dim, k = 10_000, 128, 50

    catalog = Catalog()
    lats = rng.uniform(-60.0, 60.0, size=n)
    lons = rng.uniform(-170.0, 170.0, size=n)
    chains = np.array([1 + i % 7 for i in range(n)])
    term_sets = [frozenset(("pool", "patio")) if i % 3 == 0 else frozenset(("lobby", "bed")) for i in range(n)]
    for i in range(n):
        catalog.insert(
            make_record(
                i + 1,
                hotel_id=1 + i % 500,
                chain_id=int(chains[i]),
                latitude=float(lats[i]),
                longitude=float(lons[i]),
                terms=tuple(sorted(term_sets[i])),
            )
        )

    matrix = rng.standard_normal((n, dim))
    matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
    # Five rows share one embedding so the tie rule is exercised at scale.
    tie_rows = [1000, 2500, 4000, 5500, 9000]
    matrix[tie_rows] = matrix[tie_rows[0]]
    index = build_index(catalog, {i + 1: matrix[i] for i in range(n)})

    def oracle_ids(query_vec, keep_mask):
        rows = np.flatnonzero(keep_mask)
        scores = matrix[rows] @ query_vec
        order = np.lexsort((rows, -scores))
        return [int(rows[j]) + 1 for j in order[:k]]

    started = time.monotonic()
    mismatches = []
    tie_checked = False
    for q in range(100):
        if q == 0:
            query_vec = matrix[tie_rows[0]].copy()
        else:
            query_vec = rng.standard_normal(dim)
            query_vec /= np.linalg.norm(query_vec)

        kwargs = {}
        keep = np.ones(n, dtype=bool)
        style = -1 if q < 40 else q % 5
        if style == 0:
            south, north = sorted(rng.uniform(-60, 60, size=2))
            west, east = sorted(rng.uniform(-170, 170, size=2))
            kwargs["geo_filter"] = GeoBox(west=west, south=south, east=east, north=north)
            keep = (lons >= west) & (lons <= east) & (lats >= south) & (lats <= north)
        elif style == 1:
            lat0 = float(rng.uniform(-50, 50))
            lon0 = float(rng.uniform(-150, 150))
            radius = float(rng.uniform(500, 6000))
            kwargs["geo_filter"] = GeoRadius(latitude=lat0, longitude=lon0, radius_km=radius)
            keep = _oracle_haversine_km(lat0, lon0, lats, lons) <= radius
        elif style == 2:
            chain = int(rng.integers(1, 8))
            kwargs["chain_filter"] = chain
            keep = chains == chain
        elif style == 3:
            wanted = frozenset(("pool",)) if q % 2 else frozenset(("lobby", "bed"))
            kwargs["term_filter"] = tuple(sorted(wanted))
            keep = np.array([wanted <= s for s in term_sets])
        elif style == 4:
            chain = int(rng.integers(1, 8))
            south, north = sorted(rng.uniform(-60, 60, size=2))
            kwargs["chain_filter"] = chain
            kwargs["geo_filter"] = GeoBox(west=-170.0, south=south, east=170.0, north=north)
            kwargs["term_filter"] = ("lobby",)
            keep = (chains == chain) & (lats >= south) & (lats <= north)
            keep &= np.array([frozenset(("lobby",)) <= s for s in term_sets])

        got = [e.image_id for e in search(index, QuerySpec(embedding=query_vec, k=k, **kwargs)).entries]
        if got != oracle_ids(query_vec, keep):
            mismatches.append(q)
        if q == 0:
            tie_checked = got[: len(tie_rows)] == sorted(r + 1 for r in tie_rows)

    self_ok = True
    self_rows = [r for r in range(0, n, 250) if r not in tie_rows][:20]
    for row in self_rows:
        top = search(index, QuerySpec(embedding=matrix[row], k=1)).entries[0]
        if top.image_id != row + 1 or abs(top.score - 1.0) > 1e-6:
            self_ok = False
    elapsed = time.monotonic() - started

    ok = not mismatches and tie_checked and self_ok
    announce(
        "search-exactness",
        ok,
        f"{n} images, 100 filtered+unfiltered queries vs full-sort oracle, "
        f"mismatches {mismatches if mismatches else 'none'}, duplicate-score ties ascending "
        f"{tie_checked}, {len(self_rows)} self-queries rank 1 at 1±1e-6 {self_ok}, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# Storage formats: bit-exact round trips and declared failures on corruption.
# ---------------------------------------------------------------------------


def test_tensor_and_table_round_trips(announce, tmp_path):
    rng = np.random.default_rng(20240801)
    channel_pool = [1, 2, 3, 8, 64, 2048]

    tensor_ok = 0
    for trial in range(100):
        if trial == 0:
            h, w, c = 1, 1, 1
        elif trial == 1:
            h, w, c = 7, 7, 2048
        else:
            h = int(rng.integers(1, 9))
            w = int(rng.integers(1, 9))
            c = channel_pool[int(rng.integers(0, len(channel_pool)))]
        fmap = random_fmap(rng, h, w, c, image_id=trial)
        if trial % 4 == 0:
            path = tmp_path / f"t{trial}.sfm"
            write_spatial_tensor(fmap, path)
            got = read_spatial_tensor(path, image_id=trial)
        else:
            got = tensor_from_bytes(tensor_to_bytes(fmap), image_id=trial)
        if (
            got.values.shape == fmap.values.shape
            and got.values.dtype == np.float32
            and got.values.tobytes() == fmap.values.tobytes()
        ):
            tensor_ok += 1

    table_ok = 0
    for trial in range(100):
        if trial == 0:
            count, dim = 0, 16
        elif trial == 1:
            count, dim = 3, 1
        else:
            count = int(rng.integers(1, 40))
            dim = int(rng.integers(1, 96))
        table_ids = np.sort(rng.choice(100_000, size=count, replace=False)).astype(np.uint64)
        rows = rng.standard_normal((count, dim)).astype(np.float32)
        path = tmp_path / f"e{trial}.emb"
        write_embedding_table(path, table_ids, rows)
        got_ids, got_rows = read_embedding_table(path)
        if (
            got_ids.tobytes() == table_ids.tobytes()
            and got_rows.shape == rows.shape
            and got_rows.tobytes() == rows.tobytes()
        ):
            table_ok += 1

    def header(h, w, c):
        return struct.pack("<4sIII", b"SFM1", h, w, c)

    def read_table_blob(blob):
        path = tmp_path / "scratch.emb"
        path.write_bytes(blob)
        return read_embedding_table(path)

    zeros = np.zeros(8, dtype="<f4").tobytes()
    nan_payload = np.array([np.nan, 0.0], dtype="<f4").tobytes()
    good_table = tmp_path / "good.emb"
    write_embedding_table(good_table, np.array([4], dtype=np.uint64), np.ones((1, 2), np.float32))
    table_blob = good_table.read_bytes()

    corrupt_cases = [
        ("tensor bad magic", lambda: tensor_from_bytes(b"XXXX" + header(1, 1, 1)[4:] + zeros[:4]), FormatError),
        ("tensor short header", lambda: tensor_from_bytes(b"SFM1\x01\x00"), FormatError),
        ("tensor truncated payload", lambda: tensor_from_bytes(header(2, 2, 2) + zeros[:28]), FormatError),
        ("tensor oversized payload", lambda: tensor_from_bytes(header(1, 1, 1) + zeros), FormatError),
        ("tensor zero dimension", lambda: tensor_from_bytes(header(2, 0, 3) + zeros), FormatError),
        ("tensor implausible shape", lambda: tensor_from_bytes(header(2**20, 2**20, 1)), FormatError),
        ("tensor non-finite", lambda: tensor_from_bytes(header(1, 1, 2) + nan_payload), FormatError),
        ("tensor missing file", lambda: read_spatial_tensor(tmp_path / "absent.sfm"), StorageError),
        ("table bad magic", lambda: read_table_blob(b"EMB2" + table_blob[4:]), FormatError),
        ("table truncated header", lambda: read_table_blob(table_blob[:6]), FormatError),
        ("table size mismatch", lambda: read_table_blob(table_blob[:-4]), FormatError),
        (
            "table non-finite",
            lambda: read_table_blob(
                table_blob[:20] + struct.pack("<2f", float("nan"), 1.0)
            ),
            FormatError,
        ),
        ("table missing file", lambda: read_embedding_table(tmp_path / "absent.emb"), StorageError),
    ]

    corrupt_failures = []
    for name, action, expected in corrupt_cases:
        try:
            action()
        except expected:
            pass
        except Exception:
            corrupt_failures.append(name)
        else:
            corrupt_failures.append(name)

    ok = tensor_ok == 100 and table_ok == 100 and not corrupt_failures
    announce(
        "format-round-trips",
        ok,
        f"tensors {tensor_ok}/100 bit-exact, tables {table_ok}/100 bit-exact, "
        f"corruption {len(corrupt_cases) - len(corrupt_failures)}/{len(corrupt_cases)} rejected"
        + (f", failed: {corrupt_failures}" if corrupt_failures else ""),
    )


# ---------------------------------------------------------------------------
# Reports: lossless JSON identity and edit-sequence closure at volume.
# ---------------------------------------------------------------------------


def _random_report(rng, tag):
    entry_count = int(rng.integers(0, 13))
    entry_ids = rng.choice(np.arange(1, 100_000), size=entry_count, replace=False)
    entries = []
    for image_id in entry_ids:
        refs = (f"explain/{int(image_id)}.png",) if rng.random() < 0.5 else ()
        entries.append(
            ReportEntry(
                image_id=int(image_id),
                hotel_id=int(rng.integers(1, 500)),
                similarity=float(rng.uniform(-1, 1)),
                explanation_refs=refs,
            )
        )
    return Report(
        report_id=f"case-{tag}",
        query_ref="queries/q.sfm" if rng.random() < 0.7 else "",
        criteria={"filters": {"chain_id": int(rng.integers(1, 9))}, "k": 50},
        notes="line one\nline two ☃" if rng.random() < 0.5 else "",
        entries=tuple(entries),
        created_at=NOW,
        updated_at=NOW,
    )


def test_report_round_trip_and_edit_closure(announce):
    rng = np.random.default_rng(20240801)

    identity_ok = 0
    for i in range(200):
        report = _random_report(rng, i)
        via_obj = Report.from_json_obj(json.loads(json.dumps(report.to_json_obj())))
        via_render = Report.from_json_obj(json.loads(render_report(report, "json").content))
        if via_obj == report and via_render == report:
            identity_ok += 1

    sequences_ok = 0
    applied = 0
    rejected = 0
    for seq in range(1000):
        report = _random_report(rng, f"s{seq}")
        model = [entry.image_id for entry in report.entries]
        notes = report.notes
        good = True
        for _ in range(20):
            op = ("add", "remove", "move", "set_notes")[int(rng.integers(0, 4))]
            image_id = int(rng.choice(model)) if model and rng.random() < 0.7 else int(rng.integers(1, 100_000))
            if op == "add":
                position = int(rng.integers(0, len(model) + 2))
                obj = {
                    "op": "add",
                    "position": position,
                    "entry": {"image_id": image_id, "hotel_id": 1, "similarity": 0.5},
                }
                legal = image_id not in model and position <= len(model)
            elif op == "remove":
                obj = {"op": "remove", "image_id": image_id}
                legal = image_id in model
            elif op == "move":
                position = int(rng.integers(0, len(model) + 2))
                obj = {"op": "move", "image_id": image_id, "position": position}
                legal = image_id in model and position < len(model)
            else:
                obj = {"op": "set_notes", "notes": f"pass {seq}"}
                legal = True
            edit = edit_from_json_obj(obj)
            before = report
            try:
                report = apply_edit(report, edit)
            except Exception:
                if legal or report is not before:
                    good = False
                    break
                rejected += 1
                continue
            if not legal:
                good = False
                break
            applied += 1
            if op == "add":
                model.insert(obj["position"], image_id)
            elif op == "remove":
                model.remove(image_id)
            elif op == "move":
                model.insert(obj["position"], model.pop(model.index(image_id)))
            else:
                notes = obj["notes"]
        got_ids = [entry.image_id for entry in report.entries]
        closed = (
            good
            and got_ids == model
            and len(set(got_ids)) == len(got_ids)
            and report.notes == notes
            and Report.from_json_obj(json.loads(json.dumps(report.to_json_obj()))) == report
        )
        sequences_ok += 1 if closed else 0

    html_ok = 0
    for i in range(20):
        report = _random_report(rng, f"h{i}")
        resolver = (lambda ref: PNG_1PX) if i % 2 else (lambda ref: None)
        result = render_report(report, "html", asset_resolver=resolver)
        doc = result.content.decode("utf-8")
        srcs_inline = all(
            src.startswith("data:image/") for src in _html_srcs(doc)
        )
        if (
            result.media_type == "text/html"
            and "http://" not in doc
            and "https://" not in doc
            and srcs_inline
            and all("placeholder" in warning for warning in result.warnings)
        ):
            html_ok += 1

    ok = identity_ok == 200 and sequences_ok == 1000 and html_ok == 20
    announce(
        "report-integrity",
        ok,
        f"round trips {identity_ok}/200 lossless, edit sequences {sequences_ok}/1000 closed "
        f"({applied} applied, {rejected} illegal rejected), html self-contained {html_ok}/20",
    )


def _html_srcs(doc):
    import re

    return re.findall(r'src="([^"]+)"', doc)


# ---------------------------------------------------------------------------
# HTTP interface: every route and declared error status, over one corpus.
# ---------------------------------------------------------------------------


def test_api_contract(announce, tmp_path):
    root = tmp_path / "data"
    root.mkdir()
    catalog, fmaps = build_corpus(root)
    index = load_index(catalog, root / "embeddings.emb")

    checks = []

    def check(name, passed):
        checks.append((name, bool(passed)))

    def is_error(resp, status, code):
        body = resp.json()
        return resp.status_code == status and set(body) == {"code", "message"} and body["code"] == code

    with TestClient(create_app(ServiceConfig(data_root=root))) as client:
        check(
            "status",
            client.get("/api/v1/status").json()
            == {
                "generation": index.generation,
                "indexed_images": 12,
                "catalog_images": 12,
                "hotels": 4,
                "embedding_dim": 8,
            },
        )

        blob = tensor_to_bytes(fmaps[3])
        created = client.post("/api/v1/queries", files={"tensor": ("q.sfm", blob)})
        qid = created.json().get("query_id") if created.status_code == 201 else ""
        check("create-query-201", created.status_code == 201 and len(qid) == 12)

        results_url = f"/api/v1/queries/{qid}/results"
        body = client.get(results_url, params={"k": 6}).json()
        embedding = l2_normalize(gap_pool(fmaps[3])).values
        expected = search(index, QuerySpec(embedding=embedding, k=6)).to_json_obj()
        top = body["results"][0]
        check(
            "results-match-library",
            body == expected and top["image_id"] == 3 and abs(top["score"] - 1.0) <= 1e-6,
        )
        check(
            "results-stable",
            client.get(results_url).content == client.get(results_url).content,
        )

        filtered = client.post(
            "/api/v1/queries",
            files={"tensor": ("q.sfm", blob)},
            data={"filters": json.dumps({"chain_id": 1})},
        ).json()["query_id"]
        got_ids = {
            entry["image_id"]
            for entry in client.get(f"/api/v1/queries/{filtered}/results", params={"k": 12}).json()["results"]
        }
        check("filtered-query", got_ids == {1, 3, 5, 7, 9, 11})

        explain_url = f"/api/v1/queries/{qid}/explain/5"
        png = client.get(explain_url)
        pixels = np.asarray(Image.open(io.BytesIO(png.content)).convert("RGB"))
        check(
            "heatmap-png",
            png.status_code == 200
            and png.headers["content-type"] == "image/png"
            and pixels.shape == (224, 448, 3),
        )
        check("png-deterministic", client.get(explain_url).content == png.content)

        hm = client.get(explain_url, params={"format": "json"}).json()
        pair = importance_maps(fmaps[3], fmaps[5])
        check(
            "heatmap-json",
            abs(hm["total_similarity"] - pair.total_similarity) <= 1e-12
            and np.allclose(hm["query"], pair.query_importance, atol=1e-12)
            and np.allclose(hm["result"], pair.result_importance, atol=1e-12),
        )

        corr = client.get(explain_url, params={"mode": "correspondence", "format": "json"}).json()
        cmap = pca_correspondence(fmaps[3], fmaps[5])
        check(
            "correspondence-json",
            np.allclose(corr["eigenvalues"], cmap.eigenvalues, atol=1e-12)
            and abs(corr["explained_fraction"] - cmap.explained_fraction) <= 1e-12
            and np.asarray(corr["query_rgb"]).shape == (4, 4, 3),
        )

        gallery = client.get("/api/v1/hotels/2/images").json()
        check(
            "hotel-gallery",
            gallery["hotel_id"] == 2 and [r["image_id"] for r in gallery["images"]] == [2, 6, 10],
        )

        payload = {
            "query_ref": "queries/q.sfm",
            "criteria": {"k": 6},
            "notes": "triage",
            "entries": [
                {
                    "image_id": r["image_id"],
                    "hotel_id": r["hotel_id"],
                    "similarity": r["score"],
                    "explanation_refs": [],
                }
                for r in body["results"][:3]
            ],
        }
        made = client.post("/api/v1/reports", json=payload)
        rid = made.json().get("report_id") if made.status_code == 201 else ""
        fetched = client.get(f"/api/v1/reports/{rid}").json()
        check("report-create-get", made.status_code == 201 and fetched == made.json())

        first_two = [entry["image_id"] for entry in fetched["entries"][:2]]
        moved = client.patch(
            f"/api/v1/reports/{rid}",
            json={"op": "move", "image_id": first_two[0], "position": 1},
        )
        check(
            "report-patch-move",
            moved.status_code == 200
            and [entry["image_id"] for entry in moved.json()["entries"][:2]]
            == [first_two[1], first_two[0]]
            and moved.json()["updated_at"] > fetched["updated_at"],
        )

        html = client.get(f"/api/v1/reports/{rid}", params={"format": "html"})
        doc = html.content.decode("utf-8")
        check(
            "report-html-self-contained",
            html.headers["content-type"].startswith("text/html")
            and "http://" not in doc
            and "https://" not in doc
            and "data:image/" in doc,
        )

        check(
            "409-conflicting-edit",
            is_error(
                client.patch(
                    f"/api/v1/reports/{rid}",
                    json={
                        "op": "add",
                        "position": 0,
                        "entry": {"image_id": first_two[0], "hotel_id": 1, "similarity": 0.1},
                    },
                ),
                409,
                "conflict",
            ),
        )
        check(
            "400-malformed-edit",
            is_error(client.patch(f"/api/v1/reports/{rid}", json={"op": "explode"}), 400, "bad_request"),
        )
        check("404-unknown-report", is_error(client.get("/api/v1/reports/absent-id"), 404, "not_found"))

        check(
            "400-corrupt-tensor",
            is_error(
                client.post("/api/v1/queries", files={"tensor": ("q.sfm", b"NOPE" + b"\x00" * 40)}),
                400,
                "bad_format",
            ),
        )
        check(
            "400-bad-filters",
            is_error(
                client.post(
                    "/api/v1/queries",
                    files={"tensor": ("q.sfm", blob)},
                    data={"filters": json.dumps({"radius": 4})},
                ),
                400,
                "bad_request",
            ),
        )
        check(
            "400-bad-k",
            is_error(client.get(results_url, params={"k": 0}), 400, "bad_request"),
        )
        check(
            "404-unknown-query",
            is_error(client.get("/api/v1/queries/abcdef123456/results"), 404, "not_found"),
        )
        check(
            "404-missing-tensor",
            is_error(client.get(f"/api/v1/queries/{qid}/explain/777"), 404, "not_found"),
        )
        check(
            "409-shape-conflict",
            is_error(client.get(f"/api/v1/queries/{qid}/explain/99"), 409, "shape_conflict"),
        )
        check(
            "422-fully-masked",
            is_error(
                client.post(
                    "/api/v1/queries",
                    files={"tensor": ("q.sfm", blob)},
                    data={"mask": FULL_MASK},
                ),
                422,
                "fully_masked",
            ),
        )
        check(
            "502-no-extractor",
            is_error(
                client.post("/api/v1/queries", files={"image": ("p.jpg", b"\xff\xd8jpg")}),
                502,
                "extractor_unavailable",
            ),
        )

    small = ServiceConfig(data_root=tmp_path / "small", max_upload_bytes=100)
    with TestClient(create_app(small)) as small_client:
        check(
            "413-oversize",
            is_error(
                small_client.post("/api/v1/queries", files={"tensor": ("q.sfm", blob)}),
                413,
                "payload_too_large",
            ),
        )

    dead = ServiceConfig(
        data_root=tmp_path / "dead",
        extractor_url="http://127.0.0.1:9/extract",
        extractor_timeout=0.5,
    )
    with TestClient(create_app(dead)) as dead_client:
        check(
            "502-unreachable-extractor",
            is_error(
                dead_client.post("/api/v1/queries", files={"image": ("p.jpg", b"\xff\xd8jpg")}),
                502,
                "extractor_unavailable",
            ),
        )

    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    server.stub_status = 200
    server.stub_payload = tensor_to_bytes(fmaps[3])
    threading.Thread(target=server.serve_forever, daemon=True).start()
    try:
        url = f"http://127.0.0.1:{server.server_address[1]}/extract"
        with TestClient(create_app(ServiceConfig(data_root=root, extractor_url=url))) as stub_client:
            made = stub_client.post("/api/v1/queries", files={"image": ("p.jpg", b"\xff\xd8jpg")})
            image_qid = made.json().get("query_id") if made.status_code == 201 else ""
            top = (
                stub_client.get(f"/api/v1/queries/{image_qid}/results", params={"k": 3}).json()["results"][0]
                if image_qid
                else {}
            )
            check(
                "extractor-end-to-end",
                made.status_code == 201
                and top.get("image_id") == 3
                and abs(top.get("score", 0.0) - 1.0) <= 1e-6,
            )
    finally:
        server.shutdown()
        server.server_close()

    failures = [name for name, passed in checks if not passed]
    ok = not failures
    announce(
        "api-contract",
        ok,
        f"{len(checks) - len(failures)}/{len(checks)} endpoint checks"
        + (f", failed: {failures}" if failures else ""),
    )
