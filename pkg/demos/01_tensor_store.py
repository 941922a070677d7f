"""
Binary tensor files, the image catalog, and the embedding table
================================================================

A walk through the three storage pieces: spatial feature tensors on disk,
JSONL catalog records, and the packed embedding table an index loads from.
"""

from pathlib import Path

import numpy as np

from matchscope.errors import FormatError
from matchscope.search import load_index, read_embedding_table, write_embedding_table
from matchscope.store import (
    Catalog,
    ImageRecord,
    SpatialFeatureMap,
    read_spatial_tensor,
    tensor_from_bytes,
    write_spatial_tensor,
)

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

# A spatial feature tensor is an H x W x C float32 grid, the cell layout a
# convolutional backbone leaves behind before pooling.
rng = np.random.default_rng(11)
fmap = SpatialFeatureMap(
    values=rng.normal(size=(7, 7, 32)).astype(np.float32), image_id=401
)
tensor_path = out / "401.sfm"
written = write_spatial_tensor(fmap, tensor_path)
print(f"wrote {tensor_path.name}: {written} bytes "
      f"(16 header + {7 * 7 * 32} floats * 4)")

back = read_spatial_tensor(tensor_path, image_id=401)
print("round trip bit-exact:", back.values.tobytes() == fmap.values.tobytes())

# Corruption is refused loudly, never silently repaired.
blob = bytearray(tensor_path.read_bytes())
blob[:4] = b"JUNK"
try:
    tensor_from_bytes(bytes(blob))
except FormatError as err:
    print("corrupt magic rejected:", err)

# Catalog records travel as JSONL, one image per line.
catalog = Catalog()
for image_id, hotel_id in [(401, 9), (402, 9), (403, 14)]:
    catalog.insert(
        ImageRecord(
            image_id=image_id,
            hotel_id=hotel_id,
            chain_id=2,
            latitude=48.1 + 0.01 * image_id,
            longitude=11.5,
            source="travel_site",
            captured_at="2024-05-01T12:00:00Z",
            terms=("lobby",) if image_id % 2 else ("pool",),
        )
    )
lines = list(catalog.dump_lines())
print(f"catalog dumps {len(lines)} lines; first:", lines[0][:60], "...")

# Ingest skips bad lines and reports them by line number.
reloaded = Catalog()
result = reloaded.ingest_lines(lines + ['{"image_id": "broken"'])
print(f"reingest: {result.inserted} inserted, "
      f"rejected lines {[line for line, _ in result.rejected]}")
print("stats:", reloaded.stats())

# Embeddings are packed into one table file: ids plus float32 rows.
ids = np.array([401, 402, 403], dtype=np.uint64)
rows = rng.normal(size=(3, 32))
rows /= np.linalg.norm(rows, axis=1, keepdims=True)
table_path = out / "demo.emb"
write_embedding_table(table_path, ids, rows.astype(np.float32))
got_ids, got_rows = read_embedding_table(table_path)
print(f"table reload: {len(got_ids)} rows, dim {got_rows.shape[1]}")

# load_index pairs the table with the catalog and stamps a generation id
# derived from the content, so stale clients are detectable.
index = load_index(reloaded, table_path)
print("index generation:", index.generation)
