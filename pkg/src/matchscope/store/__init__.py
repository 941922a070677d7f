"""Persistent, bit-exact storage: spatial feature tensors and the image catalog."""

from matchscope.store.catalog import (
    Catalog,
    CatalogStats,
    ImageRecord,
    IngestResult,
    load_catalog,
)
from matchscope.store.tensor_io import (
    SFM_MAGIC,
    SpatialFeatureMap,
    read_spatial_tensor,
    tensor_from_bytes,
    tensor_to_bytes,
    write_spatial_tensor,
)

__all__ = [
    "Catalog",
    "CatalogStats",
    "ImageRecord",
    "IngestResult",
    "load_catalog",
    "SFM_MAGIC",
    "SpatialFeatureMap",
    "read_spatial_tensor",
    "tensor_from_bytes",
    "tensor_to_bytes",
    "write_spatial_tensor",
]
