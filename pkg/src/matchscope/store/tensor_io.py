"""Binary storage for spatial feature tensors (the SFM1 file format).

An SFM1 file is:

    bytes 0..3    ASCII magic ``SFM1``
    bytes 4..15   H, W, C as little-endian unsigned 32-bit integers
    bytes 16..    H*W*C little-endian 32-bit floats, row-major with the
                  channel axis fastest-varying

The payload layout makes the "H*W local descriptors of length C" view a
contiguous reshape, which the pooling and explanation code relies on.
Write then read must reproduce the tensor bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from matchscope.errors import FormatError, StorageError, ValidationError

SFM_MAGIC = b"SFM1"
_HEADER = struct.Struct("<4sIII")

# Refuse to allocate for absurd declared shapes (corrupt headers).
_MAX_CELLS = 1 << 24
_MAX_CHANNELS = 1 << 20


@dataclass
class SpatialFeatureMap:
    """H x W grid of C-dimensional local descriptors for one image.

    ``values`` is a float32 array of shape (H, W, C); every entry must be
    finite. ``image_id`` identifies the image in the catalog (0 when the
    tensor is a standalone query).
    """

    values: np.ndarray
    image_id: int = 0

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 3:
            raise ValidationError(
                f"spatial feature map must be 3-dimensional (H, W, C), got shape {arr.shape}"
            )
        h, w, c = arr.shape
        if h < 1 or w < 1 or c < 1:
            raise ValidationError(f"all tensor dimensions must be >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("spatial feature map contains non-finite values")
        if not (0 <= int(self.image_id) < 2**64):
            raise ValidationError(f"image_id {self.image_id} outside unsigned 64-bit range")
        self.values = arr
        self.image_id = int(self.image_id)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @property
    def cell_count(self) -> int:
        return self.values.shape[0] * self.values.shape[1]

    def cells(self) -> np.ndarray:
        """The (H*W, C) view of the grid, row-major cell order."""
        return self.values.reshape(self.cell_count, self.channels)


def tensor_to_bytes(fmap: SpatialFeatureMap) -> bytes:
    """Serialize to SFM1 bytes. Non-finite values are rejected up front."""
    arr = fmap.values
    if not np.all(np.isfinite(arr)):
        raise ValidationError("refusing to serialize tensor with non-finite values")
    h, w, c = arr.shape
    header = _HEADER.pack(SFM_MAGIC, h, w, c)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def tensor_from_bytes(blob: bytes, image_id: int = 0, source: str = "tensor") -> SpatialFeatureMap:
    """Parse SFM1 bytes; ``source`` names the origin in error messages.

    Raises FormatError on a bad magic, a payload whose size disagrees with
    the declared shape, or non-finite stored values.
    """
    if len(blob) < _HEADER.size:
        raise FormatError(f"{source}: shorter than the SFM1 header")
    magic, h, w, c = _HEADER.unpack_from(blob)
    if magic != SFM_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {SFM_MAGIC!r}")
    if h < 1 or w < 1 or c < 1:
        raise FormatError(f"{source}: declared shape ({h}, {w}, {c}) has a zero dimension")
    if h * w > _MAX_CELLS or c > _MAX_CHANNELS:
        raise FormatError(f"{source}: declared shape ({h}, {w}, {c}) is implausibly large")

    expected = h * w * c * 4
    actual = len(blob) - _HEADER.size
    if actual != expected:
        raise FormatError(
            f"{source}: payload holds {actual} bytes but shape ({h}, {w}, {c}) "
            f"declares {expected}"
        )
    arr = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(h, w, c)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{source}: stored tensor contains non-finite values")
    return SpatialFeatureMap(values=arr.copy(), image_id=image_id)


def write_spatial_tensor(fmap: SpatialFeatureMap, destination: str | Path) -> int:
    """Write ``fmap`` to ``destination`` in SFM1 format; returns bytes written.

    Non-finite values are rejected before any byte is written, so a failed
    call never leaves a partial file behind.
    """
    blob = tensor_to_bytes(fmap)
    try:
        with open(destination, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise StorageError(f"cannot write tensor to {destination}: {exc}") from exc
    return len(blob)


def read_spatial_tensor(source: str | Path, image_id: int = 0) -> SpatialFeatureMap:
    """Read an SFM1 file back into a SpatialFeatureMap."""
    try:
        with open(source, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise StorageError(f"cannot read tensor from {source}: {exc}") from exc
    return tensor_from_bytes(blob, image_id=image_id, source=str(source))
