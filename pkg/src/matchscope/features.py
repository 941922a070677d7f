"""Masked global average pooling and similarity over spatial feature maps.

A mask is a set of polygons in normalized image coordinates. It never
touches pixels here; it only down-weights the pooling cells whose image
patch it covers, which keeps the pooled-similarity decomposition used by
the explanation code exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from matchscope.errors import FullyMaskedError, ValidationError
from matchscope.store.tensor_io import SpatialFeatureMap

NORM_EPSILON = 1e-12
DEFAULT_SUPERSAMPLE = 16


@dataclass(frozen=True)
class MaskSpec:
    """Polygons over the unit square; a point inside any polygon is masked.

    Each polygon is a tuple of (x, y) vertices, x right and y down, both in
    [0, 1]. Inside-ness per polygon follows the even-odd rule.
    """

    polygons: tuple[tuple[tuple[float, float], ...], ...] = ()

    def __post_init__(self) -> None:
        for poly in self.polygons:
            if len(poly) < 3:
                raise ValidationError(f"polygon needs >= 3 vertices, got {len(poly)}")
            for x, y in poly:
                if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
                    raise ValidationError(f"vertex ({x}, {y}) outside the unit square")

    @classmethod
    def from_json(cls, text: str) -> "MaskSpec":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"mask is not valid JSON: {exc.msg}") from exc
        return cls.from_json_obj(obj)

    @classmethod
    def from_json_obj(cls, obj) -> "MaskSpec":
        if not isinstance(obj, dict) or "polygons" not in obj:
            raise ValidationError('mask JSON must be {"polygons": [...]}')
        polys = obj["polygons"]
        if not isinstance(polys, list):
            raise ValidationError("mask polygons must be a list")
        converted = []
        for poly in polys:
            try:
                converted.append(tuple((float(x), float(y)) for x, y in poly))
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"polygon {poly!r} is not a list of [x, y] pairs") from exc
        return cls(polygons=tuple(converted))

    def to_json_obj(self) -> dict:
        return {"polygons": [[[x, y] for x, y in poly] for poly in self.polygons]}

    def is_empty(self) -> bool:
        return not self.polygons


@dataclass(frozen=True)
class CellWeights:
    """Per-cell unmasked fraction, H x W floats in [0, 1]."""

    grid: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.grid, dtype=np.float64)
        if arr.ndim != 2:
            raise ValidationError(f"cell weights must be 2-D, got shape {arr.shape}")
        if arr.size == 0:
            raise ValidationError("cell weights grid is empty")
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise ValidationError("cell weights must lie in [0, 1]")
        object.__setattr__(self, "grid", arr)

    @classmethod
    def uniform(cls, height: int, width: int) -> "CellWeights":
        return cls(grid=np.ones((height, width), dtype=np.float64))


@dataclass
class Embedding:
    """Pooled C-dimensional descriptor; ``normalized`` marks unit length."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValidationError(f"embedding must be a non-empty vector, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("embedding contains non-finite values")
        if self.normalized and abs(np.linalg.norm(arr) - 1.0) > 1e-6:
            raise ValidationError("embedding flagged normalized but norm differs from 1")
        self.values = arr

    @property
    def dim(self) -> int:
        return self.values.size


def _points_in_polygon(px: np.ndarray, py: np.ndarray, polygon) -> np.ndarray:
    """Even-odd (crossing number) test, vectorized over sample points."""
    inside = np.zeros(px.shape, dtype=bool)
    verts = np.asarray(polygon, dtype=np.float64)
    x1, y1 = verts[:, 0], verts[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    for ax, ay, bx, by in zip(x1, y1, x2, y2):
        straddles = (ay > py) != (by > py)
        if not straddles.any():
            continue
        # Safe where straddles: by != ay there.
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = (bx - ax) * (py - ay) / (by - ay) + ax
        inside ^= straddles & (px < x_cross)
    return inside


def rasterize_mask_weights(
    mask: MaskSpec,
    grid: tuple[int, int],
    supersample: int = DEFAULT_SUPERSAMPLE,
) -> CellWeights:
    """Convert polygons to per-cell weights on an H x W pooling grid.

    The unit square splits into H x W equal patches. Each patch is probed at
    supersample^2 interior points; the weight is the fraction of probes not
    inside any polygon. Sampling error is bounded by 1/supersample.
    """
    height, width = grid
    if height < 1 or width < 1:
        raise ValidationError(f"grid dimensions must be >= 1, got {grid}")
    if supersample < 1:
        raise ValidationError(f"supersample must be >= 1, got {supersample}")
    if mask.is_empty():
        return CellWeights.uniform(height, width)

    s = supersample
    xs = (np.arange(width * s, dtype=np.float64) + 0.5) / (width * s)
    ys = (np.arange(height * s, dtype=np.float64) + 0.5) / (height * s)
    px, py = np.meshgrid(xs, ys)

    masked = np.zeros(px.shape, dtype=bool)
    for polygon in mask.polygons:
        masked |= _points_in_polygon(px, py, polygon)

    # Collapse each s x s probe block to its masked fraction.
    blocks = masked.reshape(height, s, width, s)
    masked_fraction = blocks.mean(axis=(1, 3))
    return CellWeights(grid=1.0 - masked_fraction)


def masked_gap_pool(fmap: SpatialFeatureMap, weights: CellWeights) -> Embedding:
    """Weighted global average pool: channel c gets sum_i w_i f_i[c] / sum_i w_i.

    Raises FullyMaskedError when every cell weight is zero.
    """
    grid = weights.grid
    if grid.shape != (fmap.height, fmap.width):
        raise ValidationError(
            f"weights grid {grid.shape} does not match tensor grid "
            f"({fmap.height}, {fmap.width})"
        )
    flat_w = grid.reshape(-1)
    total = flat_w.sum()
    if total <= 0.0:
        raise FullyMaskedError("fully masked query: every pooling cell has zero weight")
    cells = fmap.cells().astype(np.float64)
    pooled = (flat_w[:, None] * cells).sum(axis=0) / total
    return Embedding(values=pooled, normalized=False)


def gap_pool(fmap: SpatialFeatureMap) -> Embedding:
    """Unweighted global average pool (uniform weights)."""
    return masked_gap_pool(fmap, CellWeights.uniform(fmap.height, fmap.width))


def l2_normalize(embedding: Embedding) -> Embedding:
    """Scale to unit Euclidean length; near-zero vectors signal degenerate features."""
    norm = float(np.linalg.norm(embedding.values))
    if norm <= NORM_EPSILON:
        raise ValidationError("cannot normalize a near-zero embedding")
    return Embedding(values=embedding.values / norm, normalized=True)


def cosine_similarity(a: Embedding, b: Embedding) -> float:
    """Dot product of two normalized embeddings, in [-1, 1]."""
    if a.dim != b.dim:
        raise ValidationError(f"embedding dimensions differ: {a.dim} vs {b.dim}")
    if not (a.normalized and b.normalized):
        raise ValidationError("cosine_similarity requires normalized embeddings")
    return float(np.dot(a.values, b.values))
