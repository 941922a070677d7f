"""Pairwise match explanations over spatial feature maps.

Two views of why a query matched a result:

* importance maps: the pooled dot product decomposed into one additive
  contribution per grid cell, for each image, so the two grids each sum to
  the pair's total similarity;
* correspondence coloring: principal components of the pooled-together cell
  descriptors of both images, quantized to RGB, so similarly colored cells
  have provably close descriptors.

Plus deterministic PNG rendering of both.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from matchscope.errors import FullyMaskedError, ValidationError
from matchscope.features import CellWeights
from matchscope.store.tensor_io import SpatialFeatureMap

MODE_HEATMAP = "heatmap"
MODE_CORRESPONDENCE = "correspondence"
EXPLAIN_MODES = (MODE_HEATMAP, MODE_CORRESPONDENCE)

_SUM_TOL = 1e-5
# Gram eigenvalues below this fraction of the largest count as zero variance.
_DEGENERATE_REL = 1e-12


@dataclass(frozen=True)
class CellSimilarityMatrix:
    """All pairwise cell dot products; entry (i, j) = query cell i x result cell j."""

    matrix: np.ndarray
    height: int
    width: int

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        cells = self.height * self.width
        if m.shape != (cells, cells):
            raise ValidationError(
                f"cell similarity matrix shape {m.shape} does not match grid "
                f"{self.height}x{self.width}"
            )
        if not np.all(np.isfinite(m)):
            raise ValidationError("cell similarity matrix has non-finite values")
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True)
class HeatmapPair:
    """Per-cell importance grids; each sums to total_similarity."""

    query_importance: np.ndarray
    result_importance: np.ndarray
    total_similarity: float
    normalizer: float

    def __post_init__(self) -> None:
        q = np.asarray(self.query_importance, dtype=np.float64)
        r = np.asarray(self.result_importance, dtype=np.float64)
        if q.ndim != 2 or q.shape != r.shape:
            raise ValidationError(f"importance grids disagree: {q.shape} vs {r.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(r))):
            raise ValidationError("importance grids have non-finite values")
        # Cancellation-aware scale: relative to the total when it dominates,
        # to the summed magnitudes when the total is near zero.
        scale = max(
            abs(self.total_similarity),
            float(np.abs(q).sum()),
            float(np.abs(r).sum()),
            1e-12,
        )
        for name, grid in (("query", q), ("result", r)):
            if abs(grid.sum() - self.total_similarity) > _SUM_TOL * scale:
                raise ValidationError(
                    f"{name} importances sum to {grid.sum()}, expected "
                    f"{self.total_similarity}"
                )
        object.__setattr__(self, "query_importance", q)
        object.__setattr__(self, "result_importance", r)

    def to_json_obj(self) -> dict:
        return {
            "query": self.query_importance.tolist(),
            "result": self.result_importance.tolist(),
            "total_similarity": self.total_similarity,
        }


@dataclass(frozen=True)
class CorrespondenceMap:
    """Top-3 principal components of the joint cell stack, as RGB bytes."""

    query_rgb: np.ndarray
    result_rgb: np.ndarray
    eigenvalues: tuple[float, float, float]
    explained_fraction: float

    def __post_init__(self) -> None:
        q = np.asarray(self.query_rgb, dtype=np.uint8)
        r = np.asarray(self.result_rgb, dtype=np.uint8)
        if q.ndim != 3 or q.shape[2] != 3 or q.shape != r.shape:
            raise ValidationError("correspondence grids must be matching H x W x 3 bytes")
        ev = tuple(float(v) for v in self.eigenvalues)
        if len(ev) != 3:
            raise ValidationError("exactly 3 component variances expected")
        if any(ev[i] < ev[i + 1] for i in range(2)):
            raise ValidationError(f"component variances must be non-increasing: {ev}")
        if any(v < -1e-9 for v in ev):
            raise ValidationError(f"component variances must be non-negative: {ev}")
        if not (0.0 <= self.explained_fraction <= 1.0):
            raise ValidationError(
                f"explained_fraction {self.explained_fraction} outside [0, 1]"
            )
        object.__setattr__(self, "query_rgb", q)
        object.__setattr__(self, "result_rgb", r)
        object.__setattr__(self, "eigenvalues", ev)

    def to_json_obj(self) -> dict:
        return {
            "eigenvalues": list(self.eigenvalues),
            "explained_fraction": self.explained_fraction,
            "query_rgb": self.query_rgb.tolist(),
            "result_rgb": self.result_rgb.tolist(),
        }


def _check_same_grid(fq: SpatialFeatureMap, fr: SpatialFeatureMap) -> None:
    if (fq.height, fq.width, fq.channels) != (fr.height, fr.width, fr.channels):
        raise ValidationError(
            f"tensor shapes differ: {fq.height}x{fq.width}x{fq.channels} vs "
            f"{fr.height}x{fr.width}x{fr.channels}"
        )


def cell_similarity_matrix(fq: SpatialFeatureMap, fr: SpatialFeatureMap) -> CellSimilarityMatrix:
    """Dot product of every query cell against every result cell."""
    _check_same_grid(fq, fr)
    flat_q = fq.cells().astype(np.float64)
    flat_r = fr.cells().astype(np.float64)
    return CellSimilarityMatrix(matrix=flat_q @ flat_r.T, height=fq.height, width=fq.width)


def _pooled(flat: np.ndarray, weights: CellWeights | None, shape: tuple[int, int]):
    """Normalized cell weights and the weighted-mean descriptor."""
    if weights is None:
        grid = np.full(shape, 1.0, dtype=np.float64)
    else:
        grid = weights.grid
        if grid.shape != shape:
            raise ValidationError(
                f"weights grid {grid.shape} does not match tensor grid {shape}"
            )
    w = grid.reshape(-1)
    total = w.sum()
    if total <= 0.0:
        raise FullyMaskedError("fully masked image: every pooling cell has zero weight")
    w_norm = w / total
    return w_norm, flat.T @ w_norm


def importance_maps(
    fq: SpatialFeatureMap,
    fr: SpatialFeatureMap,
    normalize: bool = True,
    query_weights: CellWeights | None = None,
    result_weights: CellWeights | None = None,
) -> HeatmapPair:
    """Split the pooled similarity into one contribution per cell, per image.

    Query cell i contributes w_i * (f_qi . pooled_r) with w summing to 1, and
    symmetrically for result cells, so both grids sum to pooled_q . pooled_r
    exactly (up to accumulation error). With uniform weights this reduces to
    the double sum over all cell pairs divided by (H*W)^2. ``normalize``
    divides everything by the product of the pooled norms, making the total
    equal the retrieval cosine similarity.
    """
    _check_same_grid(fq, fr)
    shape = (fq.height, fq.width)
    flat_q = fq.cells().astype(np.float64)
    flat_r = fr.cells().astype(np.float64)
    wq, pooled_q = _pooled(flat_q, query_weights, shape)
    wr, pooled_r = _pooled(flat_r, result_weights, shape)

    query_cells = wq * (flat_q @ pooled_r)
    result_cells = wr * (flat_r @ pooled_q)
    total = float(pooled_q @ pooled_r)
    normalizer = float(np.linalg.norm(pooled_q)) * float(np.linalg.norm(pooled_r))

    if normalize:
        if normalizer <= 0.0:
            raise ValidationError("cannot normalize: a pooled vector has zero norm")
        query_cells = query_cells / normalizer
        result_cells = result_cells / normalizer
        total = total / normalizer

    return HeatmapPair(
        query_importance=query_cells.reshape(shape),
        result_importance=result_cells.reshape(shape),
        total_similarity=total,
        normalizer=normalizer,
    )


def joint_principal_components(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-3 principal axes of a small row stack, solved in stack space.

    Works on the n x n Gram matrix of the centered rows instead of the
    C x C covariance, which is exact and cheap because n (the stacked cell
    count) is far below the descriptor length C. Returns
    (scatter_eigenvalues, directions, projections): the three largest
    eigenvalues of the centered scatter matrix clipped at zero, the
    matching unit directions as a C x 3 matrix, and the n x 3 centered
    projections. Each direction's sign is fixed so its largest-magnitude
    projection is positive; a component with (relatively) zero variance
    keeps an all-zero direction and projection column.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 4:
        raise ValidationError("need a stack of at least 4 rows for 3 components")
    centered = rows - rows.mean(axis=0)
    gram = centered @ centered.T
    gram = (gram + gram.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(gram)
    order = np.argsort(eigvals, kind="stable")[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]

    top = np.clip(eigvals[:3], 0.0, None)
    largest = float(top[0])
    directions = np.zeros((rows.shape[1], 3), dtype=np.float64)
    projections = np.zeros((rows.shape[0], 3), dtype=np.float64)
    for k in range(3):
        lam = float(top[k])
        if largest <= 0.0 or lam <= _DEGENERATE_REL * largest:
            continue
        direction = centered.T @ eigvecs[:, k] / np.sqrt(lam)
        proj = centered @ direction
        peak = int(np.argmax(np.abs(proj)))
        if proj[peak] < 0.0:
            direction = -direction
            proj = -proj
        directions[:, k] = direction
        projections[:, k] = proj
    return top, directions, projections


def pca_correspondence(fq: SpatialFeatureMap, fr: SpatialFeatureMap) -> CorrespondenceMap:
    """Color both grids by the top-3 principal components of their cells.

    The 2*H*W cell descriptors of the pair are stacked and mean-centered;
    principal directions come from :func:`joint_principal_components`. The
    projections are min-max scaled to bytes jointly over both images
    (components 1, 2, 3 to R, G, B). A component with no variance renders
    as 128.
    """
    _check_same_grid(fq, fr)
    cells = fq.cell_count
    if 2 * cells < 4:
        raise ValidationError("need at least 4 stacked cells for 3 components")

    stack = np.vstack([fq.cells(), fr.cells()]).astype(np.float64)
    centered = stack - stack.mean(axis=0)
    total_scatter = float((centered * centered).sum())
    top, directions, projections = joint_principal_components(stack)

    colors = np.full((2 * cells, 3), 128, dtype=np.uint8)
    for k in range(3):
        if not directions[:, k].any():
            continue
        proj = projections[:, k]
        lo, hi = float(proj.min()), float(proj.max())
        if hi <= lo:
            continue
        colors[:, k] = np.rint((proj - lo) / (hi - lo) * 255.0).astype(np.uint8)

    n_rows = 2 * cells
    variances = tuple(float(v) / (n_rows - 1) for v in top)
    if total_scatter > 0.0:
        fraction = min(1.0, float(top.sum()) / total_scatter)
    else:
        fraction = 1.0

    shape = (fq.height, fq.width, 3)
    return CorrespondenceMap(
        query_rgb=colors[:cells].reshape(shape),
        result_rgb=colors[cells:].reshape(shape),
        eigenvalues=variances,
        explained_fraction=fraction,
    )


def _bilinear_upsample(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = grid.shape
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = grid[np.ix_(y0, x0)] * (1.0 - fx) + grid[np.ix_(y0, x1)] * fx
    bottom = grid[np.ix_(y1, x0)] * (1.0 - fx) + grid[np.ix_(y1, x1)] * fx
    return top * (1.0 - fy) + bottom * fy


def _nearest_indices(n_src: int, n_out: int) -> np.ndarray:
    centers = (np.arange(n_out) + 0.5) * (n_src / n_out)
    return np.minimum(centers.astype(np.intp), n_src - 1)


def _heatmap_rgb(grid: np.ndarray, out_h: int, out_w: int, value_range) -> np.ndarray:
    lo, hi = value_range
    if hi > lo:
        t = np.clip((grid - lo) / (hi - lo), 0.0, 1.0)
    else:
        t = np.full(grid.shape, 0.5)
    t = _bilinear_upsample(t, out_h, out_w)
    rgb = np.empty((out_h, out_w, 3), dtype=np.uint8)
    rgb[:, :, 0] = np.rint(255.0 * (1.0 - t)).astype(np.uint8)
    rgb[:, :, 1] = 0
    rgb[:, :, 2] = np.rint(255.0 * t).astype(np.uint8)
    return rgb


def _correspondence_rgb(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    rows = _nearest_indices(grid.shape[0], out_h)
    cols = _nearest_indices(grid.shape[1], out_w)
    return grid[np.ix_(rows, cols)]


def _encode_png(rgb: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def _target_shape(grid_h: int, grid_w: int, target) -> tuple[int, int]:
    if isinstance(target, int):
        out_h, out_w = target, target
    else:
        out_h, out_w = target
    if out_h < grid_h or out_w < grid_w:
        raise ValidationError(
            f"target {out_h}x{out_w} smaller than source grid {grid_h}x{grid_w}"
        )
    return out_h, out_w


def render_overlay(grid: np.ndarray, target, mode: str, value_range=None) -> bytes:
    """Render one grid to PNG bytes at the target pixel size.

    Heatmap mode expects H x W scalars; values map red (low) to blue (high)
    over ``value_range`` (grid min/max when omitted) with bilinear
    upsampling. Correspondence mode expects H x W x 3 bytes and upsamples
    nearest-neighbor so cells stay flat-colored.
    """
    arr = np.asarray(grid)
    if arr.size == 0:
        raise ValidationError("cannot render an empty grid")
    if mode == MODE_HEATMAP:
        if arr.ndim != 2:
            raise ValidationError(f"heatmap grid must be 2-D, got shape {arr.shape}")
        arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValidationError("heatmap grid has non-finite values")
        out_h, out_w = _target_shape(arr.shape[0], arr.shape[1], target)
        rng = value_range if value_range is not None else (float(arr.min()), float(arr.max()))
        return _encode_png(_heatmap_rgb(arr, out_h, out_w, rng))
    if mode == MODE_CORRESPONDENCE:
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValidationError(f"correspondence grid must be H x W x 3, got {arr.shape}")
        out_h, out_w = _target_shape(arr.shape[0], arr.shape[1], target)
        return _encode_png(_correspondence_rgb(arr.astype(np.uint8), out_h, out_w))
    raise ValidationError(f"unknown render mode {mode!r}; expected one of {EXPLAIN_MODES}")


def render_heatmap_pair(pair: HeatmapPair, target) -> bytes:
    """Side-by-side PNG of both importance grids, query left.

    One shared min-max range across the two grids keeps their colors
    comparable: equal importances get equal colors.
    """
    q, r = pair.query_importance, pair.result_importance
    lo = min(float(q.min()), float(r.min()))
    hi = max(float(q.max()), float(r.max()))
    out_h, out_w = _target_shape(q.shape[0], q.shape[1], target)
    left = _heatmap_rgb(q, out_h, out_w, (lo, hi))
    right = _heatmap_rgb(r, out_h, out_w, (lo, hi))
    return _encode_png(np.concatenate([left, right], axis=1))


def render_correspondence_pair(cmap: CorrespondenceMap, target) -> bytes:
    """Side-by-side PNG of both correspondence colorings, query left."""
    q, r = cmap.query_rgb, cmap.result_rgb
    out_h, out_w = _target_shape(q.shape[0], q.shape[1], target)
    left = _correspondence_rgb(q, out_h, out_w)
    right = _correspondence_rgb(r, out_h, out_w)
    return _encode_png(np.concatenate([left, right], axis=1))
