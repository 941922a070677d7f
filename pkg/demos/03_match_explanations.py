"""
Explaining a match: importance heatmaps and color correspondence
================================================================

Two views of why a pair of images scored the way it did. The heatmap splits
the similarity score itself across grid cells, so the cells literally sum to
the score. The correspondence view projects both tensors onto shared
principal axes and paints matching structure in matching colors.
"""

from pathlib import Path

import numpy as np

from matchscope.explain import (
    importance_maps,
    joint_principal_components,
    pca_correspondence,
    render_correspondence_pair,
    render_heatmap_pair,
)
from matchscope.store import SpatialFeatureMap

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

# Build a pair that genuinely shares structure: both tensors carry the same
# strong channel pattern, planted in different corners.
rng = np.random.default_rng(31)
shared = rng.normal(size=64)
q_values = rng.normal(size=(7, 7, 64))
r_values = rng.normal(size=(7, 7, 64))
q_values[0:3, 0:3] += 4.0 * shared
r_values[4:7, 4:7] += 4.0 * shared
fq = SpatialFeatureMap(values=q_values.astype(np.float32), image_id=1)
fr = SpatialFeatureMap(values=r_values.astype(np.float32), image_id=2)

# Raw decomposition: each cell's share of the dot product of the pooled
# embeddings. Both grids sum to the same total by construction.
pair = importance_maps(fq, fr, normalize=False)
print(f"raw score {pair.total_similarity:.6f}")
print(f"  query grid sums to  {float(pair.query_importance.sum()):.6f}")
print(f"  result grid sums to {float(pair.result_importance.sum()):.6f}")

# Normalized, the total is exactly the retrieval cosine.
cos = importance_maps(fq, fr)
print(f"cosine {cos.total_similarity:.6f}")

# The planted block dominates its grid.
hot_q = np.unravel_index(np.argmax(cos.query_importance), (7, 7))
hot_r = np.unravel_index(np.argmax(cos.result_importance), (7, 7))
print(f"hottest query cell {tuple(map(int, hot_q))}, "
      f"hottest result cell {tuple(map(int, hot_r))}")

heatmap_png = out / "heatmap_pair.png"
heatmap_png.write_bytes(render_heatmap_pair(cos, target=(224, 224)))
print("wrote", heatmap_png)

# Correspondence: project every cell of both tensors onto the top three
# joint principal axes and quantize to RGB. Shared structure shares color.
cmap = pca_correspondence(fq, fr)
print(f"explained fraction {cmap.explained_fraction:.4f}, "
      f"eigenvalues {[round(v, 2) for v in cmap.eigenvalues]}")

corr_png = out / "correspondence_pair.png"
corr_png.write_bytes(render_correspondence_pair(cmap, target=(224, 224)))
print("wrote", corr_png)

# The same axes are available directly for custom projections.
cells = np.vstack([
    fq.values.reshape(-1, 64).astype(np.float64),
    fr.values.reshape(-1, 64).astype(np.float64),
])
eigenvalues, directions, projections = joint_principal_components(cells)
print("direction matrix:", directions.shape,
      "projections:", projections.shape)
