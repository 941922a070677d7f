"""Linear stand-in for the deep backbone, with exact analytic gradients.

The embedder maps a raw descriptor x to normalize(W x). Keeping it linear
makes the full chain rule through normalization tractable by hand, so the
training loop can be checked against finite differences to tight
tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from matchscope.errors import ValidationError
from matchscope.metric.data import LabeledBatch
from matchscope.metric.losses import DEFAULT_MARGIN, LossReport, matrix_loss, pairwise_sq_distances

_NORM_FLOOR = 1e-12


@dataclass
class ToyEmbedder:
    """d x D linear map followed by L2 normalization."""

    weight: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weight, dtype=np.float64)
        if w.ndim != 2:
            raise ValidationError(f"weight must be d x D, got shape {w.shape}")
        if w.shape[0] < 2:
            raise ValidationError("embedding dimension d must be >= 2")
        if not np.all(np.isfinite(w)):
            raise ValidationError("weight contains non-finite entries")
        self.weight = w

    @property
    def embed_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def input_dim(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def init_random(cls, seed: int, embed_dim: int, input_dim: int) -> "ToyEmbedder":
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(input_dim)
        return cls(weight=rng.normal(0.0, scale, (embed_dim, input_dim)))

    def _project(self, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        z = inputs @ self.weight.T
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        if np.any(norms <= _NORM_FLOOR):
            raise ValidationError("embedder collapsed a sample to the zero vector")
        return z / norms, norms

    def embed(self, inputs: np.ndarray) -> np.ndarray:
        """L2-normalized embeddings, one row per input sample."""
        inputs = np.asarray(inputs, dtype=np.float64)
        return self._project(inputs)[0]


def train_step(
    model: ToyEmbedder,
    batch: LabeledBatch,
    loss_kind: str,
    margin: float = DEFAULT_MARGIN,
    learning_rate: float = 1e-2,
) -> tuple[ToyEmbedder, LossReport]:
    """One deterministic gradient step on the batch.

    The distance-matrix gradient from the loss is chained through
    d2 = 2 - 2 e_i.e_j, the normalization Jacobian (I - e e^T)/|z|, and the
    linear map. Returns the updated embedder and a report whose ``grad`` is
    the weight gradient. A zero loss leaves the weights bitwise unchanged.
    """
    if learning_rate <= 0:
        raise ValidationError(f"learning_rate must be positive, got {learning_rate}")
    inputs = batch.inputs
    embeddings, norms = model._project(inputs)
    dist = pairwise_sq_distances(embeddings)
    report = matrix_loss(dist, batch.labels, loss_kind, margin)

    # dL/dE via M = 2 - 2 E E^T: the radial parts this formula picks up
    # relative to |e_i - e_j|^2 are annihilated by the normalization Jacobian.
    sym = report.grad + report.grad.T
    d_emb = -2.0 * (sym @ embeddings)
    radial = (d_emb * embeddings).sum(axis=1, keepdims=True)
    d_z = (d_emb - radial * embeddings) / norms
    d_weight = d_z.T @ inputs

    if not np.all(np.isfinite(d_weight)):
        raise ValidationError("non-finite gradient; check inputs and margin")

    updated = ToyEmbedder(weight=model.weight - learning_rate * d_weight)
    return updated, LossReport(
        value=report.value,
        active_triplet_count=report.active_triplet_count,
        grad=d_weight,
        skipped_anchors=report.skipped_anchors,
    )
