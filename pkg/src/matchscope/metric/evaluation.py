"""Recall@K over normalized embeddings."""

from __future__ import annotations

import numpy as np

from matchscope.errors import ValidationError


def evaluate_recall_at_k(
    index_embeddings: np.ndarray,
    index_labels,
    query_embeddings: np.ndarray,
    query_labels,
    k: int = 1,
    exclude_self: bool = False,
) -> float:
    """Fraction of queries whose top-K neighbors include a same-label item.

    Neighbors are ranked by dot product (cosine, for unit-norm rows), ties
    broken by index position. ``exclude_self`` removes the i-th index item
    for the i-th query and therefore requires the two sets to be the same
    size and aligned (query i == index i).
    """
    index_emb = np.asarray(index_embeddings, dtype=np.float64)
    query_emb = np.asarray(query_embeddings, dtype=np.float64)
    index_labels = np.asarray(index_labels)
    query_labels = np.asarray(query_labels)
    if index_emb.ndim != 2 or index_emb.shape[0] == 0:
        raise ValidationError("index is empty")
    if k < 1:
        raise ValidationError(f"K must be >= 1, got {k}")
    if query_emb.ndim != 2 or query_emb.shape[1] != index_emb.shape[1]:
        raise ValidationError("query and index embedding dimensions differ")
    if len(index_labels) != index_emb.shape[0] or len(query_labels) != query_emb.shape[0]:
        raise ValidationError("label counts do not match embedding counts")
    if exclude_self and query_emb.shape[0] != index_emb.shape[0]:
        raise ValidationError("exclude_self requires aligned query and index sets")

    scores = query_emb @ index_emb.T
    if exclude_self:
        np.fill_diagonal(scores, -np.inf)

    k_eff = min(k, index_emb.shape[0])
    top = np.argsort(-scores, axis=1, kind="stable")[:, :k_eff]
    hits = (index_labels[top] == query_labels[:, None]).any(axis=1)
    return float(hits.mean())
