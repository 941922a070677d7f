"""Triplet losses over a batch distance matrix.

Two training strategies are contrasted:

- batch-all: hinge over every valid (anchor, positive, negative) triplet,
  averaged over the triplets whose hinge is positive. Pulls all same-class
  samples together.
- easy-positive: per anchor, hinge over the single (closest positive,
  closest negative) pair. Only the most similar same-class view is matched,
  which tolerates classes whose samples split into distinct modes.

Both operate on squared Euclidean distances between L2-normalized
embeddings, d2 = 2 - 2 * cos, so training distances and retrieval cosine
ranking agree. Gradients are returned with respect to the distance matrix;
the embedder chains them down to its weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from matchscope.errors import ValidationError

LOSS_BATCH_ALL = "batch_all"
LOSS_EASY_POSITIVE = "easy_positive"
LOSS_KINDS = (LOSS_BATCH_ALL, LOSS_EASY_POSITIVE)

DEFAULT_MARGIN = 0.2


@dataclass
class TripletSelection:
    """Mined (easy positive, hard negative) per eligible anchor.

    ``anchors[i]`` pairs with ``positives[i]`` (closest same-class sample,
    self excluded) and ``negatives[i]`` (closest different-class sample).
    Anchors without any in-batch positive are listed in ``skipped``.
    """

    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    skipped: tuple[int, ...] = ()


@dataclass
class LossReport:
    """Loss value, count of positive-hinge terms, and a gradient.

    ``grad`` is with respect to the distance matrix when produced by the
    loss functions, and with respect to the embedder weight when produced
    by ``train_step``. The hinge form guarantees value == 0 exactly when
    ``active_triplet_count`` == 0.
    """

    value: float
    active_triplet_count: int
    grad: np.ndarray
    skipped_anchors: tuple[int, ...] = field(default=())


def _as_labels(labels) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValidationError(f"labels must be 1-D, got shape {arr.shape}")
    return arr


def pairwise_sq_distances(embeddings: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between unit-norm rows: 2 - 2 * (e_i . e_j).

    Exactly symmetric with a zero diagonal; entries clipped to be
    non-negative against rounding.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2:
        raise ValidationError(f"embeddings must be N x d, got shape {emb.shape}")
    norms = np.linalg.norm(emb, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        worst = int(np.argmax(np.abs(norms - 1.0)))
        raise ValidationError(
            f"row {worst} is not unit-norm (norm {norms[worst]:.8f}); normalize first"
        )
    gram = emb @ emb.T
    gram = (gram + gram.T) / 2.0
    dist = 2.0 - 2.0 * gram
    np.fill_diagonal(dist, 0.0)
    return np.maximum(dist, 0.0)


def _class_masks(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    same = labels[:, None] == labels[None, :]
    pos = same.copy()
    np.fill_diagonal(pos, False)
    neg = ~same
    return pos, neg


def mine_ep_hn(dist: np.ndarray, labels) -> TripletSelection:
    """Per anchor, pick the easiest positive and the hardest negative.

    Both are distance argmins; ties break toward the lowest index. Anchors
    with no same-class partner are skipped and reported, not fatal. A batch
    where some anchor has no negative at all is rejected.
    """
    labels = _as_labels(labels)
    n = len(labels)
    if dist.shape != (n, n):
        raise ValidationError(f"distance matrix {dist.shape} does not match {n} labels")
    pos_mask, neg_mask = _class_masks(labels)
    if not neg_mask.any(axis=1).all():
        lonely = int(np.argmin(neg_mask.any(axis=1)))
        raise ValidationError(f"anchor {lonely} has no negative in the batch")

    pos_dist = np.where(pos_mask, dist, np.inf)
    neg_dist = np.where(neg_mask, dist, np.inf)
    has_pos = pos_mask.any(axis=1)

    anchors = np.flatnonzero(has_pos)
    positives = np.argmin(pos_dist[anchors], axis=1)
    negatives = np.argmin(neg_dist[anchors], axis=1)
    skipped = tuple(int(i) for i in np.flatnonzero(~has_pos))
    return TripletSelection(
        anchors=anchors, positives=positives, negatives=negatives, skipped=skipped
    )


def batch_all_loss(dist: np.ndarray, labels, margin: float = DEFAULT_MARGIN) -> LossReport:
    """Hinge over all valid triplets, averaged over the positive hinges.

    h(a, p, n) = max(0, d2[a, p] - d2[a, n] + margin) for every (a, p, n)
    with label(a) == label(p), a != p, label(n) != label(a). The loss is
    sum(h) / count(h > 0), or 0 when no hinge is positive.
    """
    labels = _as_labels(labels)
    if margin <= 0:
        raise ValidationError(f"margin must be positive, got {margin}")
    n = len(labels)
    if dist.shape != (n, n):
        raise ValidationError(f"distance matrix {dist.shape} does not match {n} labels")
    pos_mask, neg_mask = _class_masks(labels)
    valid = pos_mask[:, :, None] & neg_mask[:, None, :]
    if not valid.any():
        raise ValidationError("no valid triplet in batch")

    hinge = dist[:, :, None] - dist[:, None, :] + margin
    active = valid & (hinge > 0.0)
    count = int(active.sum())
    if count == 0:
        return LossReport(value=0.0, active_triplet_count=0, grad=np.zeros_like(dist))

    value = float(hinge[active].sum() / count)
    # d loss / d dist[a, p] = +1/count per active triplet, -1/count at [a, n].
    grad = (active.sum(axis=2) - active.sum(axis=1)) / count
    return LossReport(value=value, active_triplet_count=count, grad=grad)


def easy_positive_loss(dist: np.ndarray, labels, margin: float = DEFAULT_MARGIN) -> LossReport:
    """Hinge over the mined (easy positive, hard negative) pair per anchor.

    loss = mean over eligible anchors of max(0, d2[a, p*] - d2[a, n*] + margin).
    Mined indices are constants of the current batch under differentiation.
    """
    labels = _as_labels(labels)
    if margin <= 0:
        raise ValidationError(f"margin must be positive, got {margin}")
    selection = mine_ep_hn(dist, labels)
    if len(selection.anchors) == 0:
        raise ValidationError("no anchor has a positive in the batch")

    a, p, n = selection.anchors, selection.positives, selection.negatives
    hinges = np.maximum(0.0, dist[a, p] - dist[a, n] + margin)
    active = hinges > 0.0
    value = float(hinges.sum() / len(a))

    grad = np.zeros_like(dist)
    if active.any():
        share = 1.0 / len(a)
        np.add.at(grad, (a[active], p[active]), share)
        np.add.at(grad, (a[active], n[active]), -share)
    return LossReport(
        value=value,
        active_triplet_count=int(active.sum()),
        grad=grad,
        skipped_anchors=selection.skipped,
    )


def matrix_loss(dist: np.ndarray, labels, kind: str, margin: float = DEFAULT_MARGIN) -> LossReport:
    """Dispatch on loss kind name (``batch_all`` or ``easy_positive``)."""
    if kind == LOSS_BATCH_ALL:
        return batch_all_loss(dist, labels, margin)
    if kind == LOSS_EASY_POSITIVE:
        return easy_positive_loss(dist, labels, margin)
    raise ValidationError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
