"""Desk-scale metric-learning lab: triplet losses, mining, training, evaluation."""

from matchscope.metric.data import LabeledBatch, generate_multimodal_dataset
from matchscope.metric.embedder import ToyEmbedder, train_step
from matchscope.metric.evaluation import evaluate_recall_at_k
from matchscope.metric.lab import ExperimentConfig, run_experiment
from matchscope.metric.losses import (
    LOSS_KINDS,
    LossReport,
    TripletSelection,
    batch_all_loss,
    easy_positive_loss,
    matrix_loss,
    mine_ep_hn,
    pairwise_sq_distances,
)

__all__ = [
    "LabeledBatch",
    "generate_multimodal_dataset",
    "ToyEmbedder",
    "train_step",
    "evaluate_recall_at_k",
    "ExperimentConfig",
    "run_experiment",
    "LOSS_KINDS",
    "LossReport",
    "TripletSelection",
    "batch_all_loss",
    "easy_positive_loss",
    "matrix_loss",
    "mine_ep_hn",
    "pairwise_sq_distances",
]
