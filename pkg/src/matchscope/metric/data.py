"""Synthetic multimodal datasets for the training lab.

Each class (hotel) owns several modes (rooms) that can look as different
from each other as other classes do, which is exactly the regime where the
two training strategies diverge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from matchscope.errors import ValidationError


@dataclass
class LabeledBatch:
    """Raw sample descriptors with integer class labels."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels)
        if inputs.ndim != 2:
            raise ValidationError(f"inputs must be N x D, got shape {inputs.shape}")
        if labels.shape != (inputs.shape[0],):
            raise ValidationError(
                f"labels shape {labels.shape} does not match {inputs.shape[0]} samples"
            )
        if inputs.shape[0] < 2:
            raise ValidationError("a batch needs at least 2 samples")
        self.inputs = inputs
        self.labels = labels

    def __len__(self) -> int:
        return self.inputs.shape[0]


def generate_multimodal_dataset(
    seed: int,
    classes: int,
    modes_per_class: int,
    samples_per_mode: int,
    dim: int,
    noise_scale: float = 0.1,
    mode_scale: float = 1.0,
) -> LabeledBatch:
    """Draw class means, per-class mode offsets, and per-sample noise.

    sample = class_mean + mode_offset + N(0, noise_scale^2). Class means and
    mode offsets are standard-normal draws (mode offsets scaled by
    ``mode_scale``), so with mode_scale near 1 the modes of one class spread
    as far apart as different classes do. Bitwise deterministic given the
    seed.
    """
    if min(classes, modes_per_class, samples_per_mode, dim) < 1:
        raise ValidationError("classes, modes, samples and dim must all be >= 1")
    if noise_scale < 0 or mode_scale < 0:
        raise ValidationError("scales must be non-negative")

    rng = np.random.default_rng(seed)
    total = classes * modes_per_class * samples_per_mode
    inputs = np.empty((total, dim), dtype=np.float64)
    labels = np.empty(total, dtype=np.int64)

    row = 0
    for cls in range(classes):
        class_mean = rng.normal(0.0, 1.0, dim)
        for _ in range(modes_per_class):
            mode_offset = rng.normal(0.0, mode_scale, dim)
            noise = rng.normal(0.0, noise_scale, (samples_per_mode, dim))
            block = class_mean + mode_offset + noise
            inputs[row : row + samples_per_mode] = block
            labels[row : row + samples_per_mode] = cls
            row += samples_per_mode
    return LabeledBatch(inputs=inputs, labels=labels)
