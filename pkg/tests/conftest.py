"""Shared fixtures and small data builders used across the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from matchscope.store import ImageRecord, SpatialFeatureMap


def random_fmap(rng, height, width, channels, image_id=0, offset=0.0) -> SpatialFeatureMap:
    """Random finite tensor; ``offset`` shifts values (e.g. to force positivity)."""
    values = rng.normal(0.0, 1.0, (height, width, channels)) + offset
    return SpatialFeatureMap(values=values.astype(np.float32), image_id=image_id)


def make_record(
    image_id,
    hotel_id=1,
    chain_id=0,
    latitude=0.0,
    longitude=0.0,
    source="travel_site",
    captured_at="2024-05-01T12:00:00Z",
    terms=(),
) -> ImageRecord:
    return ImageRecord(
        image_id=image_id,
        hotel_id=hotel_id,
        chain_id=chain_id,
        latitude=latitude,
        longitude=longitude,
        source=source,
        captured_at=captured_at,
        terms=tuple(terms),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240516)
