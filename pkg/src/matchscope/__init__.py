"""Explainable hotel-image matching: storage, pooling, search, explanations.

The package splits into small, separately testable layers:

- ``store``: bit-exact tensor files (SFM1) and the image catalog
- ``features``: polygon masks, masked average pooling, normalization
- ``metric``: a desk-scale metric-learning lab contrasting triplet losses
- ``search``: exact filtered top-k retrieval with hotel grouping
- ``explain``: per-cell importance maps and PCA correspondence coloring
- ``report``: curatable, self-contained investigation reports
- ``api`` / ``cli``: the HTTP service and its headless driver
"""

__version__ = "0.1.0"
