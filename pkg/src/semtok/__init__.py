"""Multi-layer semantic tokens: per-layer k-means codebooks, attention-based
layer selection, and a layer-dropout scalable decoder."""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: F401
