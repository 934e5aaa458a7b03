"""Few-shot knowledge-graph link prediction with a sparsely gated expert
mixture, attentive neighbor aggregation and task-local adaptation."""

__version__ = "0.1.0"

from .kernels import BACKEND as kernel_backend  # noqa: F401
