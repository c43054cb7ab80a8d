"""Self-supervised annotation of embedding datasets.

The pipeline reduces embeddings to 2-D, kernelizes the layout with an RBF
Gram matrix whose bandwidth shrinks with the pass count, harvests small
high-purity clusters across passes while one chaotic cluster absorbs the
hard points, merges the harvest into pseudo-labeled clusters, and finally
routes the chaotic remainder by a classifier fused with two similarity
scores.
"""

from ._accel import ACTIVE_BACKEND
from .dataset import (
    AssignmentRecord,
    DataFormatError,
    EmbeddingSet,
    load_assignments,
    load_embeddings,
    save_assignments,
    save_embeddings,
)
from .pipeline import PipelineConfig, PipelineResult, run_baseline, run_pipeline, sweep_clusters

__version__ = "0.1.0"

__all__ = [
    "ACTIVE_BACKEND",
    "AssignmentRecord",
    "DataFormatError",
    "EmbeddingSet",
    "PipelineConfig",
    "PipelineResult",
    "load_assignments",
    "load_embeddings",
    "run_baseline",
    "run_pipeline",
    "save_assignments",
    "save_embeddings",
    "sweep_clusters",
    "__version__",
]
