"""Multimodal audio/text fusion on precomputed embeddings.

Cross-attention fusion with residuals, auxiliary-task multi-task training,
and session-wise cross-validated WA/UA evaluation, all on a small
numpy-backed autodiff core.
"""

__version__ = "0.1.0"

from .data import Batch, Dataset, Sample, SynthConfig
from .fusion import FusionConfig, FusionModelParams
from .tensor import Tape, Tensor
from .train import TrainConfig

__all__ = [
    "Batch",
    "Dataset",
    "FusionConfig",
    "FusionModelParams",
    "Sample",
    "SynthConfig",
    "Tape",
    "Tensor",
    "TrainConfig",
    "__version__",
]
