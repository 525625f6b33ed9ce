"""capvit: desk-scale caption-only pretraining of vision encoders.

A ViT encoder feeds a randomly thinned visual-token prefix into a causal
text decoder trained with caption cross-entropy alone, next to the
contrastive+caption baseline it replaces, an analytic FLOPs/memory model
for comparing the two, and a procedural captioned-shapes corpus to train
on.
"""

__version__ = "0.1.0"

from . import blocks, checkpoint, contrastive, costmodel, data, encoder, genhead, optim
from . import pipeline, probe, rng, tensor, trainer
from .errors import (
    CapvitError,
    CheckpointError,
    ConfigError,
    DegenerateBatchError,
    GraphError,
    NumericError,
    ShapeError,
    VocabIndexError,
)

__all__ = [
    "blocks",
    "checkpoint",
    "contrastive",
    "costmodel",
    "data",
    "encoder",
    "genhead",
    "optim",
    "pipeline",
    "probe",
    "rng",
    "tensor",
    "trainer",
    "CapvitError",
    "CheckpointError",
    "ConfigError",
    "DegenerateBatchError",
    "GraphError",
    "NumericError",
    "ShapeError",
    "VocabIndexError",
]
