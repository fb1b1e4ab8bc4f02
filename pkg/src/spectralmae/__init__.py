"""Masked autoencoder pretraining for multi-band spectral imagery.

The package covers the full desk-scale loop: 3D spatial-spectral
tokenization and masking, a visible-token transformer encoder with a
lightweight reconstructing decoder, a dual token/spectral MSE objective,
deterministic AdamW pretraining (single-stage and progressive), four
downstream task heads with their metrics, and a seeded synthetic data
generator so everything is testable without satellite archives.
"""

from .model import GridDims, ModelConfig, SpectralCubeAutoencoder
from .objective import LossBreakdown, ObjectiveConfig
from .tokenizer import MaskPlan, SpectralImage, TokenGrid, build_mask, patchify, unpatchify
from .rng import CounterRng

__version__ = "0.1.0"

__all__ = [
    "CounterRng",
    "GridDims",
    "LossBreakdown",
    "MaskPlan",
    "ModelConfig",
    "ObjectiveConfig",
    "SpectralCubeAutoencoder",
    "SpectralImage",
    "TokenGrid",
    "build_mask",
    "patchify",
    "unpatchify",
    "__version__",
]
