"""confsplat: per-splat Beta-distributed confidence scores for Gaussian
splatting scenes, with knob-based test-time pruning and quality/size metrics.
"""

__version__ = "0.1.0"

from .core import (
    Camera,
    ConfidenceField,
    GumbelConfig,
    LossWeights,
    RenderAux,
    SaliencyConfig,
    SceneMode,
    Splat,
    SplatSet,
    SweepRow,
    TrainConfig,
)

__all__ = [
    "Camera",
    "ConfidenceField",
    "GumbelConfig",
    "LossWeights",
    "RenderAux",
    "SaliencyConfig",
    "SceneMode",
    "Splat",
    "SplatSet",
    "SweepRow",
    "TrainConfig",
]
