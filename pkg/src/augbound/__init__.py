"""Augmentation-aware error bounds for contrastive learning.

Modules: ``pixel_model`` (synthetic semantic images), ``augment`` (seeded
augmentations), ``metrics`` (distance terms), ``risk`` (contrastive and
supervised risks), ``decomposition`` (exhaustive discrete-world oracle),
``bounds`` (bound certificates), ``encoder`` (toy encoders and training) and
``harness`` (CLI and experiments).
"""

__version__ = "0.1.0"
