"""perceptkit: joint detection, per-object depth and segmentation on numpy.

One shared residual encoder feeds an anchor-based detection branch that
regresses box geometry plus a log-depth component, and a quarter-resolution
segmentation branch built on reduced pyramid pooling. Everything runs on a
small reverse-mode autodiff engine (``perceptkit.ndgrad``) so each operator
is verifiable against finite differences.
"""

__version__ = "0.1.0"
