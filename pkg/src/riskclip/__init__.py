"""Conformal risk control for non-monotonic bounded losses, and calibration
of likelihood-ratio-clipped policies to a user risk level, with samplers for
the constrained policy and desk-scale experiment harnesses."""

from ._kernels import BACKEND as kernel_backend

__version__ = "0.1.0"

__all__ = ["kernel_backend", "__version__"]
