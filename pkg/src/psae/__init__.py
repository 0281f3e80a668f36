"""Phase-to-screen-image autoencoder engine.

Learns the mapping from RF-phase settings to diagnostic-screen images with
an encoder/decoder network trained under a multi-scale structural-similarity
loss, and extracts longitudinal phase-space observables from measured or
predicted images.
"""

from .tensor import Tensor, ShapeError, no_grad
from .ops import ConvTransposeSpec

__version__ = "0.1.0"

__all__ = ["Tensor", "ShapeError", "no_grad", "ConvTransposeSpec", "__version__"]
