"""Multi-level wavelet CNN denoising for low-fluence photoacoustic-style images."""
from ._accel import BACKEND

__version__ = "0.1.0"
