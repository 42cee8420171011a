"""Fourier sampling along spirals and concentric circles.

Submodules: :mod:`trajectory` (curves, quadrature, gaps, weak limits),
:mod:`fourier` (grid transforms, the analytic bump, Bessel ratios),
:mod:`witness` (functions whose spectra nearly vanish on an undersampled
curve), :mod:`wavelet` (2-D Haar tools) and :mod:`margin` (sweeps).
"""
from importlib.metadata import PackageNotFoundError, version

from .errors import NumericalError, SpiralSampError, ValidationError

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover - running from a source tree
    __version__ = "0.0.0"

__all__ = ["SpiralSampError", "ValidationError", "NumericalError", "__version__"]
