"""Volumetric time-domain sound field reconstruction toolkit.

Reconstructs a 3D sound pressure field from a sparse set of microphone
signals with a wave-equation-regularized sinusoidal network, and benchmarks
against frequency-domain kernel interpolation and the time-domain
equivalent source method.
"""

__version__ = "0.1.0"
