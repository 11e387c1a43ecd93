"""Sparse-view fan-beam CT simulation and frequency-band-aware restoration."""

from .geometry import (
    FanBeamGeometry,
    FanBeamProjector,
    Sinogram,
    fbp_reconstruct,
    forward_project,
    interpolate_sinogram,
    sparse_sample,
    standard_geometry,
)

__all__ = [
    "FanBeamGeometry",
    "FanBeamProjector",
    "Sinogram",
    "fbp_reconstruct",
    "forward_project",
    "interpolate_sinogram",
    "sparse_sample",
    "standard_geometry",
]

__version__ = "0.1.0"
