"""Eigenvalue asymptotics for matrix Schrödinger operators on a box with Neumann conditions."""

from __future__ import annotations

from .errors import SpectraError
from .lattice import AsymptoticParams, BoxGeometry, LatticeVector, classify
from .potential import DirectionalPotential, MatrixFourierPotential, generate_random_potential

__all__ = [
    "AsymptoticParams",
    "BoxGeometry",
    "DirectionalPotential",
    "LatticeVector",
    "MatrixFourierPotential",
    "SpectraError",
    "classify",
    "generate_random_potential",
]
__version__ = "0.1.0"
