"""Statistics on Riemannian symmetric spaces.

Submodules: manifolds, gaussian, barycentre, bayes, schemes, spectra,
experiments and cli.
"""
from . import barycentre, bayes, gaussian, manifolds, schemes, spectra
from .errors import (ConfigError, CutLocusError, DegenerateDispersionError, DomainError,
                     EnvelopeFailureError, ExtrapolationError, ManistatError, NoSolutionError,
                     NumericalError, SpectralError, UnsupportedError)
from .manifolds import Euclidean, Grassmann, Hyperbolic, SpdHermitian, Sphere, Unitary

__version__ = "0.1.0"

__all__ = [
    "barycentre", "bayes", "gaussian", "manifolds", "schemes", "spectra",
    "Euclidean", "Grassmann", "Hyperbolic", "SpdHermitian", "Sphere", "Unitary",
    "ManistatError", "DomainError", "CutLocusError", "UnsupportedError", "ConfigError",
    "NumericalError", "NoSolutionError", "ExtrapolationError", "DegenerateDispersionError",
    "EnvelopeFailureError", "SpectralError",
]
