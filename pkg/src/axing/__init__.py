"""Axially symmetric non-Gaussian random fields on the sphere built from needlets.

The package covers the needlet frame and its quadrature designs, the
AXING-need model with its adaptive Metropolis-within-Gibbs sampler, Gaussian
baselines (Gaussian needlets and Matern), predictive scoring, EOF
preprocessing of space-time data and Joule heating of simulated potentials.
"""
from .model import AxingParams, covariance, simulate_field
from .mcmc import McmcConfig, PosteriorSamples, run_chain
from .needlets import NeedletFrame, design_matrix
from .quadrature import QuadratureDesign, load_design, validate_design
from .sphere import SpherePoint
from .splines import SplineBasis

__version__ = "0.1.0"

__all__ = [
    "AxingParams", "McmcConfig", "NeedletFrame", "PosteriorSamples", "QuadratureDesign",
    "SplineBasis", "SpherePoint", "covariance", "design_matrix", "load_design", "run_chain",
    "simulate_field", "validate_design",
]
