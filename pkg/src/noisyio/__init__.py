"""Bayesian uncertainty quantification with noisy inputs and outputs.

Higher-order jets with reverse-mode gradients, small neural networks and
DeepONets, Hamiltonian Monte Carlo, errors-in-variables posteriors for
regression, B-PINNs and pretrained operators, and reaction-diffusion solvers.
"""

from .errors import (CholeskyFailure, ConfigError, InvalidCholesky, InvalidInit, InvalidInput, IoError,
                     NoisyIOError, NumericOverflow, SamplerStuck, ShapeError, SolverDiverged, TapeError,
                     TrainingDiverged)
from .jets import Jet, Tape, jet_apply, jet_lift_input, reverse_grad

__version__ = "0.1.0"
