"""State-aware Bayesian calibration of computer models.

Calibration parameters may vary smoothly with the control inputs through a
Gaussian-process prior on a link scale, optionally pinned by interval
constraints at chosen inputs.  Posterior draws come from an adaptive
Metropolis-within-Gibbs sampler.
"""

__version__ = "0.1.0"

from .linkfun import LinkKind
from .model import (Constraint, FieldDataset, Hyperpriors, ModelSpec, ParameterSpec, Problem,
                    Variant, standardize)
from .predict import PredictionResult, extract_theta1_posterior, predict
from .sampler import ChainConfig, TraceSet, rhat, run_chain, run_chains
from .simulators import QuadraticSimulator, Simulator, SimulatorError, SimulatorRequired

__all__ = [
    "__version__",
    "LinkKind",
    "Constraint",
    "FieldDataset",
    "Hyperpriors",
    "ModelSpec",
    "ParameterSpec",
    "Problem",
    "Variant",
    "standardize",
    "PredictionResult",
    "predict",
    "extract_theta1_posterior",
    "ChainConfig",
    "TraceSet",
    "rhat",
    "run_chain",
    "run_chains",
    "QuadraticSimulator",
    "Simulator",
    "SimulatorError",
    "SimulatorRequired",
]
