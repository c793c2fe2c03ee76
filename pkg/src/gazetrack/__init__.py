"""Visual tracking with a particle filter whose glimpse locations are chosen online."""

from .errors import (
    AllZeroWeights,
    ConfigInvalid,
    DimensionMismatch,
    GazetrackError,
    GpFitWarning,
    LengthMismatch,
    SingularGram,
    SpecOutOfBounds,
    TrainingDiverged,
)
from .state_space import BeliefState, State, TransitionModel

__version__ = "0.1.0"

__all__ = [
    "AllZeroWeights",
    "BeliefState",
    "ConfigInvalid",
    "DimensionMismatch",
    "GazetrackError",
    "GpFitWarning",
    "LengthMismatch",
    "SingularGram",
    "SpecOutOfBounds",
    "State",
    "TrainingDiverged",
    "TransitionModel",
]
