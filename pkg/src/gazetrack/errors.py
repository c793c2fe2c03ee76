import numpy as np


class GazetrackError(Exception):
    """Base class for library errors."""


class AllZeroWeights(GazetrackError, ValueError):
    """Every raw importance weight was zero."""


class DimensionMismatch(GazetrackError, ValueError):
    pass


class SingularGram(GazetrackError, np.linalg.LinAlgError):
    """Gram matrix could not be factorized even after jitter escalation."""


class LengthMismatch(GazetrackError, ValueError):
    pass


class SpecOutOfBounds(GazetrackError, ValueError):
    """A sequence specification cannot be rendered as requested."""


class ConfigInvalid(GazetrackError, ValueError):
    pass


class TrainingDiverged(GazetrackError, RuntimeError):
    """Model parameters became non-finite during training."""


class GpFitWarning(UserWarning):
    """Hyperparameter fit failed; previous hyperparameters were kept."""
