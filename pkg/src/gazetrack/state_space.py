"""Target kinematics, the autoregressive transition prior and particle bookkeeping.

Particles are stored as an ``(N, 6)`` float array with columns
``x, y, vx, vy, log_scale, orientation`` (see the ``IX_*`` constants).
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import AllZeroWeights

IX_X, IX_Y, IX_VX, IX_VY, IX_LOG_SCALE, IX_THETA = range(6)
STATE_DIM = 6

LOG_SCALE_BOUNDS = (float(np.log(0.25)), float(np.log(4.0)))


def wrap_angle(theta):
    """Wrap angles to the half-open interval (-pi, pi]; in-range values pass through unchanged."""
    theta = np.asarray(theta, dtype=float)
    inside = (theta > -np.pi) & (theta <= np.pi)
    return np.where(inside, theta, np.pi - np.mod(np.pi - theta, 2.0 * np.pi))


@dataclass(frozen=True)
class State:
    position: tuple = (0.0, 0.0)
    velocity: tuple = (0.0, 0.0)
    log_scale: float = 0.0
    orientation: float = 0.0

    def __post_init__(self):
        vec = self.to_vector()
        if not np.all(np.isfinite(vec)):
            raise ValueError("state fields must be finite")

    @property
    def scale(self):
        return float(np.exp(self.log_scale))

    def to_vector(self):
        return np.array(
            [*self.position, *self.velocity, self.log_scale, self.orientation],
            dtype=float,
        )

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=float)
        return cls(
            position=(float(vec[IX_X]), float(vec[IX_Y])),
            velocity=(float(vec[IX_VX]), float(vec[IX_VY])),
            log_scale=float(vec[IX_LOG_SCALE]),
            orientation=float(vec[IX_THETA]),
        )


@dataclass(frozen=True)
class TransitionModel:
    """Linear-Gaussian prior ``x' = A x + noise`` followed by clamping/wrapping."""

    A: np.ndarray
    noise_std: np.ndarray
    log_scale_bounds: tuple = LOG_SCALE_BOUNDS

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        std = np.asarray(self.noise_std, dtype=float)
        if A.shape != (STATE_DIM, STATE_DIM) or std.shape != (STATE_DIM,):
            raise ValueError("A must be 6x6 and noise_std length 6")
        if not np.all(np.isfinite(A)):
            raise ValueError("A must be finite")
        if np.any(std < 0) or not np.all(np.isfinite(std)):
            raise ValueError("noise stds must be finite and >= 0")
        lo, hi = self.log_scale_bounds
        if not lo <= hi:
            raise ValueError("log_scale bounds must be ordered")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "noise_std", std)

    @classmethod
    def constant_velocity(
        cls,
        position_std=1.0,
        velocity_std=0.5,
        log_scale_std=0.0,
        orientation_std=0.0,
        log_scale_bounds=LOG_SCALE_BOUNDS,
    ):
        A = np.eye(STATE_DIM)
        A[IX_X, IX_VX] = 1.0
        A[IX_Y, IX_VY] = 1.0
        std = np.array(
            [
                position_std,
                position_std,
                velocity_std,
                velocity_std,
                log_scale_std,
                orientation_std,
            ],
            dtype=float,
        )
        return cls(A=A, noise_std=std, log_scale_bounds=log_scale_bounds)

    @classmethod
    def identity(cls, noise_std=None):
        std = np.zeros(STATE_DIM) if noise_std is None else noise_std
        return cls(A=np.eye(STATE_DIM), noise_std=std)


def propagate(particles, model, rng):
    """Push an ``(N, 6)`` particle array through the transition prior."""
    particles = np.asarray(particles, dtype=float)
    noise = rng.standard_normal(particles.shape) * model.noise_std
    out = particles @ model.A.T + noise
    lo, hi = model.log_scale_bounds
    out[:, IX_LOG_SCALE] = np.clip(out[:, IX_LOG_SCALE], lo, hi)
    out[:, IX_THETA] = wrap_angle(out[:, IX_THETA])
    return out


def transition_sample(state, model, rng):
    """Draw one successor state from the transition prior."""
    return State.from_vector(propagate(state.to_vector()[None, :], model, rng)[0])


@dataclass
class BeliefState:
    particles: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        n = self.particles.shape[0]
        if n < 1 or self.particles.shape[1] != STATE_DIM:
            raise ValueError("particles must be an (N, 6) array with N >= 1")
        if self.weights is None:
            self.weights = np.full(n, 1.0 / n)
        else:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != (n,):
                raise ValueError("one weight per particle")
            if np.any(np.isnan(self.weights)) or np.any(self.weights < 0):
                raise ValueError("weights must be nonnegative and not NaN")

    @property
    def n(self):
        return self.particles.shape[0]

    def mean_state(self):
        """Weighted mean; orientation uses the circular mean."""
        w = self.weights / self.weights.sum()
        mean = w @ self.particles
        theta = self.particles[:, IX_THETA]
        mean[IX_THETA] = np.arctan2(w @ np.sin(theta), w @ np.cos(theta))
        mean[IX_THETA] = wrap_angle(mean[IX_THETA])
        return State.from_vector(mean)


def normalize_weights(raw):
    raw = np.asarray(raw, dtype=float)
    total = raw.sum()
    if not total > 0:
        raise AllZeroWeights("all raw importance weights are zero")
    return raw / total


def weight_concentration(weights):
    """Sum of squared normalized weights, i.e. ``1 / ESS``."""
    w = np.asarray(weights, dtype=float)
    return float(np.dot(w, w))


def effective_sample_size(weights):
    return 1.0 / weight_concentration(weights)


def systematic_resample(belief, rng):
    """Systematic resampling with a single uniform offset; output weights are uniform."""
    idx = kernels.systematic_indices(belief.weights, rng.random())
    return BeliefState(belief.particles[idx].copy())
