"""Particle filtering with gaze control.

Each filter step propagates particles through the transition prior (so the
importance weights are the likelihood values), picks a fixation with the
policy, weights, scores the step by the sum of squared normalized weights,
updates the policy and resamples.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import appearance as app
from .errors import AllZeroWeights
from .identity import ClassPosterior, accumulate, classify, mf_hidden_probs, one_hot
from .state_space import (
    IX_LOG_SCALE,
    IX_THETA,
    IX_X,
    IX_Y,
    STATE_DIM,
    BeliefState,
    TransitionModel,
    normalize_weights,
    propagate,
    systematic_resample,
    weight_concentration,
    wrap_angle,
)

log = logging.getLogger(__name__)

FULL = "full_information"
PARTIAL = "partial_information"


@dataclass
class TrackerConfig:
    n_particles: int = 200
    transition: TransitionModel = field(default_factory=TransitionModel.constant_velocity)
    bandwidth: float = 0.05
    mode: str = PARTIAL
    init_std: tuple = (2.0, 2.0, 0.5, 0.5, 0.0, 0.0)
    classifier: bool = False
    classifier_gaze: str = "policy"
    record_weights: bool = False

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("need at least two particles")
        if self.mode not in (FULL, PARTIAL):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.classifier_gaze not in ("policy", "random"):
            raise ValueError("classifier_gaze must be 'policy' or 'random'")
        if len(self.init_std) != STATE_DIM:
            raise ValueError("init_std needs one entry per state dimension")

    def check_policy(self, policy):
        if policy.information == "full" and self.mode != FULL:
            raise ValueError(f"{policy.name} needs full-information mode")
        if policy.information == "partial" and self.mode != PARTIAL:
            raise ValueError(f"{policy.name} needs partial-information mode")


@dataclass
class TrackEstimate:
    frame: int
    state: object
    reward: float = float("nan")
    cumulative_reward: float = 0.0
    action: object = None
    flagged: bool = False
    posterior: ClassPosterior = None
    distribution: np.ndarray = None
    weights: np.ndarray = None
    likelihoods: np.ndarray = None


# ---------------------------------------------------------------------------
# observation models
# ---------------------------------------------------------------------------


class GlimpseObservation:
    """Glimpse-vs-template likelihood for one frame."""

    def __init__(self, frame, template, bandwidth):
        self.frame = np.asarray(frame, dtype=float)
        self.template = template
        self.bandwidth = bandwidth

    @property
    def n_actions(self):
        return self.template.n_actions

    def _offset(self, action):
        if np.ndim(action) == 0:
            return self.template.offsets[int(action)]
        return app.Template.quantize(action)

    def glimpses(self, particles, offsets):
        """Hidden features for every particle at every offset, shape ``(len(offsets)*N, n_h)``."""
        tpl = self.template
        centers = np.vstack(
            [
                app.glimpse_centers(
                    particles[:, [IX_X, IX_Y]], particles[:, IX_LOG_SCALE], particles[:, IX_THETA], o
                )
                for o in offsets
            ]
        )
        reps = len(offsets)
        scales = np.tile(np.exp(particles[:, IX_LOG_SCALE]), reps)
        thetas = np.tile(particles[:, IX_THETA], reps)
        patches = app.foveate_many(self.frame, centers, scales, thetas, tpl.geometry)
        return app.rbm_hidden(patches, tpl.rbm)

    def likelihood(self, particles, action):
        feats = self.glimpses(particles, [self._offset(action)])
        return app.observation_likelihood_many(feats, self.template.features(action), self.bandwidth)

    def likelihood_all(self, particles):
        n = particles.shape[0]
        feats = self.glimpses(particles, self.template.offsets)
        out = np.empty((self.n_actions, n))
        for k in range(self.n_actions):
            out[k] = app.observation_likelihood_many(
                feats[k * n : (k + 1) * n], self.template.discrete_features[k], self.bandwidth
            )
        return out


class GaussianPositionObservation:
    """Direct noisy observation of the x position; used to check the filter against a Kalman filter."""

    n_actions = 1

    def __init__(self, value, std):
        self.value = float(value)
        self.std = float(std)

    def likelihood(self, particles, action=0):
        r = (particles[:, IX_X] - self.value) / self.std
        return np.exp(-0.5 * r * r)

    def likelihood_all(self, particles):
        return self.likelihood(particles)[None, :]


# ---------------------------------------------------------------------------
# filter step
# ---------------------------------------------------------------------------


def initial_belief(state, config, rng):
    mean = state.to_vector()
    particles = mean + rng.standard_normal((config.n_particles, STATE_DIM)) * np.asarray(config.init_std)
    lo, hi = config.transition.log_scale_bounds
    particles[:, IX_LOG_SCALE] = np.clip(particles[:, IX_LOG_SCALE], lo, hi)
    particles[:, IX_THETA] = wrap_angle(particles[:, IX_THETA])
    return BeliefState(particles)


def pf_step(belief, observation, policy, config, rng, t, policy_rng=None):
    """Advance the belief by one frame.

    Returns ``(belief, estimate)``; ``policy`` is updated in place. When every
    likelihood is zero the weights are reset to uniform, the step is flagged
    and the policy is left untouched.
    """
    policy_rng = rng if policy_rng is None else policy_rng
    particles = propagate(belief.particles, config.transition, rng)
    n = particles.shape[0]
    full = config.mode == FULL
    rewards_all = None
    lik_all = None
    if full:
        lik_all = observation.likelihood_all(particles)
        rewards_all = np.empty(lik_all.shape[0])
        for k, raw_k in enumerate(lik_all):
            try:
                rewards_all[k] = weight_concentration(normalize_weights(raw_k))
            except AllZeroWeights:
                rewards_all[k] = np.nan
    distribution = policy.distribution()
    action = policy.choose(t, policy_rng)
    if full:
        raw = lik_all[int(action)]
    else:
        raw = observation.likelihood(particles, action)
    flagged = False
    try:
        weights = normalize_weights(raw)
    except AllZeroWeights:
        log.warning("frame %d: all importance weights are zero; resetting to uniform", t)
        weights = np.full(n, 1.0 / n)
        flagged = True
    reward = weight_concentration(weights)
    if not flagged:
        if full and np.all(np.isfinite(rewards_all)):
            policy.update_full(rewards_all)
        elif not full:
            policy.update_partial(action, reward)
    weighted = BeliefState(particles, weights)
    estimate = TrackEstimate(
        frame=t,
        state=weighted.mean_state(),
        reward=reward,
        action=action,
        flagged=flagged,
        distribution=distribution,
        weights=weights if config.record_weights else None,
        likelihoods=np.asarray(raw) if config.record_weights else None,
    )
    return systematic_resample(weighted, rng), estimate


# ---------------------------------------------------------------------------
# sequence driver
# ---------------------------------------------------------------------------


@dataclass
class AppearanceModels:
    rbm: app.Rbm
    geometry: app.FoveaGeometry
    actions: object  # DiscreteActionSet
    mfrbm: object = None
    readout: object = None


class _ClassifierWindow:
    def __init__(self, models, frame_geometry):
        self.models = models
        self.geometry = frame_geometry
        self.h = []
        self.z = []
        self.history = []

    def push(self, frame, state, gaze_index):
        m = self.models
        offset = m.actions.fixations[gaze_index]
        center = app.glimpse_centers([state.position], [state.log_scale], [state.orientation], offset)[0]
        patch = app.foveate(frame, center, state.scale, state.orientation, self.geometry)
        self.h.append(app.rbm_hidden(patch, m.rbm))
        self.z.append(one_hot(gaze_index, m.actions.K))
        delta = m.mfrbm.delta
        if len(self.h) < delta:
            return None
        agg = mf_hidden_probs(np.array(self.h[-delta:]), np.array(self.z[-delta:]), m.mfrbm)
        self.history.append(classify(agg, m.readout))
        return accumulate(self.history)


def run_sequence(frames, init_state, config, models, policy, rng, policy_rng=None, classifier_rng=None):
    """Track a target through ``frames`` starting from its first-frame state.

    The template is cut from the first frame. Returns one
    :class:`TrackEstimate` per frame; the first is the initialization state.
    """
    if len(frames) < 1:
        raise ValueError("need at least one frame")
    config.check_policy(policy)
    policy_rng = rng if policy_rng is None else policy_rng
    classifier_rng = policy_rng if classifier_rng is None else classifier_rng
    template = app.Template(frames[0], init_state, models.rbm, models.geometry, models.actions.fixations)
    belief = initial_belief(init_state, config, rng)
    window = None
    if config.classifier:
        if models.mfrbm is None or models.readout is None:
            raise ValueError("classifier enabled but no multi-fixation RBM/readout supplied")
        window = _ClassifierWindow(models, models.geometry)
    estimates = [TrackEstimate(frame=0, state=init_state, distribution=policy.distribution())]
    total = 0.0
    for t in range(1, len(frames)):
        obs = GlimpseObservation(frames[t], template, config.bandwidth)
        belief, est = pf_step(belief, obs, policy, config, rng, t, policy_rng)
        total += est.reward
        est.cumulative_reward = total
        if window is not None:
            if config.classifier_gaze == "random":
                gaze = int(classifier_rng.integers(models.actions.K))
            elif np.ndim(est.action) == 0:
                gaze = int(est.action)
            else:
                gaze = models.actions.nearest(est.action)
            est.posterior = window.push(frames[t], est.state, gaze)
        estimates.append(est)
    return estimates
