"""Gaze selection over a finite set of fixation points.

The algorithmic core (``hedge_*``, ``exp3_*``) works on immutable state
values. The ``*Policy`` classes wrap them behind the small interface the
tracker drives.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DiscreteActionSet:
    """Fixation points in template coordinates (pixels at unit scale)."""

    fixations: np.ndarray

    def __post_init__(self):
        fx = np.atleast_2d(np.asarray(self.fixations, dtype=float))
        if fx.shape[0] < 1 or fx.shape[1] != 2:
            raise ValueError("need K >= 1 two-dimensional fixation points")
        object.__setattr__(self, "fixations", fx)

    @property
    def K(self):
        return self.fixations.shape[0]

    @classmethod
    def grid(cls, spacing, n=3):
        """``n x n`` grid, row-major, centered on the target (G5 is the center for n=3)."""
        ticks = (np.arange(n) - (n - 1) / 2) * spacing
        return cls(np.array([(x, y) for y in ticks for x in ticks]))

    def nearest(self, point):
        d = np.sum((self.fixations - np.asarray(point, dtype=float)) ** 2, axis=1)
        return int(np.argmin(d))


# ---------------------------------------------------------------------------
# Hedge / EXP3 core
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HedgeState:
    G: np.ndarray
    gamma: float

    def __post_init__(self):
        G = np.array(self.G, dtype=float)
        if not np.all(np.isfinite(G)):
            raise ValueError("cumulative rewards must be finite")
        if not self.gamma > 0:
            raise ValueError("Hedge gamma must be > 0")
        G.setflags(write=False)
        object.__setattr__(self, "G", G)

    @classmethod
    def initial(cls, K, gamma):
        return cls(np.zeros(K), gamma)


@dataclass(frozen=True)
class Exp3State:
    hedge: HedgeState
    gamma: float
    divide_by: str = "sampled"

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("EXP3 gamma must lie in (0, 1]")
        if self.divide_by not in ("sampled", "inner"):
            raise ValueError("divide_by must be 'sampled' or 'inner'")

    @classmethod
    def initial(cls, K, gamma, divide_by="sampled"):
        return cls(HedgeState.initial(K, gamma), gamma, divide_by)


def default_hedge_gamma(K, horizon):
    return math.sqrt(8.0 * math.log(K) / horizon) if K > 1 else 1.0


def default_exp3_gamma(K, horizon):
    if K == 1:
        return 1.0
    return min(1.0, math.sqrt(K * math.log(K) / ((math.e - 1.0) * horizon)))


def hedge_policy(state):
    z = state.gamma * state.G
    z = np.exp(z - z.max())
    return z / z.sum()


def hedge_update(state, rewards):
    rewards = np.asarray(rewards, dtype=float)
    if rewards.shape != state.G.shape:
        raise ValueError("need one reward per action")
    return HedgeState(state.G + rewards, state.gamma)


def exp3_policy(state):
    p = hedge_policy(state.hedge)
    return (1.0 - state.gamma) * p + state.gamma / p.size


def exp3_update(state, chosen, reward):
    """Feed Hedge the importance-weighted one-hot reward of the chosen action."""
    if state.divide_by == "sampled":
        p = exp3_policy(state)
    else:
        p = hedge_policy(state.hedge)
    simulated = np.zeros_like(state.hedge.G)
    simulated[chosen] = reward / p[chosen]
    return Exp3State(hedge_update(state.hedge, simulated), state.gamma, state.divide_by)


def circular_select(t, K):
    return int(t) % int(K)


def random_select(K, rng):
    return int(rng.integers(K))


def sample_action(p, rng):
    """Inverse-CDF draw from ``p`` with a single uniform."""
    cdf = np.cumsum(p)
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), p.size - 1))


# ---------------------------------------------------------------------------
# tracker-facing wrappers
# ---------------------------------------------------------------------------


class GazePolicy:
    """Interface used by the tracker.

    ``information`` is ``"full"`` when the policy consumes the whole reward
    vector each step, ``"partial"`` when it only sees the chosen action's
    reward, or ``"any"`` for baselines that ignore rewards.
    """

    name = "base"
    information = "any"
    discrete = True

    def choose(self, t, rng):
        raise NotImplementedError

    def distribution(self):
        return None

    def update_full(self, rewards):
        pass

    def update_partial(self, action, reward):
        pass


class RandomPolicy(GazePolicy):
    name = "random"

    def __init__(self, K):
        self.K = K

    def choose(self, t, rng):
        return random_select(self.K, rng)

    def distribution(self):
        return np.full(self.K, 1.0 / self.K)


class CircularPolicy(GazePolicy):
    name = "circular"

    def __init__(self, K):
        self.K = K

    def choose(self, t, rng):
        # t counts filter steps from 1
        return circular_select(t - 1, self.K)


class HedgePolicy(GazePolicy):
    name = "hedge"
    information = "full"

    def __init__(self, K, gamma):
        self.state = HedgeState.initial(K, gamma)

    def choose(self, t, rng):
        return sample_action(hedge_policy(self.state), rng)

    def distribution(self):
        return hedge_policy(self.state)

    def update_full(self, rewards):
        self.state = hedge_update(self.state, rewards)


class Exp3Policy(GazePolicy):
    name = "exp3"
    information = "partial"

    def __init__(self, K, gamma, divide_by="sampled"):
        self.state = Exp3State.initial(K, gamma, divide_by)

    def choose(self, t, rng):
        return sample_action(exp3_policy(self.state), rng)

    def distribution(self):
        return exp3_policy(self.state)

    def update_partial(self, action, reward):
        self.state = exp3_update(self.state, action, reward)
