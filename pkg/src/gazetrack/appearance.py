"""Foveated glimpses, the first-layer RBM and the glimpse-vs-template likelihood."""

import struct
import threading
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import kernels
from .errors import DimensionMismatch, TrainingDiverged


def logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


# ---------------------------------------------------------------------------
# foveation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoveaGeometry:
    """Concentric square rings around a fixation point.

    Ring 0 is an ``fovea x fovea`` grid of single pixels. Ring ``r`` covers a
    square of side ``fovea * 2**r`` pixels, sampled as ``fovea x fovea`` blocks
    of side ``2**r`` with the region of the inner rings removed.
    """

    fovea: int = 8
    rings: int = 3

    def __post_init__(self):
        if self.fovea < 4 or self.fovea % 4:
            raise ValueError("fovea side must be a positive multiple of 4")
        if self.rings < 1:
            raise ValueError("need at least one ring")

    @property
    def ring_radii(self):
        return tuple(self.fovea * 2**r // 2 for r in range(self.rings))

    @property
    def ring_block_sides(self):
        return tuple(2**r for r in range(self.rings))

    @property
    def ring_sizes(self):
        f = self.fovea
        return (f * f,) + (f * f - (f // 2) ** 2,) * (self.rings - 1)

    @property
    def n_visible(self):
        return sum(self.ring_sizes)

    @property
    def extent(self):
        """Side in pixels of the square covered at unit scale."""
        return self.fovea * 2 ** (self.rings - 1)

    @cached_property
    def sample_table(self):
        """``(dx, dy, starts)``: sub-sample offsets grouped by output value."""
        f = self.fovea
        dx, dy, starts = [], [], [0]
        for r in range(self.rings):
            side = 2**r
            for bi in range(f):
                for bj in range(f):
                    if r > 0 and f // 4 <= bi < 3 * f // 4 and f // 4 <= bj < 3 * f // 4:
                        continue
                    y0 = (bi - f // 2) * side
                    x0 = (bj - f // 2) * side
                    for sy in range(side):
                        for sx in range(side):
                            dx.append(x0 + sx)
                            dy.append(y0 + sy)
                    starts.append(len(dx))
        return (
            np.asarray(dx, dtype=np.float64),
            np.asarray(dy, dtype=np.float64),
            np.asarray(starts, dtype=np.int64),
        )

    def fovea_center_index(self):
        """Index of the sample that reads the pixel under the fixation point."""
        f = self.fovea
        return (f // 2) * f + f // 2


def foveate_many(frame, centers, scales, orientations, geometry):
    """Glimpses for ``M`` fixation points; returns an ``(M, n_visible)`` array."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    m = centers.shape[0]
    scales = np.broadcast_to(np.asarray(scales, dtype=float), (m,))
    orientations = np.broadcast_to(np.asarray(orientations, dtype=float), (m,))
    dx, dy, starts = geometry.sample_table
    return kernels.foveate_points(
        frame, centers[:, 0], centers[:, 1], scales, orientations, dx, dy, starts
    )


def foveate(frame, center, scale, orientation, geometry):
    """Single foveated patch of ``geometry.n_visible`` values at ``center`` (x, y)."""
    frame = np.asarray(frame, dtype=float)
    if frame.size == 0:
        raise ValueError("empty frame")
    return foveate_many(frame, [center], [scale], [orientation], geometry)[0]


# ---------------------------------------------------------------------------
# RBM
# ---------------------------------------------------------------------------

_RBM_MAGIC = b"RBM1"


@dataclass(frozen=True)
class Rbm:
    W: np.ndarray  # (n_h, n_v)
    visible_bias: np.ndarray
    hidden_bias: np.ndarray

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        b = np.array(self.visible_bias, dtype=float)
        c = np.array(self.hidden_bias, dtype=float)
        if W.ndim != 2 or b.shape != (W.shape[1],) or c.shape != (W.shape[0],):
            raise DimensionMismatch(
                f"inconsistent RBM shapes W={W.shape} b={b.shape} c={c.shape}"
            )
        for name, arr in (("W", W), ("visible_bias", b), ("hidden_bias", c)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_visible(self):
        return self.W.shape[1]

    @property
    def n_hidden(self):
        return self.W.shape[0]

    @classmethod
    def random(cls, n_visible, n_hidden, rng, scale=0.01):
        return cls(
            W=scale * rng.standard_normal((n_hidden, n_visible)),
            visible_bias=np.zeros(n_visible),
            hidden_bias=np.zeros(n_hidden),
        )

    def is_finite(self):
        return all(
            np.all(np.isfinite(a)) for a in (self.W, self.visible_bias, self.hidden_bias)
        )

    def to_bytes(self):
        header = _RBM_MAGIC + struct.pack("<II", self.n_visible, self.n_hidden)
        body = b"".join(
            np.ascontiguousarray(a, dtype="<f8").tobytes()
            for a in (self.W, self.visible_bias, self.hidden_bias)
        )
        return header + body

    @classmethod
    def from_bytes(cls, data):
        if data[:4] != _RBM_MAGIC:
            raise ValueError("not an RBM1 file")
        n_v, n_h = struct.unpack("<II", data[4:12])
        arr = np.frombuffer(data, dtype="<f8", offset=12)
        if arr.size != n_h * n_v + n_v + n_h:
            raise ValueError("truncated RBM1 file")
        W = arr[: n_h * n_v].reshape(n_h, n_v)
        b = arr[n_h * n_v : n_h * n_v + n_v]
        c = arr[n_h * n_v + n_v :]
        return cls(W=W.astype(float), visible_bias=b.astype(float), hidden_bias=c.astype(float))

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def rbm_hidden(patch, rbm):
    """Hidden activation probabilities; accepts one patch or a batch of rows."""
    patch = np.asarray(patch, dtype=float)
    if patch.shape[-1] != rbm.n_visible:
        raise DimensionMismatch(
            f"patch has {patch.shape[-1]} values, RBM expects {rbm.n_visible}"
        )
    return logistic(patch @ rbm.W.T + rbm.hidden_bias)


def rbm_visible(hidden, rbm):
    return logistic(np.asarray(hidden, dtype=float) @ rbm.W + rbm.visible_bias)


def rbm_positive_stats(data, rbm):
    """Data-phase statistics ``<v h^T>``, ``<v>``, ``<h>`` averaged over the batch."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    h = rbm_hidden(data, rbm)
    n = data.shape[0]
    return h.T @ data / n, data.mean(axis=0), h.mean(axis=0)


def reconstruction_error(data, rbm):
    data = np.atleast_2d(np.asarray(data, dtype=float))
    recon = rbm_visible(rbm_hidden(data, rbm), rbm)
    return float(np.mean((data - recon) ** 2))


def train_rbm_cd1(data, rbm, learning_rate, epochs, rng, batch_size=None, momentum=0.0, log=None):
    """CD-1 training with real-valued visible means in [0, 1].

    Returns a new :class:`Rbm`. When ``log`` is a list, the mean squared
    reconstruction error is appended after every epoch.

    Raises
    ------
    TrainingDiverged
        If any parameter becomes non-finite.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] == 0:
        raise ValueError("empty training batch")
    if data.shape[1] != rbm.n_visible:
        raise DimensionMismatch("training data width does not match the RBM")
    if learning_rate < 0:
        raise ValueError("learning rate must be >= 0")
    if learning_rate == 0:
        return rbm
    n = data.shape[0]
    batch_size = n if batch_size is None else min(batch_size, n)
    W = rbm.W.copy()
    b = rbm.visible_bias.copy()
    c = rbm.hidden_bias.copy()
    vW = np.zeros_like(W)
    vb = np.zeros_like(b)
    vc = np.zeros_like(c)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            v0 = data[order[lo : lo + batch_size]]
            m = v0.shape[0]
            h0 = logistic(v0 @ W.T + c)
            h_sample = (rng.random(h0.shape) < h0).astype(float)
            v1 = logistic(h_sample @ W + b)
            h1 = logistic(v1 @ W.T + c)
            gW = (h0.T @ v0 - h1.T @ v1) / m
            gb = (v0 - v1).mean(axis=0)
            gc = (h0 - h1).mean(axis=0)
            vW = momentum * vW + learning_rate * gW
            vb = momentum * vb + learning_rate * gb
            vc = momentum * vc + learning_rate * gc
            W += vW
            b += vb
            c += vc
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise TrainingDiverged("RBM parameters became non-finite")
        if log is not None:
            log.append(reconstruction_error(data, Rbm(W, b, c)))
    return Rbm(W=W, visible_bias=b, hidden_bias=c)


# ---------------------------------------------------------------------------
# likelihood and template
# ---------------------------------------------------------------------------


def bhattacharyya_distance(p, q):
    """``sqrt(1 - BC)`` between two activation vectors after sum-normalization."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DimensionMismatch("feature vectors differ in length")
    p = p / p.sum()
    q = q / q.sum()
    bc = float(np.clip(np.sum(np.sqrt(p * q)), 1e-12, 1.0))
    return float(np.sqrt(1.0 - bc))


def observation_likelihood(observed, template_features, bandwidth=0.05):
    """Likelihood ``exp(-d / bandwidth)`` of one glimpse against the template."""
    return float(np.exp(-bhattacharyya_distance(observed, template_features) / bandwidth))


def observation_likelihood_many(observed, template_features, bandwidth=0.05):
    observed = np.atleast_2d(observed)
    if observed.shape[1] != np.shape(template_features)[0]:
        raise DimensionMismatch("feature vectors differ in length")
    return kernels.bhattacharyya_likelihood(observed, template_features, bandwidth)


def glimpse_centers(positions, log_scales, orientations, offset):
    """Frame coordinates of a template-relative fixation for each state."""
    s = np.exp(np.asarray(log_scales, dtype=float))
    c = np.cos(orientations)
    sn = np.sin(orientations)
    ox, oy = float(offset[0]), float(offset[1])
    positions = np.atleast_2d(positions)
    x = positions[:, 0] + s * (c * ox - sn * oy)
    y = positions[:, 1] + s * (sn * ox + c * oy)
    return np.column_stack([x, y])


class Template:
    """Static appearance reference cut from the first frame.

    Features for the discrete fixations are computed up front; continuous
    fixations are memoized on a 0.5-pixel grid.
    """

    QUANTUM = 0.5

    def __init__(self, frame, state, rbm, geometry, offsets, margin=None):
        self.rbm = rbm
        self.geometry = geometry
        self.offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
        self.scale = state.scale
        self.orientation = state.orientation
        reach = np.abs(self.offsets).max() if self.offsets.size else 0.0
        if margin is None:
            margin = reach
        # sqrt(2) covers any rotation of the sampling square
        half = int(np.ceil((margin + geometry.extent / 2 + 1) * max(self.scale, 1.0) * np.sqrt(2)))
        self.half = half
        self.source_patch = _cut_patch(np.asarray(frame, dtype=float), state.position, half)
        # fractional part of the position keeps template sampling aligned with the frame
        fx = state.position[0] - np.round(state.position[0])
        fy = state.position[1] - np.round(state.position[1])
        self.center = (half + fx, half + fy)
        self._lock = threading.Lock()
        self._memo = {}
        self.discrete_features = self._compute(self.offsets)

    def _compute(self, offsets):
        offsets = np.atleast_2d(offsets)
        centers = np.vstack(
            [
                glimpse_centers([self.center], [np.log(self.scale)], [self.orientation], o)
                for o in offsets
            ]
        )
        patches = foveate_many(
            self.source_patch, centers, self.scale, self.orientation, self.geometry
        )
        return rbm_hidden(patches, self.rbm)

    @property
    def n_actions(self):
        return self.offsets.shape[0]

    def features(self, action):
        """Template features for a discrete index or a continuous (x, y) offset."""
        if np.isscalar(action) or np.ndim(action) == 0:
            return self.discrete_features[int(action)]
        q = self.QUANTUM
        key = (round(float(action[0]) / q), round(float(action[1]) / q))
        with self._lock:
            hit = self._memo.get(key)
        if hit is not None:
            return hit
        feats = self._compute(np.array([[key[0] * q, key[1] * q]]))[0]
        feats.setflags(write=False)
        with self._lock:
            self._memo.setdefault(key, feats)
        return feats

    @staticmethod
    def quantize(action):
        q = Template.QUANTUM
        return np.round(np.asarray(action, dtype=float) / q) * q


def _cut_patch(frame, position, half):
    """Square ``(2*half+1)`` crop around the rounded position, zero padded."""
    h, w = frame.shape
    cx = int(np.round(position[0]))
    cy = int(np.round(position[1]))
    out = np.zeros((2 * half + 1, 2 * half + 1))
    x0, x1 = cx - half, cx + half + 1
    y0, y1 = cy - half, cy + half + 1
    sx0, sx1 = max(x0, 0), min(x1, w)
    sy0, sy1 = max(y0, 0), min(y1, h)
    if sx0 < sx1 and sy0 < sy1:
        out[sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0] = frame[sy0:sy1, sx0:sx1]
    return out
