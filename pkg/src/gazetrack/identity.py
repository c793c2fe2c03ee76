"""Multi-fixation RBM over windows of glimpse features, plus a softmax readout.

A window holds ``delta`` pairs ``(h_i, z_i)``: first-layer hidden activations
and the one-hot code of the gaze position that produced them. Arrays follow
the shapes ``h_seq: (delta, n_h)`` and ``z_seq: (delta, K)``; batched
variants prepend a leading axis.

Energy (``h2`` binary, length ``n_h2``)::

    E = -d.h2 - sum_i b.h_i + sum_i sum_f (P_f.h2) (W_f.h_i) (V_f.z_i)

so the conditional of each top unit is
``sigm(d_j - sum_i sum_f P_fj (W_f.h_i) (V_f.z_i))``.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .appearance import logistic
from .errors import DimensionMismatch, TrainingDiverged

_MFR_MAGIC = b"MFR1"
_LGR_MAGIC = b"LGR1"


def one_hot(index, K):
    if not 0 <= int(index) < K:
        raise ValueError(f"gaze index {index} outside [0, {K})")
    z = np.zeros(K)
    z[int(index)] = 1.0
    return z


@dataclass(frozen=True)
class MultiFixationRbm:
    P: np.ndarray  # (F, n_h2)
    W: np.ndarray  # (F, n_h)
    V: np.ndarray  # (F, K)
    b: np.ndarray  # (n_h,)
    d: np.ndarray  # (n_h2,)
    delta: int = 3

    def __post_init__(self):
        arrs = {k: np.array(getattr(self, k), dtype=float) for k in "PWVbd"}
        F = arrs["P"].shape[0]
        ok = (
            all(arrs[k].ndim == 2 and arrs[k].shape[0] == F for k in "PWV")
            and arrs["b"].shape == (arrs["W"].shape[1],)
            and arrs["d"].shape == (arrs["P"].shape[1],)
        )
        if not ok:
            raise DimensionMismatch("inconsistent multi-fixation RBM shapes")
        if int(self.delta) < 1 or arrs["V"].shape[1] < 1:
            raise ValueError("delta and K must be >= 1")
        for k, a in arrs.items():
            a.setflags(write=False)
            object.__setattr__(self, k, a)
        object.__setattr__(self, "delta", int(self.delta))

    @property
    def n_factors(self):
        return self.P.shape[0]

    @property
    def n_h(self):
        return self.W.shape[1]

    @property
    def n_h2(self):
        return self.P.shape[1]

    @property
    def K(self):
        return self.V.shape[1]

    @classmethod
    def random(cls, n_factors, n_h, n_h2, K, delta, rng, scale=0.05):
        return cls(
            P=scale * rng.standard_normal((n_factors, n_h2)),
            W=scale * rng.standard_normal((n_factors, n_h)),
            V=scale * rng.standard_normal((n_factors, K)),
            b=np.zeros(n_h),
            d=np.zeros(n_h2),
            delta=delta,
        )

    def replace(self, **kw):
        fields = {k: getattr(self, k) for k in ("P", "W", "V", "b", "d", "delta")}
        fields.update(kw)
        return MultiFixationRbm(**fields)

    def is_finite(self):
        return all(np.all(np.isfinite(getattr(self, k))) for k in "PWVbd")

    def to_bytes(self):
        header = _MFR_MAGIC + struct.pack(
            "<IIIII", self.n_factors, self.n_h, self.n_h2, self.K, self.delta
        )
        return header + b"".join(
            np.ascontiguousarray(getattr(self, k), dtype="<f8").tobytes() for k in "PWVbd"
        )

    @classmethod
    def from_bytes(cls, data):
        if data[:4] != _MFR_MAGIC:
            raise ValueError("not an MFR1 file")
        F, n_h, n_h2, K, delta = struct.unpack("<IIIII", data[4:24])
        arr = np.frombuffer(data, dtype="<f8", offset=24).astype(float)
        shapes = [(F, n_h2), (F, n_h), (F, K), (n_h,), (n_h2,)]
        sizes = [int(np.prod(s)) for s in shapes]
        if arr.size != sum(sizes):
            raise ValueError("truncated MFR1 file")
        parts = np.split(arr, np.cumsum(sizes)[:-1])
        P, W, V, b, d = (p.reshape(s) for p, s in zip(parts, shapes))
        return cls(P=P, W=W, V=V, b=b, d=d, delta=delta)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _check_window(h_seq, z_seq, model):
    h_seq = np.asarray(h_seq, dtype=float)
    z_seq = np.asarray(z_seq, dtype=float)
    if h_seq.shape[-2:] != (model.delta, model.n_h):
        raise DimensionMismatch(
            f"h window shape {h_seq.shape[-2:]} != ({model.delta}, {model.n_h})"
        )
    if z_seq.shape[-2:] != (model.delta, model.K):
        raise DimensionMismatch(
            f"z window shape {z_seq.shape[-2:]} != ({model.delta}, {model.K})"
        )
    return h_seq, z_seq


def _gated(h_seq, z_seq, model):
    # (..., delta, F): (W_f.h_i) * (V_f.z_i)
    return (h_seq @ model.W.T) * (z_seq @ model.V.T)


def mf_energy(h_seq, z_seq, h2, model):
    h_seq, z_seq = _check_window(h_seq, z_seq, model)
    h2 = np.asarray(h2, dtype=float)
    if h2.shape != (model.n_h2,):
        raise DimensionMismatch("h2 length does not match the model")
    gated = _gated(h_seq, z_seq, model)  # (delta, F)
    top = model.P @ h2  # (F,)
    return float(-model.d @ h2 - np.sum(h_seq @ model.b) + np.sum(gated @ top))


def mf_top_input(h_seq, z_seq, model):
    """Total input ``d - sum_i sum_f P_fj (W_f.h_i)(V_f.z_i)`` to each top unit."""
    h_seq, z_seq = _check_window(h_seq, z_seq, model)
    gated = _gated(h_seq, z_seq, model).sum(axis=-2)  # (..., F)
    return model.d - gated @ model.P


def mf_hidden_probs(h_seq, z_seq, model):
    """Activation probabilities of the top layer given a window (batched ok)."""
    return logistic(mf_top_input(h_seq, z_seq, model))


def mf_free_energy(h_seq, z_seq, model):
    """Free energy with the binary top layer summed out."""
    h_seq, z_seq = _check_window(h_seq, z_seq, model)
    x = mf_top_input(h_seq, z_seq, model)
    return -np.sum(h_seq @ model.b, axis=-1) - np.sum(np.logaddexp(0.0, x), axis=-1)


def _energy_grads(h_seq, z_seq, h2, model):
    """Batch means of ``-dE/dtheta`` with the top layer at ``h2`` (probabilities ok)."""
    n = h_seq.shape[0]
    a = h_seq @ model.W.T  # (n, delta, F)
    c = z_seq @ model.V.T  # (n, delta, F)
    top = h2 @ model.P.T  # (n, F)
    gP = -np.einsum("nif,nj->fj", a * c, h2) / n
    gW = -np.einsum("nf,nif,nik->fk", top, c, h_seq) / n
    gV = -np.einsum("nf,nif,nik->fk", top, a, z_seq) / n
    gb = h_seq.sum(axis=1).mean(axis=0)
    gd = h2.mean(axis=0)
    return {"P": gP, "W": gW, "V": gV, "b": gb, "d": gd}


def mf_positive_stats(h_seq, z_seq, model):
    """Data-phase expectations of ``-dE/dtheta`` with ``h2`` marginalized exactly."""
    h_seq, z_seq = _check_window(h_seq, z_seq, model)
    h_seq = h_seq.reshape(-1, model.delta, model.n_h)
    z_seq = z_seq.reshape(-1, model.delta, model.K)
    q = mf_hidden_probs(h_seq, z_seq, model)
    return _energy_grads(h_seq, z_seq, q, model)


def _window_h_probs(h2, z_seq, model):
    # p(h_i,k = 1 | h2, z_i) = sigm(b_k - sum_f W_fk (P_f.h2)(V_f.z_i))
    top = h2 @ model.P.T  # (n, F)
    c = z_seq @ model.V.T  # (n, delta, F)
    return logistic(model.b - (top[:, None, :] * c) @ model.W)


def train_mfrbm(h_seq, z_seq, model, learning_rate, epochs, rng, batch_size=100, noise=None, log=None):
    """CD-1 on windows of (features, one-hot gaze) pairs.

    ``noise`` optionally holds feature windows used as a reference for the
    free-energy gap ``mean F(noise) - mean F(data)`` that is appended to
    ``log`` after every epoch.
    """
    h_seq, z_seq = _check_window(h_seq, z_seq, model)
    n = h_seq.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    if learning_rate < 0:
        raise ValueError("learning rate must be >= 0")
    if learning_rate == 0:
        return model
    params = {k: np.array(getattr(model, k)) for k in "PWVbd"}
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            h0, z = h_seq[idx], z_seq[idx]
            cur = model.replace(**params)
            q0 = mf_hidden_probs(h0, z, cur)
            pos = _energy_grads(h0, z, q0, cur)
            s = (rng.random(q0.shape) < q0).astype(float)
            h1 = _window_h_probs(s, z, cur)
            q1 = mf_hidden_probs(h1, z, cur)
            neg = _energy_grads(h1, z, q1, cur)
            for k in params:
                params[k] = params[k] + learning_rate * (pos[k] - neg[k])
        model = model.replace(**params)
        if not model.is_finite():
            raise TrainingDiverged("multi-fixation RBM parameters became non-finite")
        if log is not None and noise is not None:
            gap = np.mean(mf_free_energy(noise, z_seq[: len(noise)], model)) - np.mean(
                mf_free_energy(h_seq, z_seq, model)
            )
            log.append(float(gap))
    return model


# ---------------------------------------------------------------------------
# readout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Readout:
    """Multinomial logistic regression ``softmax(W x + bias)``."""

    W: np.ndarray  # (C, n_in)
    bias: np.ndarray  # (C,)

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        bias = np.asarray(self.bias, dtype=float)
        if W.ndim != 2 or bias.shape != (W.shape[0],):
            raise DimensionMismatch("readout shapes are inconsistent")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "bias", bias)

    @property
    def n_classes(self):
        return self.W.shape[0]

    @classmethod
    def zeros(cls, n_classes, n_in):
        return cls(np.zeros((n_classes, n_in)), np.zeros(n_classes))

    def to_bytes(self):
        C, n_in = self.W.shape
        return (
            _LGR_MAGIC
            + struct.pack("<II", C, n_in)
            + np.ascontiguousarray(self.W, dtype="<f8").tobytes()
            + np.ascontiguousarray(self.bias, dtype="<f8").tobytes()
        )

    @classmethod
    def from_bytes(cls, data):
        if data[:4] != _LGR_MAGIC:
            raise ValueError("not an LGR1 file")
        C, n_in = struct.unpack("<II", data[4:12])
        arr = np.frombuffer(data, dtype="<f8", offset=12).astype(float)
        if arr.size != C * n_in + C:
            raise ValueError("truncated LGR1 file")
        return cls(arr[: C * n_in].reshape(C, n_in), arr[C * n_in :])

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def log_softmax(logits):
    logits = np.asarray(logits, dtype=float)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass(frozen=True)
class ClassPosterior:
    log_probs: np.ndarray

    @property
    def probs(self):
        return np.exp(self.log_probs)

    def argmax(self):
        # np.argmax returns the lowest index among ties
        return int(np.argmax(self.log_probs))


def classify(agg, readout):
    agg = np.asarray(agg, dtype=float)
    if agg.shape != (readout.W.shape[1],):
        raise DimensionMismatch("aggregate features do not match the readout")
    return ClassPosterior(log_softmax(readout.W @ agg + readout.bias))


def accumulate(history):
    """Combine per-step posteriors by summing log-probabilities and renormalizing."""
    history = list(history)
    if not history:
        raise ValueError("need at least one posterior")
    total = np.sum([p.log_probs for p in history], axis=0)
    return ClassPosterior(log_softmax(total))


def train_readout(features, labels, n_classes, learning_rate=0.5, epochs=300, l2=1e-4):
    """Full-batch gradient descent on softmax cross-entropy."""
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=int)
    n, n_in = X.shape
    W = np.zeros((n_classes, n_in))
    bias = np.zeros(n_classes)
    target = np.zeros((n, n_classes))
    target[np.arange(n), y] = 1.0
    for _ in range(epochs):
        probs = np.exp(log_softmax(X @ W.T + bias))
        err = probs - target
        W -= learning_rate * (err.T @ X / n + l2 * W)
        bias -= learning_rate * err.mean(axis=0)
    return Readout(W, bias)
