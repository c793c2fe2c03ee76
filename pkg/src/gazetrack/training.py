"""Offline training of the appearance RBM, the multi-fixation RBM and the class readout."""

from dataclasses import dataclass

import numpy as np

from . import appearance as app
from .errors import TrainingDiverged
from .glyphs import bundled_glyphs
from .identity import MultiFixationRbm, Readout, mf_hidden_probs, one_hot, train_mfrbm, train_readout
from .policies import DiscreteActionSet
from .simulator import apply_noise, render_glyph


@dataclass(frozen=True)
class PretrainSettings:
    fovea: int = 8
    rings: int = 3
    gaze_spacing: float = 8.0
    n_hidden: int = 64
    rbm_samples_per_class: int = 300
    rbm_learning_rate: float = 0.05
    rbm_epochs: int = 20
    rbm_batch_size: int = 100
    rbm_momentum: float = 0.5
    n_factors: int = 64
    n_hidden2: int = 32
    delta: int = 3
    mf_windows_per_class: int = 200
    mf_learning_rate: float = 0.05
    mf_epochs: int = 30
    mf_batch_size: int = 100
    readout_learning_rate: float = 0.5
    readout_epochs: int = 300
    position_jitter: float = 1.0
    noise_fraction: float = 0.0
    init_scale: float = 0.01
    # the triple-product energy needs larger initial factors to get a usable gradient
    mf_init_scale: float = 0.3


@dataclass
class PretrainedModels:
    rbm: app.Rbm
    mfrbm: MultiFixationRbm
    readout: Readout
    geometry: app.FoveaGeometry
    fixations: np.ndarray


def _canvas(img, size):
    canvas = np.zeros((size, size))
    center = ((size - 1) / 2.0, (size - 1) / 2.0)
    render_glyph(canvas, img, center)
    return canvas, center


def sample_glimpses(img, offsets, geometry, rng, jitter=0.0, noise_fraction=0.0):
    """Foveated glimpses of a centred glyph at the given template-relative offsets."""
    size = int(2 * (np.abs(offsets).max() + geometry.extent) + 32)
    canvas, center = _canvas(img, size)
    offsets = np.atleast_2d(offsets)
    centers = np.asarray(center) + offsets + rng.uniform(-jitter, jitter, offsets.shape)
    if noise_fraction > 0:
        canvas = apply_noise(canvas, noise_fraction, rng)[0]
    return app.foveate_many(canvas, centers, 1.0, 0.0, geometry)


def pretrain(settings, rng, glyphs=None, log=None):
    """Train all models on glimpses of centred glyphs.

    Raises
    ------
    TrainingDiverged
        If any trained parameter is non-finite.
    """
    glyphs = bundled_glyphs() if glyphs is None else glyphs
    classes = sorted(glyphs)
    geometry = app.FoveaGeometry(settings.fovea, settings.rings)
    fixations = DiscreteActionSet.grid(settings.gaze_spacing).fixations
    K = len(fixations)
    reach = 1.5 * settings.gaze_spacing

    data = []
    for c in classes:
        n = settings.rbm_samples_per_class
        offs = np.vstack([fixations, rng.uniform(-reach, reach, (max(n - K, 0), 2))])[:n]
        data.append(
            sample_glimpses(glyphs[c], offs, geometry, rng, settings.position_jitter, settings.noise_fraction)
        )
    data = np.vstack(data)
    rbm = app.Rbm.random(geometry.n_visible, settings.n_hidden, rng, settings.init_scale)
    rbm_log = [] if log is not None else None
    rbm = app.train_rbm_cd1(
        data,
        rbm,
        settings.rbm_learning_rate,
        settings.rbm_epochs,
        rng,
        batch_size=settings.rbm_batch_size,
        momentum=settings.rbm_momentum,
        log=rbm_log,
    )

    h_seq, z_seq, labels = training_windows(glyphs, classes, rbm, geometry, fixations, settings, rng)
    mf = MultiFixationRbm.random(
        settings.n_factors, settings.n_hidden, settings.n_hidden2, K, settings.delta, rng, settings.mf_init_scale
    )
    mf = train_mfrbm(
        h_seq, z_seq, mf, settings.mf_learning_rate, settings.mf_epochs, rng, batch_size=settings.mf_batch_size
    )
    feats = mf_hidden_probs(h_seq, z_seq, mf)
    readout = train_readout(
        feats, labels, len(classes), settings.readout_learning_rate, settings.readout_epochs
    )
    if not np.all(np.isfinite(readout.W)) or not np.all(np.isfinite(readout.bias)):
        raise TrainingDiverged("readout parameters became non-finite")
    if log is not None:
        log.append({"rbm_reconstruction": rbm_log})
    return PretrainedModels(rbm, mf, readout, geometry, fixations)


def training_windows(glyphs, classes, rbm, geometry, fixations, settings, rng, n_per_class=None):
    """Windows of ``delta`` (features, one-hot gaze) pairs at random fixations."""
    n_per_class = settings.mf_windows_per_class if n_per_class is None else n_per_class
    K = len(fixations)
    delta = settings.delta
    hs, zs, labels = [], [], []
    for label, c in enumerate(classes):
        gaze = rng.integers(K, size=(n_per_class, delta))
        offs = fixations[gaze.ravel()]
        g = sample_glimpses(glyphs[c], offs, geometry, rng, settings.position_jitter, settings.noise_fraction)
        hs.append(app.rbm_hidden(g, rbm).reshape(n_per_class, delta, -1))
        zs.append(np.stack([[one_hot(k, K) for k in row] for row in gaze]))
        labels.append(np.full(n_per_class, label))
    return np.concatenate(hs), np.concatenate(zs), np.concatenate(labels)
