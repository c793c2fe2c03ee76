"""Synthetic tracking videos with ground truth, file formats and metrics."""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import LengthMismatch, SpecOutOfBounds
from .glyphs import GLYPH_SIZE, bundled_glyphs
from .state_space import State

_HALF = (GLYPH_SIZE - 1) / 2.0


@dataclass(frozen=True)
class Occluder:
    """Background-coloured rectangle hiding one side of the target for ``[start, stop)``."""

    start: int
    stop: int
    side: str = "left"
    fraction: float = 0.5

    def __post_init__(self):
        if self.side not in ("left", "right", "top", "bottom"):
            raise ValueError(f"unknown occluder side {self.side!r}")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("occluder fraction must be in (0, 1]")

    def active(self, t):
        return self.start <= t < self.stop


@dataclass(frozen=True)
class SequenceSpec:
    glyph_id: int
    frame_size: tuple = (100, 100)  # (height, width)
    length: int = 300
    initial_position: tuple = (50.0, 50.0)
    initial_velocity: tuple = (2.0, 0.0)
    bounce: bool = True
    distractors: tuple = ()  # ((glyph_id, (x, y)), ...)
    occluder: Occluder = None
    noise_fraction: float = 0.0
    scale_trajectory: tuple = None  # per-frame multipliers; None means constant 1
    background: float = 0.0
    label: int = None

    @property
    def class_label(self):
        return self.glyph_id if self.label is None else self.label

    def scales(self):
        if self.scale_trajectory is None:
            return np.ones(self.length)
        return np.asarray(self.scale_trajectory, dtype=float)

    def validate(self, glyphs):
        if not 0.0 <= self.noise_fraction <= 1.0:
            raise SpecOutOfBounds("noise fraction must lie in [0, 1]")
        if self.length < 1:
            raise SpecOutOfBounds("sequence needs at least one frame")
        h, w = self.frame_size
        if h < 1 or w < 1:
            raise SpecOutOfBounds("frame too small")
        if self.glyph_id not in glyphs or any(g not in glyphs for g, _ in self.distractors):
            raise SpecOutOfBounds("unknown glyph id")
        scales = self.scales()
        if scales.shape != (self.length,) or np.any(scales <= 0):
            raise SpecOutOfBounds("scale trajectory must give one positive multiplier per frame")
        occ = self.occluder
        if occ is not None and not (0 <= occ.start < occ.stop <= self.length):
            raise SpecOutOfBounds("occluder interval must lie within the sequence")
        x, y = self.initial_position
        m = _HALF * scales[0]
        if not (m <= x <= w - 1 - m and m <= y <= h - 1 - m):
            raise SpecOutOfBounds("target starts outside the frame")
        if self.bounce and np.any(2 * _HALF * scales > min(h, w) - 1):
            raise SpecOutOfBounds("target too large to bounce inside the frame")


def _trajectory(spec):
    h, w = spec.frame_size
    scales = spec.scales()
    pos = np.array(spec.initial_position, dtype=float)
    vel = np.array(spec.initial_velocity, dtype=float)
    out = []
    for t in range(spec.length):
        if t > 0:
            pos = pos + vel
            if spec.bounce:
                m = _HALF * scales[t]
                for k, hi in ((0, w - 1 - m), (1, h - 1 - m)):
                    if pos[k] < m:
                        pos[k] = 2 * m - pos[k]
                        vel[k] = -vel[k]
                    elif pos[k] > hi:
                        pos[k] = 2 * hi - pos[k]
                        vel[k] = -vel[k]
                    pos[k] = min(max(pos[k], m), hi)
        out.append(
            State(
                position=(float(pos[0]), float(pos[1])),
                velocity=(float(vel[0]), float(vel[1])),
                log_scale=float(np.log(scales[t])),
                orientation=0.0,
            )
        )
    return out


def render_glyph(canvas, image, center, scale=1.0):
    """Max-composite ``image`` onto ``canvas`` centered at ``center`` (in place)."""
    h, w = canvas.shape
    gh, gw = image.shape
    half = max(gh, gw) / 2.0 * scale + 1
    x0 = max(int(np.floor(center[0] - half)), 0)
    x1 = min(int(np.ceil(center[0] + half)) + 1, w)
    y0 = max(int(np.floor(center[1] - half)), 0)
    y1 = min(int(np.ceil(center[1] + half)) + 1, h)
    if x0 >= x1 or y0 >= y1:
        return canvas
    yy, xx = np.mgrid[y0:y1, x0:x1]
    u = np.floor((xx - center[0]) / scale + (gw - 1) / 2.0 + 0.5).astype(int)
    v = np.floor((yy - center[1]) / scale + (gh - 1) / 2.0 + 0.5).astype(int)
    ok = (u >= 0) & (u < gw) & (v >= 0) & (v < gh)
    vals = np.zeros(u.shape)
    vals[ok] = image[v[ok], u[ok]]
    canvas[y0:y1, x0:x1] = np.maximum(canvas[y0:y1, x0:x1], vals)
    return canvas


def occluder_box(occ, state):
    """Pixel box ``(x0, x1, y0, y1)`` (half-open) hidden by ``occ`` for a target at ``state``."""
    s = state.scale
    x, y = state.position
    half = GLYPH_SIZE / 2.0 * s
    left, right, top, bottom = x - half, x + half, y - half, y + half
    span = 2 * half * occ.fraction
    if occ.side == "left":
        right = left + span
    elif occ.side == "right":
        left = right - span
    elif occ.side == "top":
        bottom = top + span
    else:
        top = bottom - span
    return (
        int(np.floor(left + 0.5)),
        int(np.floor(right + 0.5)),
        int(np.floor(top + 0.5)),
        int(np.floor(bottom + 0.5)),
    )


def quantize(frame):
    return np.round(np.clip(frame, 0.0, 1.0) * 255.0) / 255.0


def apply_noise(frame, fraction, rng):
    """Replace each pixel by a uniform value with probability ``fraction``.

    Returns the corrupted frame and the boolean replacement mask.
    """
    mask = rng.random(frame.shape) < fraction
    noise = rng.random(frame.shape)
    return np.where(mask, noise, frame), mask


def render_clean(spec, glyphs, truth):
    """Noise-free frames (occluder applied) for a ground-truth trajectory."""
    h, w = spec.frame_size
    frames = []
    for t, state in enumerate(truth):
        canvas = np.full((h, w), float(spec.background))
        for gid, pos in spec.distractors:
            render_glyph(canvas, glyphs[gid], pos)
        render_glyph(canvas, glyphs[spec.glyph_id], state.position, state.scale)
        if spec.occluder is not None and spec.occluder.active(t):
            x0, x1, y0, y1 = occluder_box(spec.occluder, state)
            canvas[max(y0, 0) : max(y1, 0), max(x0, 0) : max(x1, 0)] = spec.background
        frames.append(quantize(canvas))
    return frames


def generate_sequence(spec, glyphs=None, rng=None):
    """Render ``spec``; returns ``(frames, truth)`` with frames as float arrays in [0, 1].

    Raises
    ------
    SpecOutOfBounds
    """
    glyphs = bundled_glyphs() if glyphs is None else glyphs
    spec.validate(glyphs)
    truth = _trajectory(spec)
    frames = render_clean(spec, glyphs, truth)
    if spec.noise_fraction > 0:
        if rng is None:
            raise ValueError("a random generator is required for noisy sequences")
        frames = [quantize(apply_noise(f, spec.noise_fraction, rng)[0]) for f in frames]
    return frames, truth


@dataclass(frozen=True)
class SceneSettings:
    """Parameters for drawing a random :class:`SequenceSpec` for a glyph."""

    frame_size: tuple = (100, 100)
    length: int = 300
    speed: float = 2.0
    n_distractors: int = 2
    noise_fraction: float = 0.0
    occluder_start: float = 0.4  # fraction of the sequence
    occluder_duration: float = 0.15
    occluder_fraction: float = 0.5
    occluder: bool = True
    scale_drift: float = 0.0  # total log-scale change over the sequence
    distractor_clearance: float = 20.0


def random_sequence_spec(glyph_id, settings, rng):
    """Random placement of target, distractors and occluder side for one run."""
    h, w = settings.frame_size
    scales = np.exp(np.linspace(0.0, settings.scale_drift, settings.length))
    m = _HALF * scales.max() + 1
    pos = (float(rng.uniform(m, w - 1 - m)), float(rng.uniform(m, h - 1 - m)))
    angle = rng.uniform(0, 2 * np.pi)
    vel = (settings.speed * float(np.cos(angle)), settings.speed * float(np.sin(angle)))
    others = [g for g in range(10) if g != glyph_id]
    distractors = []
    picks = rng.permutation(others)[: settings.n_distractors]
    for g in picks:
        for _ in range(100):
            dpos = (float(rng.uniform(_HALF, w - 1 - _HALF)), float(rng.uniform(_HALF, h - 1 - _HALF)))
            if np.hypot(dpos[0] - pos[0], dpos[1] - pos[1]) >= settings.distractor_clearance:
                break
        distractors.append((int(g), dpos))
    occ = None
    side = ("left", "right", "top", "bottom")[int(rng.integers(4))]
    if settings.occluder:
        start = int(round(settings.occluder_start * settings.length))
        stop = min(settings.length, start + max(1, int(round(settings.occluder_duration * settings.length))))
        if start < stop:
            occ = Occluder(start, stop, side, settings.occluder_fraction)
    return SequenceSpec(
        glyph_id=int(glyph_id),
        frame_size=tuple(settings.frame_size),
        length=settings.length,
        initial_position=pos,
        initial_velocity=vel,
        distractors=tuple(distractors),
        occluder=occ,
        noise_fraction=settings.noise_fraction,
        scale_trajectory=None if settings.scale_drift == 0 else tuple(scales),
    )


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _positions(seq):
    out = []
    for s in seq:
        out.append(s.position if isinstance(s, State) else s)
    return np.asarray(out, dtype=float).reshape(-1, 2)


def position_errors(estimates, truth):
    est = _positions(estimates)
    tru = _positions(truth)
    if est.shape != tru.shape:
        raise LengthMismatch(f"{len(est)} estimates vs {len(tru)} ground-truth frames")
    return np.hypot(est[:, 0] - tru[:, 0], est[:, 1] - tru[:, 1])


def tracking_error(estimates, truth):
    """Population mean and std of the per-frame Euclidean position error."""
    d = position_errors(estimates, truth)
    return float(d.mean()), float(d.std())


def classification_accuracy(posteriors, true_class):
    """Fraction of posteriors whose argmax (lowest index on ties) is ``true_class``."""
    posteriors = [p for p in posteriors if p is not None]
    if not posteriors:
        raise ValueError("no posteriors to score")
    hits = sum(p.argmax() == true_class for p in posteriors)
    return hits / len(posteriors)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def write_pgm(path, image):
    """8-bit binary PGM (P5); values in [0, 1] are scaled to 0..255."""
    img = np.asarray(image, dtype=float)
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError("only binary PGM (P5) is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ValueError("only 8-bit PGM is supported")
    pos += 1
    arr = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)
    return arr.astype(np.float64) / maxval


def write_sequence(directory, frames, truth):
    """One PGM per frame plus ``truth.csv`` with ``frame,x,y,scale,orientation``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, f in enumerate(frames):
        write_pgm(directory / f"frame_{t:05d}.pgm", f)
    with open(directory / "truth.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["frame", "x", "y", "scale", "orientation"])
        for t, s in enumerate(truth):
            wr.writerow([t, repr(s.position[0]), repr(s.position[1]), repr(s.scale), repr(s.orientation)])


def read_sequence(directory):
    directory = Path(directory)
    frames = [read_pgm(p) for p in sorted(directory.glob("frame_*.pgm"))]
    truth = []
    with open(directory / "truth.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            truth.append(
                State(
                    position=(float(row["x"]), float(row["y"])),
                    log_scale=float(np.log(float(row["scale"]))),
                    orientation=float(row["orientation"]),
                )
            )
    return frames, truth
