"""Bundled 28x28 binary digit glyphs drawn from stroke definitions, and an IDX reader."""

import gzip
import struct
from functools import lru_cache

import numpy as np

GLYPH_SIZE = 28
_MARGIN = 4.0
_THICKNESS = 2.6


def _arc(cx, cy, rx, ry, a0, a1, n=24):
    a = np.radians(np.linspace(a0, a1, n))
    return list(zip(cx + rx * np.cos(a), cy + ry * np.sin(a)))


# Polylines in a unit box, x to the right and y downward.
_STROKES = {
    0: [_arc(0.5, 0.5, 0.34, 0.5, 0, 360, 40)],
    1: [[(0.3, 0.2), (0.55, 0.0), (0.55, 1.0)], [(0.3, 1.0), (0.8, 1.0)]],
    2: [_arc(0.5, 0.28, 0.32, 0.28, 180, 385) + [(0.12, 1.0), (0.9, 1.0)]],
    3: [_arc(0.45, 0.26, 0.33, 0.26, 200, 450), _arc(0.45, 0.74, 0.36, 0.26, 270, 520)],
    4: [[(0.68, 1.0), (0.68, 0.0), (0.08, 0.7), (0.92, 0.7)]],
    5: [[(0.85, 0.0), (0.22, 0.0), (0.17, 0.45)] + _arc(0.47, 0.68, 0.36, 0.32, 235, 505)],
    6: [[(0.78, 0.02), (0.3, 0.45)], _arc(0.5, 0.7, 0.32, 0.3, 0, 360, 36)],
    7: [[(0.08, 0.0), (0.92, 0.0), (0.38, 1.0)], [(0.3, 0.52), (0.75, 0.52)]],
    8: [_arc(0.5, 0.24, 0.26, 0.24, 0, 360, 32), _arc(0.5, 0.74, 0.32, 0.26, 0, 360, 32)],
    9: [_arc(0.5, 0.3, 0.3, 0.3, 0, 360, 36), [(0.8, 0.3), (0.62, 1.0)]],
}


def _seg_distance(px, py, x0, y0, x1, y1):
    vx, vy = x1 - x0, y1 - y0
    L2 = vx * vx + vy * vy
    if L2 == 0:
        t = np.zeros_like(px)
    else:
        t = np.clip(((px - x0) * vx + (py - y0) * vy) / L2, 0.0, 1.0)
    return np.hypot(px - (x0 + t * vx), py - (y0 + t * vy))


@lru_cache(maxsize=None)
def _render(digit):
    span = GLYPH_SIZE - 2 * _MARGIN
    yy, xx = np.mgrid[0:GLYPH_SIZE, 0:GLYPH_SIZE].astype(float)
    dist = np.full((GLYPH_SIZE, GLYPH_SIZE), np.inf)
    for stroke in _STROKES[digit]:
        pts = [(_MARGIN + span * x, _MARGIN + span * y) for x, y in stroke]
        for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
            dist = np.minimum(dist, _seg_distance(xx, yy, x0, y0, x1, y1))
    img = (dist <= _THICKNESS / 2).astype(np.float64)
    img.setflags(write=False)
    return img


def glyph(digit):
    """Binary 28x28 image of a bundled digit glyph (read-only)."""
    if digit not in _STROKES:
        raise KeyError(f"no bundled glyph for {digit!r}")
    return _render(int(digit))


def bundled_glyphs():
    """``{class_label: image}`` for the ten bundled digits."""
    return {d: glyph(d) for d in range(10)}


def read_idx(path):
    """Read an IDX file (MNIST layout); ``.gz`` files are decompressed."""
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        data = fh.read()
    zero, dtype_code, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0:
        raise ValueError("not an IDX file")
    dtypes = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
    if dtype_code not in dtypes:
        raise ValueError(f"unsupported IDX type code {dtype_code:#x}")
    dims = struct.unpack(">" + "I" * ndim, data[4 : 4 + 4 * ndim])
    arr = np.frombuffer(data, dtype=dtypes[dtype_code], offset=4 + 4 * ndim)
    return arr.reshape(dims)


def write_idx(path, array):
    array = np.asarray(array)
    codes = {np.dtype("uint8"): 0x08, np.dtype("int8"): 0x09}
    code = codes[array.dtype]
    with open(path, "wb") as fh:
        fh.write(struct.pack(">HBB", 0, code, array.ndim))
        fh.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        fh.write(array.tobytes())


def glyphs_from_mnist(images_path, labels_path, threshold=128):
    """First example of each digit from MNIST IDX files, binarized."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise ValueError("expected a 3-D image IDX file (magic 0x00000803)")
    out = {}
    for d in range(10):
        hits = np.flatnonzero(labels == d)
        if hits.size:
            out[d] = (images[hits[0]] >= threshold).astype(np.float64)
    return out
