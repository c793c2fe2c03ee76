"""Hot inner loops, each with a numba and a pure-numpy implementation.

The public functions dispatch on :data:`gazetrack._accel.USE_NUMBA`. Both
implementations are always importable so they can be compared directly.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

_CHUNK = 256


# ---------------------------------------------------------------------------
# foveated sampling
# ---------------------------------------------------------------------------


@njit
def _foveate_nb(frame, cx, cy, scale, cos_t, sin_t, dx, dy, starts):
    height, width = frame.shape
    m = cx.shape[0]
    n_out = starts.shape[0] - 1
    out = np.zeros((m, n_out))
    for p in range(m):
        s = scale[p]
        c = cos_t[p]
        sn = sin_t[p]
        x0 = cx[p]
        y0 = cy[p]
        for o in range(n_out):
            acc = 0.0
            lo = starts[o]
            hi = starts[o + 1]
            for q in range(lo, hi):
                px = x0 + s * (c * dx[q] - sn * dy[q])
                py = y0 + s * (sn * dx[q] + c * dy[q])
                col = np.floor(px + 0.5)
                row = np.floor(py + 0.5)
                if 0.0 <= col < width and 0.0 <= row < height:
                    acc += frame[int(row), int(col)]
            out[p, o] = acc / (hi - lo)
    return out


def _foveate_np(frame, cx, cy, scale, cos_t, sin_t, dx, dy, starts):
    height, width = frame.shape
    m = cx.shape[0]
    counts = np.diff(starts).astype(np.float64)
    out = np.empty((m, counts.shape[0]))
    flat = frame.ravel()
    for lo in range(0, m, _CHUNK):
        sl = slice(lo, min(lo + _CHUNK, m))
        s = scale[sl, None]
        c = cos_t[sl, None]
        sn = sin_t[sl, None]
        px = cx[sl, None] + s * (c * dx[None, :] - sn * dy[None, :])
        py = cy[sl, None] + s * (sn * dx[None, :] + c * dy[None, :])
        col = np.floor(px + 0.5)
        row = np.floor(py + 0.5)
        inside = (col >= 0) & (col < width) & (row >= 0) & (row < height)
        idx = np.where(inside, row * width + col, 0).astype(np.intp)
        vals = np.where(inside, flat[idx], 0.0)
        out[sl] = np.add.reduceat(vals, starts[:-1], axis=1) / counts
    return out


def foveate_points(frame, cx, cy, scale, orientation, dx, dy, starts, use_numba=None):
    """Area-average sub-sample groups around many centers at once.

    Parameters
    ----------
    frame : (H, W) float array
    cx, cy, scale, orientation : (M,) arrays
        Center (pixel x = column, y = row), scale multiplier and rotation of
        each glimpse.
    dx, dy : (S,) arrays
        Sub-sample offsets at unit scale, grouped contiguously by output.
    starts : (n_out + 1,) int array
        Group boundaries into ``dx``/``dy``.

    Returns
    -------
    (M, n_out) array. Samples landing outside the frame read as 0.
    """
    if use_numba is None:
        use_numba = USE_NUMBA
    frame = np.ascontiguousarray(frame, dtype=np.float64)
    cx = np.ascontiguousarray(cx, dtype=np.float64)
    cy = np.ascontiguousarray(cy, dtype=np.float64)
    scale = np.ascontiguousarray(scale, dtype=np.float64)
    orientation = np.asarray(orientation, dtype=np.float64)
    cos_t = np.ascontiguousarray(np.cos(orientation))
    sin_t = np.ascontiguousarray(np.sin(orientation))
    fn = _foveate_nb if use_numba else _foveate_np
    return fn(frame, cx, cy, scale, cos_t, sin_t, dx, dy, starts)


# ---------------------------------------------------------------------------
# Bhattacharyya likelihood
# ---------------------------------------------------------------------------


@njit
def _bhatt_nb(observed, template, bandwidth):
    m, n = observed.shape
    q_sum = 0.0
    for j in range(n):
        q_sum += template[j]
    out = np.empty(m)
    for i in range(m):
        p_sum = 0.0
        for j in range(n):
            p_sum += observed[i, j]
        bc = 0.0
        for j in range(n):
            bc += np.sqrt(observed[i, j] * template[j])
        bc = bc / np.sqrt(p_sum * q_sum)
        if bc < 1e-12:
            bc = 1e-12
        elif bc > 1.0:
            bc = 1.0
        out[i] = np.exp(-np.sqrt(1.0 - bc) / bandwidth)
    return out


def _bhatt_np(observed, template, bandwidth):
    p_sum = observed.sum(axis=1)
    q_sum = template.sum()
    bc = np.sqrt(observed * template[None, :]).sum(axis=1) / np.sqrt(p_sum * q_sum)
    bc = np.clip(bc, 1e-12, 1.0)
    return np.exp(-np.sqrt(1.0 - bc) / bandwidth)


def bhattacharyya_likelihood(observed, template, bandwidth, use_numba=None):
    """``exp(-sqrt(1 - BC) / bandwidth)`` for each row of ``observed``.

    Rows and ``template`` are normalized to unit sum before the
    Bhattacharyya coefficient is taken.
    """
    if use_numba is None:
        use_numba = USE_NUMBA
    observed = np.ascontiguousarray(np.atleast_2d(observed), dtype=np.float64)
    template = np.ascontiguousarray(template, dtype=np.float64)
    fn = _bhatt_nb if use_numba else _bhatt_np
    return fn(observed, template, float(bandwidth))


# ---------------------------------------------------------------------------
# systematic resampling
# ---------------------------------------------------------------------------


@njit
def _systematic_nb(weights, u):
    n = weights.shape[0]
    out = np.empty(n, dtype=np.int64)
    cum = weights[0]
    j = 0
    for i in range(n):
        pos = (u + i) / n
        while cum <= pos and j < n - 1:
            j += 1
            cum += weights[j]
        out[i] = j
    return out


def _systematic_np(weights, u):
    n = weights.shape[0]
    positions = (u + np.arange(n)) / n
    idx = np.searchsorted(np.cumsum(weights), positions, side="right")
    return np.minimum(idx, n - 1).astype(np.int64)


def systematic_indices(weights, u, use_numba=None):
    """Ancestor indices for systematic resampling with offset ``u`` in [0, 1)."""
    if use_numba is None:
        use_numba = USE_NUMBA
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    fn = _systematic_nb if use_numba else _systematic_np
    return fn(weights, float(u))
