"""DIRECT (dividing rectangles) global maximization over a box."""

import numpy as np


def _potentially_optimal(g, size, eps):
    """Indices of potentially-optimal rectangles (minimizing ``g``).

    For each distinct size keep the lowest-index rectangle attaining the
    group's minimum, then apply the convex-hull test with the
    ``eps * |g_min|`` sufficient-decrease condition.
    """
    g_min = g.min()
    keys = np.round(size, 12)
    uniq = np.unique(keys)
    cand = []
    for u in uniq:
        members = np.flatnonzero(keys == u)
        cand.append(members[np.argmin(g[members])])
    cand = np.array(cand)
    cg = g[cand]
    cd = size[cand]
    chosen = []
    for a in range(len(cand)):
        smaller = cd < cd[a]
        larger = cd > cd[a]
        lo = 0.0
        if smaller.any():
            lo = max(0.0, np.max((cg[a] - cg[smaller]) / (cd[a] - cd[smaller])))
        if larger.any():
            hi = np.min((cg[larger] - cg[a]) / (cd[larger] - cd[a]))
            if lo > hi:
                continue
            if cg[a] - hi * cd[a] > g_min - eps * abs(g_min):
                continue
        chosen.append(cand[a])
    return chosen


def direct_optimize(objective, lower, upper, budget=300, eps=1e-4, vectorized=False):
    """Maximize ``objective`` over the box ``[lower, upper]``.

    Deterministic: the center of the box is evaluated first and ties are
    resolved in favour of the earliest evaluated point.

    Parameters
    ----------
    objective : callable
        Maps a point (shape ``(D,)``) to a float, or a batch ``(M, D)`` to
        ``(M,)`` when ``vectorized`` is true.
    budget : int
        Maximum number of objective evaluations (>= 1).

    Returns
    -------
    (argmax, max)
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if budget < 1:
        raise ValueError("budget must be >= 1")
    D = lower.size
    span = upper - lower

    def evaluate(unit_points):
        pts = lower + span * np.atleast_2d(unit_points)
        if vectorized:
            vals = np.asarray(objective(pts), dtype=float).reshape(-1)
        else:
            vals = np.array([float(objective(p)) for p in pts])
        return -vals

    centers = [np.full(D, 0.5)]
    levels = [np.zeros(D, dtype=int)]
    g = list(evaluate(centers[0]))
    n_eval = 1

    while n_eval < budget:
        g_arr = np.asarray(g)
        lv = np.asarray(levels)
        size = 0.5 * np.sqrt(np.sum(3.0 ** (-2.0 * lv), axis=1))
        progressed = False
        for j in _potentially_optimal(g_arr, size, eps):
            lj = levels[j]
            dims = np.flatnonzero(lj == lj.min())
            if n_eval + 2 * dims.size > budget:
                continue
            delta = 3.0 ** (-(lj.min() + 1))
            c = centers[j]
            pts = []
            for i in dims:
                e = np.zeros(D)
                e[i] = delta
                pts.extend([c + e, c - e])
            vals = evaluate(np.array(pts))
            n_eval += len(pts)
            progressed = True
            w = np.minimum(vals[0::2], vals[1::2])
            new_level = lj.copy()
            for rank in np.argsort(w, kind="stable"):
                i = dims[rank]
                new_level[i] += 1
                for k in (0, 1):
                    centers.append(pts[2 * rank + k])
                    levels.append(new_level.copy())
                    g.append(vals[2 * rank + k])
            levels[j] = new_level
        if not progressed:
            break

    g_arr = np.asarray(g)
    best = int(np.argmin(g_arr))
    return lower + span * centers[best], float(-g_arr[best])
