"""Loop comparison up to the reparametrization action.

Loops arrive as uniformly sampled closed polygons, possibly in reduced
(angle-wrapped) coordinates and possibly only closed up to a deck offset.
Distances are computed after unwrapping, with Catmull-Rom evaluation of one
loop against the samples of the other, minimized over the continuous phase
shift; interpolation error is O(h^4), far below identification thresholds.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

WrapFn = Callable[[np.ndarray], np.ndarray]


def unwrap_loop(loop: np.ndarray, wrap: Optional[WrapFn]) -> tuple[np.ndarray, np.ndarray]:
    """Continuous representative of a reduced loop, plus its closure offset.

    Consecutive jumps are minimized modulo the wrap; the returned offset is
    x(1) - x(0) of the continuous representative (a deck period vector).
    """
    loop = np.asarray(loop, dtype=float)
    if wrap is None:
        diffs = np.diff(loop, axis=0)
        close = loop[0] - loop[-1]
    else:
        diffs = wrap(np.diff(loop, axis=0))
        close = wrap(loop[0] - loop[-1])
    cont = np.vstack([loop[0], loop[0] + np.cumsum(diffs, axis=0)])
    offset = cont[-1] + close - cont[0]
    return cont, offset


def eval_loop(cont: np.ndarray, offset: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """Catmull-Rom evaluation of the unwrapped loop at parameters ts in R.

    The loop is parametrized on [0, 1) by sample index; parameter p + 1 maps
    to the point translated by the closure offset.
    """
    n = len(cont)
    ts = np.asarray(ts, dtype=float)
    shifts = np.floor(ts)
    u = (ts - shifts) * n
    k = np.minimum(u.astype(int), n - 1)
    f = (u - k)[:, None]

    def node(idx):
        wrapped = idx % n
        turns = idx // n
        return cont[wrapped] + turns[:, None] * offset[None, :]

    p0 = node(k - 1)
    p1 = node(k)
    p2 = node(k + 1)
    p3 = node(k + 2)
    m1 = 0.5 * (p2 - p0)
    m2 = 0.5 * (p3 - p1)
    f2, f3 = f * f, f * f * f
    out = ((2 * f3 - 3 * f2 + 1) * p1 + (f3 - 2 * f2 + f) * m1
           + (-2 * f3 + 3 * f2) * p2 + (f3 - f2) * m2)
    return out + shifts[:, None] * offset[None, :]


def eval_extended(ext: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """Catmull-Rom evaluation on an explicitly extended node array.

    ``ext`` holds 3N nodes at parameters (j - N)/N, covering [-1, 2); one
    period at any phase shift in [0, 1) stays safely interior.
    """
    n = len(ext) // 3
    ts = np.asarray(ts, dtype=float)
    u = ts * n + n
    k = np.clip(u.astype(int), 1, len(ext) - 3)
    f = (u - k)[:, None]
    p0, p1, p2, p3 = ext[k - 1], ext[k], ext[k + 1], ext[k + 2]
    m1 = 0.5 * (p2 - p0)
    m2 = 0.5 * (p3 - p1)
    f2, f3 = f * f, f * f * f
    return ((2 * f3 - 3 * f2 + 1) * p1 + (f3 - 2 * f2 + f) * m1
            + (-2 * f3 + 3 * f2) * p2 + (f3 - f2) * m2)


def min_shift_distance(loop_a: np.ndarray, loop_b: np.ndarray,
                       wrap: Optional[WrapFn] = None,
                       coarse: int = 96, refine_iters: int = 48,
                       extended_b: bool = False) -> float:
    """min over phase shifts tau of max_k |a(t_k) - b(t_k + tau)|.

    Realizes identification of loops modulo the reparametrization circle
    action; the shift is continuous (golden-section refined around the best
    coarse offset).  With ``extended_b`` the second argument holds 2N nodes
    covering two periods (for loops closed by a non-translation deck map).
    """
    if extended_b:
        a_cont = np.asarray(loop_a, dtype=float)
        na = len(a_cont)
        ts = np.arange(na) / na

        def dist(tau: float) -> float:
            b_pts = eval_extended(loop_b, ts + tau)
            return float(np.max(np.abs(a_cont - b_pts)))

        taus = np.arange(coarse) / coarse
        vals = [dist(t) for t in taus]
        i0 = int(np.argmin(vals))
        return _golden(dist, taus[i0] - 1.0 / coarse, taus[i0] + 1.0 / coarse,
                       refine_iters, vals[i0])

    a_cont, a_off = unwrap_loop(loop_a, wrap)
    b_cont, b_off = unwrap_loop(loop_b, wrap)
    na = len(a_cont)
    ts = np.arange(na) / na

    def dist(tau: float) -> float:
        b_pts = eval_loop(b_cont, b_off, ts + tau)
        diff = a_cont - b_pts
        if wrap is not None:
            diff = wrap(diff)
        return float(np.max(np.abs(diff)))

    taus = np.arange(coarse) / coarse
    vals = [dist(t) for t in taus]
    i0 = int(np.argmin(vals))
    lo = taus[i0] - 1.0 / coarse
    hi = taus[i0] + 1.0 / coarse
    return _golden(dist, lo, hi, refine_iters, vals[i0])


def _golden(dist: Callable[[float], float], lo: float, hi: float,
            iters: int, best: float) -> float:
    phi = 0.5 * (np.sqrt(5.0) - 1.0)
    x1 = hi - phi * (hi - lo)
    x2 = lo + phi * (hi - lo)
    f1, f2 = dist(x1), dist(x2)
    for _ in range(iters):
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - phi * (hi - lo)
            f1 = dist(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + phi * (hi - lo)
            f2 = dist(x2)
    return min(f1, f2, best)
