"""Numpy implementations of the hot loops.

Same signatures as the compiled ``_kernels_c`` module. Recursions are
vectorized across seeds (axis 0) and loop over time; the compiled twin
loops over both.
"""

from __future__ import annotations

import numpy as np


def _interp_table(alpha: np.ndarray, table: np.ndarray) -> np.ndarray:
    last = table.shape[0] - 1
    pos = alpha * last
    idx = np.minimum(pos.astype(np.int64), last - 1)
    idx = np.maximum(idx, 0)
    frac = pos - idx
    return table[idx] + frac * (table[idx + 1] - table[idx])


def rm_recursion(alpha0, uniforms, q_table, step0, lo, hi):
    """Robbins-Monro steps with 1/l gain driven by branch uniforms.

    Returns ``(alphas, alpha_next)`` where ``alphas[:, j]`` is the iterate
    *before* step ``step0 + j``.
    """
    alpha = np.array(alpha0, dtype=np.float64, copy=True)
    u = np.asarray(uniforms, dtype=np.float64)
    table = np.asarray(q_table, dtype=np.float64)
    n_steps = u.shape[1]
    out = np.empty_like(u)
    for j in range(n_steps):
        out[:, j] = alpha
        q = _interp_table(alpha, table)
        target = np.where(u[:, j] < q, (1.0 + alpha) / (3.0 - alpha), alpha / (2.0 - alpha))
        alpha = alpha + (target - alpha) / (step0 + j)
        np.clip(alpha, lo, hi, out=alpha)
    return out, alpha


def weight_recursion(w0, uniforms, q_table, increment, decay, floor):
    """Raw router weight dynamics; returns ``(alphas, w_next)``."""
    w = np.array(w0, dtype=np.float64, copy=True)
    u = np.asarray(uniforms, dtype=np.float64)
    table = np.asarray(q_table, dtype=np.float64)
    out = np.empty_like(u)
    for j in range(u.shape[1]):
        alpha = w / (w + 1.0)
        out[:, j] = alpha
        q = _interp_table(alpha, table)
        w = np.where(u[:, j] < q, w + increment, np.maximum(floor, decay * w))
    return out, w


def topk_above(sims, rank, k, tau):
    """Indices of the ``k`` best entries with ``sims >= tau``.

    Order: similarity descending, then ``rank`` ascending.
    """
    sims = np.asarray(sims, dtype=np.float64)
    rank = np.asarray(rank, dtype=np.int64)
    idx = np.flatnonzero(sims >= tau)
    if idx.size == 0:
        return idx.astype(np.int64)
    order = np.lexsort((rank[idx], -sims[idx]))
    return idx[order[:k]].astype(np.int64)
