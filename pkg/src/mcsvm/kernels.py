"""Compiled coordinate-update kernels.

Every kernel releases the GIL so the worker pools get true parallelism.
All of them implement the same box-constrained exact line search: with
gradient g at the current point, the step is delta = -g / curvature clipped
so the dual variable stays in [0, c_reg]; nothing moves while g sits inside
the [-eps, eps] band, and such visits count as "not updated" for shrinking.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .solver import NEVER_SHRINK


@njit(cache=True, nogil=True)
def llw_step(indptr, cols, vals, norms, u_c, alpha_c, i, c_reg, eps):
    """One exact coordinate step for sample i against one class.

    u_c accumulates the class state so that the prediction-side weight is
    its negation; returns the applied step (0.0 when the band holds).
    """
    k = norms[i]
    if k <= 0.0:
        return 0.0
    g = -1.0
    for p in range(indptr[i], indptr[i + 1]):
        g += u_c[cols[p]] * vals[p]
    a = alpha_c[i]
    delta = 0.0
    new_a = a
    if g < -eps:
        if a < c_reg:
            delta = -g / k
            if delta >= c_reg - a:
                # Land exactly on the bound so box membership stays exact.
                delta = c_reg - a
                new_a = c_reg
            else:
                new_a = a + delta
    elif g > eps:
        if a > 0.0:
            delta = -g / k
            if delta <= -a:
                delta = -a
                new_a = 0.0
            else:
                new_a = a + delta
    if delta != 0.0:
        alpha_c[i] = new_a
        for p in range(indptr[i], indptr[i + 1]):
            u_c[cols[p]] += delta * vals[p]
    return delta


@njit(cache=True, nogil=True)
def llw_sweep(indptr, cols, vals, norms, u_c, alpha_c, order, start, stop,
              c_reg, eps, epoch, last_update_c):
    updates = 0
    for t in range(start, stop):
        i = order[t]
        if llw_step(indptr, cols, vals, norms, u_c, alpha_c, i, c_reg, eps) != 0.0:
            last_update_c[i] = epoch
            updates += 1
    return updates


@njit(cache=True, nogil=True)
def ww_step(indptr, cols, vals, norms, w_own, w_other, alpha_other, i, c_reg, eps):
    """One step for coordinate (sample i, competitor class) in the pairwise
    formulation; w_own belongs to the sample's label class. Curvature is
    doubled because both weight vectors move.
    """
    k = norms[i]
    if k <= 0.0:
        return 0.0
    g = -1.0
    for p in range(indptr[i], indptr[i + 1]):
        j = cols[p]
        g += (w_own[j] - w_other[j]) * vals[p]
    a = alpha_other[i]
    delta = 0.0
    new_a = a
    if g < -eps:
        if a < c_reg:
            delta = -g / (2.0 * k)
            if delta >= c_reg - a:
                delta = c_reg - a
                new_a = c_reg
            else:
                new_a = a + delta
    elif g > eps:
        if a > 0.0:
            delta = -g / (2.0 * k)
            if delta <= -a:
                delta = -a
                new_a = 0.0
            else:
                new_a = a + delta
    if delta != 0.0:
        alpha_other[i] = new_a
        for p in range(indptr[i], indptr[i + 1]):
            j = cols[p]
            v = delta * vals[p]
            w_own[j] += v
            w_other[j] -= v
    return delta


@njit(cache=True, nogil=True)
def ww_sweep(indptr, cols, vals, norms, w_own, w_other, alpha_other, candidates,
             c_reg, eps, epoch, thresh, last_update_other):
    """Sweep the label class's samples for one pair direction.

    candidates holds the label class's sample ids in traversal order;
    shrunk coordinates (stale last-update) are skipped inline. Returns
    (updates, visited).
    """
    updates = 0
    visited = 0
    for t in range(candidates.shape[0]):
        i = candidates[t]
        if last_update_other[i] < thresh:
            continue
        visited += 1
        if ww_step(indptr, cols, vals, norms, w_own, w_other, alpha_other,
                   i, c_reg, eps) != 0.0:
            last_update_other[i] = epoch
            updates += 1
    return updates, visited


@njit(cache=True, nogil=True)
def ovr_step(indptr, cols, vals, norms, labels, w_c, beta_c, i, c, c_reg, eps):
    """Binary hinge dual step; the sample's sign is +1 on class c, else -1."""
    k = norms[i]
    if k <= 0.0:
        return 0.0
    s = 1.0 if labels[i] == c else -1.0
    g = -1.0
    for p in range(indptr[i], indptr[i + 1]):
        g += w_c[cols[p]] * vals[p] * s
    b = beta_c[i]
    delta = 0.0
    new_b = b
    if g < -eps:
        if b < c_reg:
            delta = -g / k
            if delta >= c_reg - b:
                delta = c_reg - b
                new_b = c_reg
            else:
                new_b = b + delta
    elif g > eps:
        if b > 0.0:
            delta = -g / k
            if delta <= -b:
                delta = -b
                new_b = 0.0
            else:
                new_b = b + delta
    if delta != 0.0:
        beta_c[i] = new_b
        for p in range(indptr[i], indptr[i + 1]):
            w_c[cols[p]] += delta * s * vals[p]
    return delta


@njit(cache=True, nogil=True)
def ovr_sweep(indptr, cols, vals, norms, labels, w_c, beta_c, order, c, c_reg,
              eps, epoch, thresh, last_update_c):
    updates = 0
    visited = 0
    for t in range(order.shape[0]):
        i = order[t]
        if last_update_c[i] < thresh:
            continue
        visited += 1
        if ovr_step(indptr, cols, vals, norms, labels, w_c, beta_c, i, c,
                    c_reg, eps) != 0.0:
            last_update_c[i] = epoch
            updates += 1
    return updates, visited


def warm_up() -> None:
    """Compile every kernel on a one-sample problem (useful before timing)."""
    indptr = np.array([0, 1], dtype=np.int64)
    cols = np.array([0], dtype=np.int32)
    vals = np.array([1.0])
    norms = np.array([1.0])
    labels = np.array([0], dtype=np.int32)
    order = np.array([0], dtype=np.int64)
    u = np.zeros(1)
    a = np.zeros(1)
    lu = np.zeros(1, dtype=np.int32)
    llw_sweep(indptr, cols, vals, norms, u, a, order, 0, 1, 1.0, 0.1, 1, lu)
    w1 = np.zeros(1)
    w2 = np.zeros(1)
    ww_sweep(indptr, cols, vals, norms, w1, w2, a, order, 1.0, 0.1, 1,
             NEVER_SHRINK, lu)
    ovr_sweep(indptr, cols, vals, norms, labels, w1, a, order, 0, 1.0, 0.1,
              1, NEVER_SHRINK, lu)
