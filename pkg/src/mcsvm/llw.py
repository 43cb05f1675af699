"""Dual block coordinate ascent for the sum-to-zero multi-class SVM.

The trained objective couples all class weight vectors through a zero-sum
constraint. Its dual decouples into per-class subproblems once an auxiliary
mean vector is introduced; each class c keeps a running state vector

    u_c = (sum_i alpha[c, i] * x_i) - mean_vector

and the primal weight is w_c = -u_c. A coordinate step for (sample i,
class c != y_i) needs only u_c and x_i, so classes train in parallel.
Workers meet at a fixed number of barriers per epoch where the mean vector
is re-centered: Delta = mean over classes of u_c is subtracted from every
u_c, which is the exact block maximization over the auxiliary vector and
restores sum_c u_c = 0.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from time import perf_counter

import numpy as np
import scipy.sparse as sp

from .dataset import SparseDataset
from .kernels import llw_step, llw_sweep
from .model import WeightMatrix
from .sched import chunk_classes
from .solver import NEVER_SHRINK, EpochStats, SolverConfig, TrainStats


@dataclass(eq=False)
class LlwState:
    """Mutable training state; arrays are (num_classes, ...) row-major.

    alpha[c, i] is the dual variable of (sample i, class c); entries with
    labels[i] == c are structurally zero and never touched. last_update[c, i]
    holds the 1-based epoch of the coordinate's most recent non-zero step.
    synced means sum_c u_c = 0 (mean vector at its optimum), which primal
    objective evaluation requires; the trainer guarantees it at epoch
    boundaries (every epoch ends on a sync barrier).
    """

    dataset: SparseDataset
    config: SolverConfig
    u: np.ndarray
    alpha: np.ndarray
    last_update: np.ndarray
    epoch: int = 0
    synced: bool = True
    optimal: bool = False

    def active(self, c: int) -> np.ndarray:
        """Samples whose (i, c) coordinate the next epoch would traverse."""
        thresh = _shrink_threshold(self.config, self.epoch + 1, full_pass=False)
        mask = (self.dataset.labels != c) & (self.last_update[c] >= thresh)
        return np.nonzero(mask)[0]


def _shrink_threshold(config: SolverConfig, epoch: int, full_pass: bool) -> int:
    if full_pass or not config.shrinking:
        return NEVER_SHRINK
    return epoch - config.shrink_after


def llw_init(ds: SparseDataset, config: SolverConfig) -> LlwState:
    c, n, d = ds.num_classes, ds.num_samples, ds.num_features
    return LlwState(
        dataset=ds,
        config=config,
        u=np.zeros((c, d)),
        alpha=np.zeros((c, n)),
        last_update=np.zeros((c, n), dtype=np.int32),
    )


def llw_update_coordinate(state: LlwState, i: int, c: int) -> float:
    """Run one exact coordinate step; returns the applied delta.

    The coordinate for the sample's own class is fixed at zero and refused.
    """
    ds = state.dataset
    if not 0 <= i < ds.num_samples:
        raise IndexError(f"sample {i} out of range")
    if not 0 <= c < ds.num_classes:
        raise IndexError(f"class {c} out of range")
    if int(ds.labels[i]) == c:
        raise ValueError("own-class dual variable is fixed at zero")
    delta = llw_step(
        ds.indptr, ds.col_indices, ds.values, ds.norms_sq,
        state.u[c], state.alpha[c], i, state.config.c_reg, state.config.epsilon,
    )
    if delta != 0.0:
        state.last_update[c, i] = state.epoch + 1
        state.synced = False
        state.optimal = False
    return delta


def _sync_groups(num_classes: int, bundles) -> list[np.ndarray]:
    if bundles is None:
        return [np.arange(num_classes, dtype=np.int64)]
    return [np.asarray(b, dtype=np.int64) - 1 for b in bundles if len(b)]


def llw_sync(state: LlwState, bundles=None) -> None:
    """Re-center the mean vector: subtract Delta = mean_c u_c from every u_c.

    This is the exact maximization over the auxiliary vector for the current
    alpha, so the dual objective never decreases. When bundles (1-based class
    groups) are given, the class sum is accumulated per bundle in ascending
    bundle order; a distributed run reducing per-node partials in node order
    performs bit-identical arithmetic.
    """
    groups = _sync_groups(state.u.shape[0], bundles)
    total = np.zeros(state.u.shape[1])
    for rows in groups:
        total += state.u[rows].sum(axis=0)
    total /= state.u.shape[0]
    state.u -= total[None, :]
    state.synced = True


def llw_dual_objective(state: LlwState) -> float:
    flat = state.u.ravel()
    return float(state.alpha.sum() - 0.5 * np.dot(flat, flat))


def _scores(state: LlwState, csr: sp.csr_matrix | None = None) -> np.ndarray:
    if csr is None:
        csr = state.dataset.to_csr()
    return np.asarray(csr @ state.u.T)


def llw_primal_objective(state: LlwState, _csr: sp.csr_matrix | None = None) -> float:
    """Primal objective of W = -U; only defined on a synced state."""
    if not state.synced:
        raise ValueError("primal objective requires a synced state")
    s = _scores(state, _csr)
    hinge = np.maximum(0.0, 1.0 - s)
    hinge[np.arange(s.shape[0]), state.dataset.labels] = 0.0
    flat = state.u.ravel()
    return float(0.5 * np.dot(flat, flat) + state.config.c_reg * hinge.sum())


def llw_duality_gap(state: LlwState) -> float:
    return llw_primal_objective(state) - llw_dual_objective(state)


def llw_kkt_violation(state: LlwState, _csr: sp.csr_matrix | None = None) -> float:
    """Largest distance by which any coordinate's gradient leaves the
    epsilon band while its dual variable has room to move."""
    ds = state.dataset
    g = _scores(state, _csr) - 1.0
    alpha = state.alpha.T
    eps, c_reg = state.config.epsilon, state.config.c_reg
    low = (-g - eps) * ((g < -eps) & (alpha < c_reg))
    high = (g - eps) * ((g > eps) & (alpha > 0.0))
    viol = np.maximum(low, high)
    viol[np.arange(g.shape[0]), ds.labels] = 0.0
    return float(viol.max(initial=0.0))


def llw_weights(state: LlwState) -> WeightMatrix:
    return WeightMatrix(-state.u, state.dataset.label_names)


def _epoch_orders(state, rows, perm, thresh):
    labels = state.dataset.labels
    orders = []
    for c in rows:
        mask = (labels != c) & (state.last_update[c] >= thresh)
        orders.append((int(c), perm[mask[perm]]))
    return orders


def _worker_epoch(state, rows, perm, thresh, epoch, segments, barrier):
    ds = state.dataset
    cfg = state.config
    orders = _epoch_orders(state, rows, perm, thresh)
    active = sum(o.shape[0] for _, o in orders)
    updates = 0
    try:
        for s in range(segments):
            for c, order in orders:
                lo = s * order.shape[0] // segments
                hi = (s + 1) * order.shape[0] // segments
                updates += llw_sweep(
                    ds.indptr, ds.col_indices, ds.values, ds.norms_sq,
                    state.u[c], state.alpha[c], order, lo, hi,
                    cfg.c_reg, cfg.epsilon, epoch, state.last_update[c],
                )
            barrier.wait()
    except BaseException:
        barrier.abort()
        raise
    return updates, active


def llw_train(
    ds: SparseDataset, config: SolverConfig
) -> tuple[WeightMatrix, LlwState, TrainStats]:
    """Train to the KKT-band optimum or until max_epochs.

    Every epoch shuffles the traversal, sweeps each class's active
    coordinates (split over workers that each own a bundle of classes),
    and re-centers the mean vector at syncs_per_epoch evenly spaced
    barriers. Once an epoch applies no update, one full pass over all
    coordinates verifies optimality before termination.
    """
    state = llw_init(ds, config)
    n, num_classes = ds.num_samples, ds.num_classes
    counts = ds.class_counts()
    bundles = [
        b
        for b in chunk_classes(
            num_classes, min(config.num_workers, num_classes),
            sizes=(n - counts).tolist(),
        )
        if b
    ]
    groups = _sync_groups(num_classes, bundles)
    total_candidates = n * num_classes - n
    rng = np.random.default_rng(config.seed)
    csr = ds.to_csr()
    stats = TrainStats()
    barrier = threading.Barrier(len(bundles), action=lambda: llw_sync(state, bundles))
    pool = ThreadPoolExecutor(max_workers=len(bundles)) if len(bundles) > 1 else None
    started = perf_counter()
    pending_full = False
    try:
        for epoch in range(1, config.max_epochs + 1):
            tick = perf_counter()
            perm = rng.permutation(n)
            full_pass = pending_full or not config.shrinking
            thresh = _shrink_threshold(config, epoch, full_pass)
            rows = [np.asarray(b, dtype=np.int64) - 1 for b in bundles]
            if pool is None:
                results = [
                    _worker_epoch(state, rows[0], perm, thresh, epoch,
                                  config.syncs_per_epoch, barrier)
                ]
            else:
                futures = [
                    pool.submit(_worker_epoch, state, r, perm, thresh, epoch,
                                config.syncs_per_epoch, barrier)
                    for r in rows
                ]
                results = [f.result() for f in futures]
            updates = sum(r[0] for r in results)
            active = sum(r[1] for r in results)
            state.epoch = epoch
            state.optimal = updates == 0
            dual = llw_dual_objective(state)
            primal = llw_primal_objective(state, csr)
            stats.record(EpochStats(epoch, dual, primal, primal - dual,
                                    active, perf_counter() - tick))
            if updates == 0:
                if full_pass or active == total_candidates:
                    stats.converged = True
                    break
                pending_full = True
            else:
                pending_full = False
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
    stats.wall_seconds = perf_counter() - started
    return llw_weights(state), state, stats
