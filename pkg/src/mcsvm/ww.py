"""Dual block coordinate ascent for the pairwise-margin multi-class SVM.

Every sample i holds one dual variable per competitor class c != y_i,
box-constrained to [0, C]; the label class's own variable is implicit
(minus the row sum) and never stored. The stored w_c are the primal
weights themselves. A step on coordinate (i, c) moves w_{y_i} and w_c in
opposite directions, so two class pairs can be optimized concurrently iff
they share no class: epochs are organized as tournament rounds of disjoint
pairs. Within a pair (c, cb) the label-c samples are swept first, then the
label-cb samples, each in the epoch's shuffled order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from time import perf_counter
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .dataset import SparseDataset
from .kernels import ww_step, ww_sweep
from .model import WeightMatrix
from .sched import build_schedule
from .solver import NEVER_SHRINK, EpochStats, SolverConfig, TrainStats, partition_pairs

# Called as instrument(epoch, section, worker, c, cb) right before a pair runs.
PairInstrument = Callable[[int, int, int, int, int], None]


@dataclass(eq=False)
class WwState:
    """Mutable training state; w rows are primal class weights.

    alpha[c, i] is the dual variable of (sample i, competitor class c);
    label-class entries are structurally zero. last_update[c, i] is the
    1-based epoch of the coordinate's latest non-zero step.
    """

    dataset: SparseDataset
    config: SolverConfig
    w: np.ndarray
    alpha: np.ndarray
    last_update: np.ndarray
    epoch: int = 0
    optimal: bool = False

    def active(self, c: int) -> np.ndarray:
        thresh = _shrink_threshold(self.config, self.epoch + 1, full_pass=False)
        mask = (self.dataset.labels != c) & (self.last_update[c] >= thresh)
        return np.nonzero(mask)[0]


def _shrink_threshold(config: SolverConfig, epoch: int, full_pass: bool) -> int:
    if full_pass or not config.shrinking:
        return NEVER_SHRINK
    return epoch - config.shrink_after


def ww_init(ds: SparseDataset, config: SolverConfig) -> WwState:
    c, n, d = ds.num_classes, ds.num_samples, ds.num_features
    return WwState(
        dataset=ds,
        config=config,
        w=np.zeros((c, d)),
        alpha=np.zeros((c, n)),
        last_update=np.zeros((c, n), dtype=np.int32),
    )


def ww_update_coordinate(state: WwState, i: int, c: int) -> float:
    """One exact step on (sample i, competitor class c); returns the delta."""
    ds = state.dataset
    if not 0 <= i < ds.num_samples:
        raise IndexError(f"sample {i} out of range")
    if not 0 <= c < ds.num_classes:
        raise IndexError(f"class {c} out of range")
    y = int(ds.labels[i])
    if y == c:
        raise ValueError("own-class dual variable is implicit and fixed")
    delta = ww_step(
        ds.indptr, ds.col_indices, ds.values, ds.norms_sq,
        state.w[y], state.w[c], state.alpha[c], i,
        state.config.c_reg, state.config.epsilon,
    )
    if delta != 0.0:
        state.last_update[c, i] = state.epoch + 1
        state.optimal = False
    return delta


def ww_dual_objective(state: WwState) -> float:
    flat = state.w.ravel()
    return float(state.alpha.sum() - 0.5 * np.dot(flat, flat))


def _scores(state: WwState, csr: sp.csr_matrix | None = None) -> np.ndarray:
    if csr is None:
        csr = state.dataset.to_csr()
    return np.asarray(csr @ state.w.T)


def _pair_margins(state: WwState, csr: sp.csr_matrix | None) -> np.ndarray:
    s = _scores(state, csr)
    own = s[np.arange(s.shape[0]), state.dataset.labels]
    return own[:, None] - s


def hinge_from_scores(scores: np.ndarray, labels: np.ndarray) -> float:
    """Total pairwise hinge loss given the (n, num_classes) score matrix."""
    rows = np.arange(scores.shape[0])
    own = scores[rows, labels]
    hinge = np.maximum(0.0, 1.0 - (own[:, None] - scores))
    hinge[rows, labels] = 0.0
    return float(hinge.sum())


def ww_primal_objective(state: WwState, _csr: sp.csr_matrix | None = None) -> float:
    hinge = hinge_from_scores(_scores(state, _csr), state.dataset.labels)
    flat = state.w.ravel()
    return float(0.5 * np.dot(flat, flat) + state.config.c_reg * hinge)


def ww_duality_gap(state: WwState) -> float:
    return ww_primal_objective(state) - ww_dual_objective(state)


def ww_kkt_violation(state: WwState, _csr: sp.csr_matrix | None = None) -> float:
    g = _pair_margins(state, _csr) - 1.0
    alpha = state.alpha.T
    eps, c_reg = state.config.epsilon, state.config.c_reg
    low = (-g - eps) * ((g < -eps) & (alpha < c_reg))
    high = (g - eps) * ((g > eps) & (alpha > 0.0))
    viol = np.maximum(low, high)
    viol[np.arange(g.shape[0]), state.dataset.labels] = 0.0
    return float(viol.max(initial=0.0))


def ww_weights(state: WwState) -> WeightMatrix:
    return WeightMatrix(state.w.copy(), state.dataset.label_names)


def class_candidates(ds: SparseDataset, perm: np.ndarray) -> list[np.ndarray]:
    """Per-class sample ids in traversal order (shrink filtering happens
    inside the sweep against the competitor column's bookkeeping)."""
    labels = ds.labels
    return [perm[labels[perm] == c] for c in range(ds.num_classes)]


def run_pair(state: WwState, c: int, cb: int, cand: list[np.ndarray],
             epoch: int, thresh: int) -> tuple[int, int]:
    """Execute one class pair: label-c samples against column cb, then
    label-cb samples against column c. Returns (updates, visited)."""
    ds = state.dataset
    cfg = state.config
    u1, v1 = ww_sweep(
        ds.indptr, ds.col_indices, ds.values, ds.norms_sq,
        state.w[c], state.w[cb], state.alpha[cb], cand[c],
        cfg.c_reg, cfg.epsilon, epoch, thresh, state.last_update[cb],
    )
    u2, v2 = ww_sweep(
        ds.indptr, ds.col_indices, ds.values, ds.norms_sq,
        state.w[cb], state.w[c], state.alpha[c], cand[cb],
        cfg.c_reg, cfg.epsilon, epoch, thresh, state.last_update[c],
    )
    return u1 + u2, v1 + v2


def ww_train(
    ds: SparseDataset,
    config: SolverConfig,
    instrument: PairInstrument | None = None,
) -> tuple[WeightMatrix, WwState, TrainStats]:
    """Train to the KKT-band optimum or until max_epochs.

    Each epoch walks the tournament rounds; a round's pairs are dealt to
    workers balanced by sample weight and executed sequentially per worker.
    Pairs inside a round touch disjoint state, so the trained model is
    identical for every worker count. Termination mirrors the shrinking
    solver contract: a no-update epoch triggers one full pass over all
    coordinates, and a second no-update epoch ends training.
    """
    state = ww_init(ds, config)
    n, num_classes = ds.num_samples, ds.num_classes
    counts = ds.class_counts()
    weight_of = {c + 1: int(counts[c]) for c in range(num_classes)}
    rounds = build_schedule(num_classes) if num_classes > 1 else ()
    total_candidates = n * (num_classes - 1)
    num_workers = max(1, min(config.num_workers, max(num_classes // 2, 1)))
    rng = np.random.default_rng(config.seed)
    csr = ds.to_csr()
    stats = TrainStats()
    pool = ThreadPoolExecutor(max_workers=num_workers) if num_workers > 1 else None
    started = perf_counter()
    pending_full = False

    def run_group(group, epoch, section, worker, cand, thresh):
        upd = 0
        vis = 0
        for a, b in group:
            if instrument is not None:
                instrument(epoch, section, worker, a - 1, b - 1)
            u, v = run_pair(state, a - 1, b - 1, cand, epoch, thresh)
            upd += u
            vis += v
        return upd, vis

    try:
        for epoch in range(1, config.max_epochs + 1):
            tick = perf_counter()
            perm = rng.permutation(n)
            cand = class_candidates(ds, perm)
            full_pass = pending_full or not config.shrinking
            thresh = _shrink_threshold(config, epoch, full_pass)
            updates = 0
            active = 0
            for section, rnd in enumerate(rounds):
                groups = partition_pairs(rnd.pairs, weight_of, num_workers)
                if pool is None or len(groups) == 1:
                    results = [
                        run_group(g, epoch, section, w, cand, thresh)
                        for w, g in enumerate(groups)
                    ]
                else:
                    futures = [
                        pool.submit(run_group, g, epoch, section, w, cand, thresh)
                        for w, g in enumerate(groups)
                    ]
                    results = [f.result() for f in futures]
                updates += sum(r[0] for r in results)
                active += sum(r[1] for r in results)
            state.epoch = epoch
            state.optimal = updates == 0
            dual = ww_dual_objective(state)
            primal = ww_primal_objective(state, csr)
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
    return ww_weights(state), state, stats
