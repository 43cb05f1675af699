"""One-vs-rest baseline: independent binary hinge-loss SVMs per class.

Each class trains a binary dual coordinate ascent problem where its own
samples are positive and everything else negative, with the same epsilon
band, shrinking, and full-pass termination as the joint solvers. Classes
share nothing, so any scheduling over workers is valid and each class's
weight vector is bit-identical whether trained alone or with the rest
(per-class RNG streams are derived from (seed, class)).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from time import perf_counter

import numpy as np
import scipy.sparse as sp

from .dataset import SparseDataset
from .kernels import ovr_step, ovr_sweep
from .model import WeightMatrix
from .solver import NEVER_SHRINK, EpochStats, SolverConfig, TrainStats


@dataclass(eq=False)
class OvrState:
    """Per-class binary duals; beta[c, i] in [0, C] for every sample i."""

    dataset: SparseDataset
    config: SolverConfig
    w: np.ndarray
    beta: np.ndarray
    last_update: np.ndarray
    epochs_per_class: np.ndarray
    epoch: int = 0
    optimal: bool = False


def ovr_init(ds: SparseDataset, config: SolverConfig) -> OvrState:
    c, n, d = ds.num_classes, ds.num_samples, ds.num_features
    return OvrState(
        dataset=ds,
        config=config,
        w=np.zeros((c, d)),
        beta=np.zeros((c, n)),
        last_update=np.zeros((c, n), dtype=np.int32),
        epochs_per_class=np.zeros(c, dtype=np.int64),
    )


def ovr_update_coordinate(state: OvrState, i: int, c: int) -> float:
    ds = state.dataset
    if not 0 <= i < ds.num_samples:
        raise IndexError(f"sample {i} out of range")
    if not 0 <= c < ds.num_classes:
        raise IndexError(f"class {c} out of range")
    delta = ovr_step(
        ds.indptr, ds.col_indices, ds.values, ds.norms_sq, ds.labels,
        state.w[c], state.beta[c], i, c, state.config.c_reg, state.config.epsilon,
    )
    if delta != 0.0:
        state.last_update[c, i] = int(state.epochs_per_class[c]) + 1
        state.optimal = False
    return delta


def _signs(ds: SparseDataset, c: int) -> np.ndarray:
    return np.where(ds.labels == c, 1.0, -1.0)


def ovr_dual_objective(state: OvrState) -> float:
    flat = state.w.ravel()
    return float(state.beta.sum() - 0.5 * np.dot(flat, flat))


def ovr_primal_objective(state: OvrState, _csr: sp.csr_matrix | None = None) -> float:
    csr = state.dataset.to_csr() if _csr is None else _csr
    s = np.asarray(csr @ state.w.T)
    total = 0.0
    flat = state.w.ravel()
    for c in range(state.dataset.num_classes):
        margins = _signs(state.dataset, c) * s[:, c]
        total += np.maximum(0.0, 1.0 - margins).sum()
    return float(0.5 * np.dot(flat, flat) + state.config.c_reg * total)


def ovr_duality_gap(state: OvrState) -> float:
    return ovr_primal_objective(state) - ovr_dual_objective(state)


def ovr_kkt_violation(state: OvrState, _csr: sp.csr_matrix | None = None) -> float:
    csr = state.dataset.to_csr() if _csr is None else _csr
    s = np.asarray(csr @ state.w.T)
    eps, c_reg = state.config.epsilon, state.config.c_reg
    worst = 0.0
    for c in range(state.dataset.num_classes):
        g = _signs(state.dataset, c) * s[:, c] - 1.0
        beta = state.beta[c]
        low = (-g - eps) * ((g < -eps) & (beta < c_reg))
        high = (g - eps) * ((g > eps) & (beta > 0.0))
        worst = max(worst, float(np.maximum(low, high).max(initial=0.0)))
    return worst


def ovr_weights(state: OvrState) -> WeightMatrix:
    return WeightMatrix(state.w.copy(), state.dataset.label_names)


def _class_objectives(
    state: OvrState, c: int, csr: sp.csr_matrix
) -> tuple[float, float]:
    w_c = state.w[c]
    quad = 0.5 * float(np.dot(w_c, w_c))
    dual = float(state.beta[c].sum()) - quad
    margins = _signs(state.dataset, c) * np.asarray(csr @ w_c)
    hinge = float(np.maximum(0.0, 1.0 - margins).sum())
    return dual, quad + state.config.c_reg * hinge


def _train_class(
    state: OvrState, c: int, csr: sp.csr_matrix
) -> list[tuple[float, float, int, int, float]]:
    """Run class c to convergence.

    Returns per-epoch rows (dual, primal, updates, visited, seconds) for
    this binary subproblem.
    """
    ds = state.dataset
    cfg = state.config
    rng = np.random.default_rng([cfg.seed, c])
    trace: list[tuple[float, float, int, int, float]] = []
    pending_full = False
    for epoch in range(1, cfg.max_epochs + 1):
        tick = perf_counter()
        perm = rng.permutation(ds.num_samples)
        full_pass = pending_full or not cfg.shrinking
        thresh = NEVER_SHRINK if full_pass else epoch - cfg.shrink_after
        updates, visited = ovr_sweep(
            ds.indptr, ds.col_indices, ds.values, ds.norms_sq, ds.labels,
            state.w[c], state.beta[c], perm, c, cfg.c_reg, cfg.epsilon,
            epoch, thresh, state.last_update[c],
        )
        state.epochs_per_class[c] = epoch
        seconds = perf_counter() - tick
        dual, primal = _class_objectives(state, c, csr)
        trace.append((dual, primal, updates, visited, seconds))
        if updates == 0:
            if full_pass or visited == ds.num_samples:
                return trace
            pending_full = True
        else:
            pending_full = False
    return trace


def ovr_train(
    ds: SparseDataset, config: SolverConfig
) -> tuple[WeightMatrix, OvrState, TrainStats]:
    """Train every class to its own KKT-band optimum.

    Stats rows aggregate the independent per-class traces: row e sums each
    class's epoch-e objectives and counters, with classes that converged
    earlier contributing their final objective value (and no activity) to
    the later rows. The aggregated dual is therefore non-decreasing.
    """
    state = ovr_init(ds, config)
    num_classes = ds.num_classes
    csr = ds.to_csr()
    stats = TrainStats()
    started = perf_counter()
    workers = max(1, min(config.num_workers, num_classes))
    if workers == 1:
        traces = [_train_class(state, c, csr) for c in range(num_classes)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_train_class, state, c, csr) for c in range(num_classes)
            ]
            traces = [f.result() for f in futures]
    depth = max((len(t) for t in traces), default=0)
    for e in range(depth):
        dual = sum(t[min(e, len(t) - 1)][0] for t in traces if t)
        primal = sum(t[min(e, len(t) - 1)][1] for t in traces if t)
        visited = sum(t[e][3] for t in traces if e < len(t))
        seconds = sum(t[e][4] for t in traces if e < len(t))
        stats.record(EpochStats(e + 1, dual, primal, primal - dual, visited, seconds))
    state.epoch = depth
    state.optimal = all(len(t) == 0 or t[-1][2] == 0 for t in traces)
    stats.converged = all(
        len(t) < config.max_epochs or (t and t[-1][2] == 0) for t in traces
    )
    stats.wall_seconds = perf_counter() - started
    return ovr_weights(state), state, stats
