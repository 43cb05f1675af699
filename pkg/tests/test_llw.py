"""Sum-to-zero solver: frozen optima, invariants, worker independence."""

import numpy as np
import pytest

from conftest import make_synthetic
from mcsvm.dataset import parse_libsvm
from mcsvm.llw import (
    llw_dual_objective,
    llw_duality_gap,
    llw_init,
    llw_kkt_violation,
    llw_primal_objective,
    llw_sync,
    llw_train,
    llw_update_coordinate,
    llw_weights,
)
from mcsvm.solver import SolverConfig


def test_toy_frozen_optimum(toy_ds):
    model, state, stats = llw_train(toy_ds, SolverConfig(c_reg=1.0))
    assert stats.converged
    assert llw_dual_objective(state) == pytest.approx(1.5, abs=1e-12)
    assert model.weights == pytest.approx(
        np.array([[0.5, -0.5], [-0.5, 0.5]]), abs=1e-12
    )
    assert state.alpha == pytest.approx(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert llw_duality_gap(state) == pytest.approx(0.0, abs=1e-12)
    assert llw_kkt_violation(state) == 0.0


def test_toy_weights_are_negated_state(toy_ds):
    _, state, _ = llw_train(toy_ds, SolverConfig())
    assert np.array_equal(llw_weights(state).weights, -state.u)


def test_update_coordinate_rejects_own_class(toy_ds):
    state = llw_init(toy_ds, SolverConfig())
    with pytest.raises(ValueError, match="own-class"):
        llw_update_coordinate(state, 0, 0)
    with pytest.raises(IndexError):
        llw_update_coordinate(state, 5, 0)
    with pytest.raises(IndexError):
        llw_update_coordinate(state, 0, 9)


def test_single_coordinate_step(toy_ds):
    state = llw_init(toy_ds, SolverConfig(c_reg=1.0))
    delta = llw_update_coordinate(state, 0, 1)
    assert delta == 1.0, "exact landing on the box bound"
    assert state.alpha[1, 0] == 1.0
    assert state.u[1].tolist() == [1.0, 0.0]
    assert not state.synced
    assert llw_update_coordinate(state, 0, 1) == 0.0, "band holds afterwards"


def test_sync_restores_zero_sum(toy_ds):
    state = llw_init(toy_ds, SolverConfig())
    llw_update_coordinate(state, 0, 1)
    llw_update_coordinate(state, 1, 0)
    llw_sync(state)
    assert state.synced
    assert np.abs(state.u.sum(axis=0)).max() < 1e-15
    before = state.u.copy()
    llw_sync(state)
    assert np.allclose(state.u, before, atol=1e-15), "re-sync is idempotent"


def test_sync_grouping_matches_plain_sum():
    ds = make_synthetic(40, 4, 12, seed=1)
    cfg = SolverConfig(c_reg=1.0)
    a = llw_init(ds, cfg)
    b = llw_init(ds, cfg)
    rng = np.random.default_rng(0)
    for _ in range(60):
        i = int(rng.integers(ds.num_samples))
        c = int(rng.integers(ds.num_classes))
        if int(ds.labels[i]) == c:
            continue
        llw_update_coordinate(a, i, c)
        llw_update_coordinate(b, i, c)
    llw_sync(a)
    llw_sync(b, bundles=((1, 2), (3, 4)))
    assert np.allclose(a.u, b.u, rtol=0, atol=1e-14)


def test_primal_requires_synced_state(toy_ds):
    state = llw_init(toy_ds, SolverConfig())
    llw_update_coordinate(state, 0, 1)
    with pytest.raises(ValueError, match="synced"):
        llw_primal_objective(state)


def test_box_and_structural_zeros_hold_exactly():
    ds = make_synthetic(60, 3, 15, seed=2)
    cfg = SolverConfig(c_reg=0.75, epsilon=1e-6, max_epochs=2000)
    _, state, stats = llw_train(ds, cfg)
    assert stats.converged
    assert state.alpha.min() >= 0.0
    assert state.alpha.max() <= 0.75, "clipped exactly, never beyond"
    rows = np.arange(ds.num_samples)
    assert np.all(state.alpha[ds.labels, rows] == 0.0)
    assert llw_kkt_violation(state) == 0.0


def test_dual_monotone_and_gap_positive():
    ds = make_synthetic(80, 4, 20, seed=3)
    _, _, stats = llw_train(ds, SolverConfig(c_reg=1.0, max_epochs=500))
    duals = [e.dual for e in stats.epochs]
    for prev, nxt in zip(duals, duals[1:]):
        assert nxt >= prev - 1e-12 * max(1.0, abs(prev))
    for e in stats.epochs:
        assert e.gap == e.primal - e.dual
        assert e.gap >= -1e-9


def test_worker_count_leaves_result_unchanged():
    ds = make_synthetic(60, 4, 16, seed=4)
    duals = []
    epochs = []
    for workers in (1, 2, 4):
        cfg = SolverConfig(c_reg=1.0, epsilon=1e-6, max_epochs=3000,
                           num_workers=workers, seed=9)
        _, state, stats = llw_train(ds, cfg)
        assert stats.converged
        duals.append(stats.final_dual())
        epochs.append(len(stats.epochs))
    spread = max(duals) - min(duals)
    assert spread <= 1e-9 * max(1.0, abs(duals[0]))
    assert min(epochs) == max(epochs), "same trajectory, same epoch count"


def test_shrinking_matches_full_sweeps():
    ds = make_synthetic(50, 3, 14, seed=5)
    base = dict(c_reg=1.0, epsilon=1e-7, max_epochs=4000, seed=2)
    _, _, with_shrink = llw_train(ds, SolverConfig(**base))
    _, _, without = llw_train(ds, SolverConfig(shrinking=False, **base))
    assert with_shrink.converged and without.converged
    rel = abs(with_shrink.final_dual() - without.final_dual())
    assert rel <= 1e-8 * max(1.0, abs(without.final_dual()))


def test_no_shrink_visits_every_candidate():
    ds = make_synthetic(30, 3, 10, seed=6)
    _, _, stats = llw_train(
        ds, SolverConfig(c_reg=1.0, shrinking=False, max_epochs=200)
    )
    total = ds.num_samples * (ds.num_classes - 1)
    assert all(e.active == total for e in stats.epochs)


def test_shrinking_reduces_active_set():
    ds = make_synthetic(80, 4, 20, seed=7)
    _, _, stats = llw_train(ds, SolverConfig(c_reg=1.0, max_epochs=2000))
    assert stats.converged
    total = ds.num_samples * (ds.num_classes - 1)
    assert min(e.active for e in stats.epochs) < total
    assert stats.epochs[-1].active == total, "final verification pass is full"


def test_max_epochs_cap_reports_non_convergence():
    ds = make_synthetic(60, 3, 15, seed=8)
    _, _, stats = llw_train(ds, SolverConfig(c_reg=10.0, epsilon=1e-12, max_epochs=2))
    assert not stats.converged
    assert len(stats.epochs) == 2


def test_active_respects_shrink_bookkeeping(toy_ds):
    state = llw_init(toy_ds, SolverConfig(shrinking=True, shrink_after=3))
    assert state.active(0).tolist() == [1]
    assert state.active(1).tolist() == [0]
    state.epoch = 10
    assert state.active(0).tolist() == [], "stale coordinates drop out"


def test_gap_trace_closes_on_convergence():
    ds = make_synthetic(100, 5, 25, seed=9)
    _, _, stats = llw_train(ds, SolverConfig(c_reg=1.0, max_epochs=2000))
    assert stats.converged
    assert stats.epochs[-1].gap <= stats.epochs[0].gap / 100.0


def test_empty_feature_rows_are_inert():
    ds = parse_libsvm("a 1:1\nb\nb 2:1\n")
    model, state, stats = llw_train(ds, SolverConfig(c_reg=1.0))
    assert stats.converged
    assert np.all(state.alpha[:, 1] == 0.0), "zero-norm rows never move"
