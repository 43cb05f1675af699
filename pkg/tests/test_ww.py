"""Pairwise-margin solver: frozen optima, tournament execution, invariants."""

from collections import Counter
from itertools import combinations

import numpy as np
import pytest

from conftest import make_synthetic
from mcsvm.solver import SolverConfig
from mcsvm.ww import (
    hinge_from_scores,
    ww_dual_objective,
    ww_duality_gap,
    ww_init,
    ww_kkt_violation,
    ww_train,
    ww_update_coordinate,
)


def test_toy_frozen_optimum(toy_ds):
    model, state, stats = ww_train(toy_ds, SolverConfig(c_reg=10.0))
    assert stats.converged
    assert ww_dual_objective(state) == pytest.approx(0.5, abs=1e-12)
    assert model.weights == pytest.approx(
        np.array([[0.5, -0.5], [-0.5, 0.5]]), abs=1e-12
    )
    assert state.alpha == pytest.approx(np.array([[0.0, 0.5], [0.5, 0.0]]))
    assert ww_duality_gap(state) == pytest.approx(0.0, abs=1e-12)
    assert ww_kkt_violation(state) == 0.0


def test_update_coordinate_moves_both_weight_rows(toy_ds):
    state = ww_init(toy_ds, SolverConfig(c_reg=10.0))
    delta = ww_update_coordinate(state, 0, 1)
    assert delta == pytest.approx(0.5), "interior step -g/(2k)"
    assert state.w[0].tolist() == [0.5, 0.0]
    assert state.w[1].tolist() == [-0.5, 0.0]
    assert state.alpha[1, 0] == 0.5


def test_update_coordinate_validation(toy_ds):
    state = ww_init(toy_ds, SolverConfig())
    with pytest.raises(ValueError, match="implicit"):
        ww_update_coordinate(state, 0, 0)
    with pytest.raises(IndexError):
        ww_update_coordinate(state, 9, 1)
    with pytest.raises(IndexError):
        ww_update_coordinate(state, 0, 7)


def test_hinge_from_scores_matches_naive():
    rng = np.random.default_rng(5)
    scores = rng.standard_normal((6, 4))
    labels = rng.integers(0, 4, size=6).astype(np.int32)
    naive = 0.0
    for i in range(6):
        for c in range(4):
            if c != labels[i]:
                naive += max(0.0, 1.0 - (scores[i, labels[i]] - scores[i, c]))
    assert hinge_from_scores(scores, labels) == pytest.approx(naive)


def test_box_and_structural_zeros_hold_exactly():
    ds = make_synthetic(60, 4, 16, seed=11)
    cfg = SolverConfig(c_reg=0.5, epsilon=1e-6, max_epochs=3000)
    _, state, stats = ww_train(ds, cfg)
    assert stats.converged
    assert state.alpha.min() >= 0.0
    assert state.alpha.max() <= 0.5
    rows = np.arange(ds.num_samples)
    assert np.all(state.alpha[ds.labels, rows] == 0.0)
    assert ww_kkt_violation(state) == 0.0


def test_dual_monotone_every_epoch():
    ds = make_synthetic(90, 5, 24, seed=12)
    _, _, stats = ww_train(ds, SolverConfig(c_reg=1.0, max_epochs=1000))
    duals = [e.dual for e in stats.epochs]
    for prev, nxt in zip(duals, duals[1:]):
        assert nxt >= prev - 1e-12 * max(1.0, abs(prev))


def test_worker_count_is_bitwise_invariant():
    # A round's pairs touch disjoint state, so any deal of pairs to workers
    # performs the same arithmetic. The trained model must be identical to
    # the byte across worker counts, not merely close.
    ds = make_synthetic(70, 5, 20, seed=13)
    reference = None
    for workers in (1, 2, 4):
        cfg = SolverConfig(c_reg=1.0, epsilon=1e-8, max_epochs=4000,
                           num_workers=workers, seed=3)
        model, _, stats = ww_train(ds, cfg)
        assert stats.converged
        if reference is None:
            reference = (model.weights, [e.dual for e in stats.epochs])
        else:
            assert np.array_equal(model.weights, reference[0])
            assert [e.dual for e in stats.epochs] == reference[1]


def test_instrument_covers_every_pair_once_per_epoch():
    ds = make_synthetic(40, 5, 16, seed=14)
    events = []
    cfg = SolverConfig(c_reg=1.0, max_epochs=300, num_workers=2)
    _, _, stats = ww_train(ds, cfg, instrument=lambda *ev: events.append(ev))
    expected = Counter(combinations(range(5), 2))
    for epoch, section, worker, a, b in events:
        assert 0 <= worker < 2
        assert 0 <= section < 5, "five tournament rounds for five classes"
    for epoch in range(1, len(stats.epochs) + 1):
        pairs = Counter(
            tuple(sorted((a, b))) for e, _, _, a, b in events if e == epoch
        )
        assert pairs == expected


def test_sections_are_visited_in_round_order():
    ds = make_synthetic(30, 4, 12, seed=15)
    events = []
    ww_train(ds, SolverConfig(max_epochs=50),
             instrument=lambda *ev: events.append(ev))
    last = {}
    for epoch, section, _, _, _ in events:
        if epoch in last:
            assert section >= last[epoch], "rounds execute as ordered barriers"
        last[epoch] = section


def test_shrinking_matches_full_sweeps():
    ds = make_synthetic(50, 4, 14, seed=16)
    base = dict(c_reg=1.0, epsilon=1e-7, max_epochs=4000, seed=2)
    _, _, with_shrink = ww_train(ds, SolverConfig(**base))
    _, _, without = ww_train(ds, SolverConfig(shrinking=False, **base))
    assert with_shrink.converged and without.converged
    diff = abs(with_shrink.final_dual() - without.final_dual())
    assert diff <= 1e-8 * max(1.0, abs(without.final_dual()))


def test_gap_closes_on_convergence():
    ds = make_synthetic(100, 4, 24, seed=17)
    _, _, stats = ww_train(ds, SolverConfig(c_reg=1.0, max_epochs=2000))
    assert stats.converged
    assert stats.epochs[-1].gap <= stats.epochs[0].gap / 100.0


def test_two_class_problem_has_single_pair():
    ds = make_synthetic(30, 2, 8, seed=18)
    events = []
    _, _, stats = ww_train(ds, SolverConfig(max_epochs=200),
                           instrument=lambda *ev: events.append(ev))
    assert stats.converged
    assert {(a, b) for _, _, _, a, b in events} == {(0, 1)}


def test_max_epochs_cap_reports_non_convergence():
    ds = make_synthetic(60, 3, 15, seed=19)
    _, _, stats = ww_train(ds, SolverConfig(c_reg=10.0, epsilon=1e-12, max_epochs=2))
    assert not stats.converged
    assert len(stats.epochs) == 2
