"""Distributed training drivers over a message-passing transport.

Every node loads the full dataset (verified by content hash before any
training) and owns a bundle of classes. The sum-to-zero solver only ever
communicates the per-node partial sums of its class state vectors: the
mean-vector re-centering becomes one allreduce per synchronization point,
with contributions reduced in ascending node order so all nodes see
bit-identical floats. The pairwise-margin solver walks a two-level
schedule: intra-bundle rounds run locally; in each cross-bundle
super-round the lower-id node of a bundle pairing receives the partner's
class states (weight vector nonzeros plus the live dual variables and
shrinking stamps in one envelope), executes every cross pair, and returns
the updated states. End-of-epoch statistics travel in one more allreduce,
so every node reaches identical convergence decisions without a leader.

With one node both drivers execute the same arithmetic as their local
counterparts (single worker) step for step.
"""

from __future__ import annotations

import logging
import struct
from time import perf_counter

import numpy as np

from .dataset import SparseDataset
from .kernels import llw_sweep
from .llw import _epoch_orders, _shrink_threshold, llw_init
from .model import WeightMatrix
from .sched import chunk_classes, two_level_schedule
from .solver import EpochStats, SolverConfig, TrainStats, partition_pairs
from .transport import (
    TAG_HANDSHAKE,
    TAG_SPARSE_WEIGHT,
    SparseWeightMessage,
    Transport,
    TransportError,
)
from .ww import (
    PairInstrument,
    class_candidates,
    hinge_from_scores,
    run_pair,
    ww_init,
)

log = logging.getLogger(__name__)

# Dual-variable triples piggybacked on a weight envelope: sample id, alpha
# value, last-update epoch stamp. 16 bytes packed.
_TRIPLE_DTYPE = np.dtype([("i", "<u4"), ("a", "<f8"), ("t", "<u4")])
_COUNT = struct.Struct("<Q")


def _verify_dataset(transport: Transport, ds: SparseDataset) -> None:
    """Refuse to start unless every node holds byte-identical data."""
    if transport.num_nodes == 1:
        return
    digest = ds.content_hash()
    if transport.node_id == 0:
        for peer in range(1, transport.num_nodes):
            transport.send(peer, TAG_HANDSHAKE, digest)
        for peer in range(1, transport.num_nodes):
            _, theirs = transport.recv(peer, expect=TAG_HANDSHAKE)
            if theirs != digest:
                raise TransportError(
                    f"dataset content hash mismatch with node {peer}"
                )
    else:
        _, theirs = transport.recv(0, expect=TAG_HANDSHAKE)
        if theirs != digest:
            raise TransportError("dataset content hash mismatch with node 0")
        transport.send(0, TAG_HANDSHAKE, digest)


def _gather_model(
    transport: Transport, rows: np.ndarray, partial_rows: np.ndarray,
    num_classes: int, num_features: int,
) -> np.ndarray:
    """Assemble the full weight matrix on every node (reduced at node 0)."""
    buf = np.zeros((num_classes, num_features))
    buf[rows] = partial_rows
    return transport.allreduce_sum(buf.ravel()).reshape(num_classes, num_features)


def llw_distributed_train(
    ds: SparseDataset, config: SolverConfig, transport: Transport
) -> tuple[WeightMatrix, TrainStats]:
    """Class-partitioned training of the sum-to-zero solver.

    Identical coordinate steps to the local trainer; the mean-vector
    re-centering Delta is computed by allreduce over per-node partial sums
    and divided by the class count, exactly the local grouped arithmetic.
    The final model is reduced at node 0 and redistributed, so every node
    returns the same weights.
    """
    _verify_dataset(transport, ds)
    n, num_classes, d = ds.num_samples, ds.num_classes, ds.num_features
    counts = ds.class_counts()
    bundles = chunk_classes(num_classes, transport.num_nodes,
                            sizes=(n - counts).tolist())
    own_rows = np.asarray(bundles[transport.node_id], dtype=np.int64) - 1
    state = llw_init(ds, config)
    labels = ds.labels
    total_candidates = n * num_classes - n
    rng = np.random.default_rng(config.seed)
    csr = ds.to_csr()
    stats = TrainStats()
    started = perf_counter()
    pending_full = False
    log.info("node %d/%d trains %d classes", transport.node_id,
             transport.num_nodes, own_rows.size)
    for epoch in range(1, config.max_epochs + 1):
        tick = perf_counter()
        perm = rng.permutation(n)
        full_pass = pending_full or not config.shrinking
        thresh = _shrink_threshold(config, epoch, full_pass)
        orders = _epoch_orders(state, own_rows, perm, thresh)
        active_part = sum(o.shape[0] for _, o in orders)
        updates_part = 0
        segments = config.syncs_per_epoch
        for s in range(segments):
            for c, order in orders:
                lo = s * order.shape[0] // segments
                hi = (s + 1) * order.shape[0] // segments
                updates_part += llw_sweep(
                    ds.indptr, ds.col_indices, ds.values, ds.norms_sq,
                    state.u[c], state.alpha[c], order, lo, hi,
                    config.c_reg, config.epsilon, epoch, state.last_update[c],
                )
            total = transport.allreduce_sum(state.u[own_rows].sum(axis=0))
            total /= num_classes
            state.u[own_rows] -= total[None, :]
        state.epoch = epoch
        state.synced = True

        u_own = state.u[own_rows]
        scores = np.asarray(csr @ u_own.T)
        hinge = np.maximum(0.0, 1.0 - scores)
        for j, c in enumerate(own_rows):
            hinge[labels == c, j] = 0.0
        reduced = transport.allreduce_sum(np.array([
            state.alpha[own_rows].sum(),
            np.dot(u_own.ravel(), u_own.ravel()),
            hinge.sum(),
            float(updates_part),
            float(active_part),
        ]))
        dual = float(reduced[0] - 0.5 * reduced[1])
        primal = float(0.5 * reduced[1] + config.c_reg * reduced[2])
        updates = int(reduced[3])
        active = int(reduced[4])
        state.optimal = updates == 0
        stats.record(EpochStats(epoch, dual, primal, primal - dual,
                                active, perf_counter() - tick))
        if updates == 0:
            if full_pass or active == total_candidates:
                stats.converged = True
                break
            pending_full = True
        else:
            pending_full = False
    stats.wall_seconds = perf_counter() - started
    weights = _gather_model(transport, own_rows, -state.u[own_rows],
                            num_classes, d)
    return WeightMatrix(weights, ds.label_names), stats


def _encode_class_state(state, row: int) -> bytes:
    """Weight nonzeros plus all live (alpha, shrink stamp) coordinates."""
    msg = SparseWeightMessage.from_dense(row, state.w[row])
    alive = np.flatnonzero(
        (state.alpha[row] != 0.0) | (state.last_update[row] != 0)
    )
    triples = np.empty(alive.size, dtype=_TRIPLE_DTYPE)
    triples["i"] = alive
    triples["a"] = state.alpha[row][alive]
    triples["t"] = state.last_update[row][alive]
    return msg.to_bytes() + _COUNT.pack(alive.size) + triples.tobytes()


def _install_class_state(state, payload: bytes, expected_row: int) -> None:
    msg, off = SparseWeightMessage.from_bytes(payload)
    if msg.class_id != expected_row:
        raise TransportError(
            f"weight envelope for class {msg.class_id}, expected {expected_row}"
        )
    if msg.nnz and int(msg.indices[-1]) >= state.w.shape[1]:
        raise TransportError("weight envelope index beyond feature count")
    if len(payload) - off < _COUNT.size:
        raise TransportError("weight envelope truncated")
    (count,) = _COUNT.unpack_from(payload, off)
    off += _COUNT.size
    if len(payload) - off != count * _TRIPLE_DTYPE.itemsize:
        raise TransportError("weight envelope alpha block length mismatch")
    triples = np.frombuffer(payload, dtype=_TRIPLE_DTYPE, count=count, offset=off)
    samples = triples["i"]
    if count and int(samples.max()) >= state.alpha.shape[1]:
        raise TransportError("weight envelope sample id out of range")
    row = msg.class_id
    state.w[row] = 0.0
    state.w[row][msg.indices] = msg.values
    state.alpha[row] = 0.0
    state.alpha[row][samples] = triples["a"]
    state.last_update[row] = 0
    state.last_update[row][samples] = triples["t"].astype(np.int32)


def ww_distributed_train(
    ds: SparseDataset,
    config: SolverConfig,
    transport: Transport,
    instrument: PairInstrument | None = None,
) -> tuple[WeightMatrix, TrainStats]:
    """Bundle-partitioned training of the pairwise-margin solver.

    Per epoch, the node first plays its bundle's local rounds, then the
    cross-bundle super-rounds of the two-level schedule; within a pairing
    the lower-id node executes all cross pairs on borrowed class state.
    A barrier delimits every phase. The per-epoch pair coverage equals
    the single-process tournament exactly.
    """
    _verify_dataset(transport, ds)
    me = transport.node_id
    n, num_classes, d = ds.num_samples, ds.num_classes, ds.num_features
    counts = ds.class_counts()
    bundles = chunk_classes(num_classes, transport.num_nodes,
                            sizes=counts.tolist())
    phases = two_level_schedule(bundles)
    own_rows = np.asarray(bundles[me], dtype=np.int64) - 1
    weight_of = {c + 1: int(counts[c]) for c in range(num_classes)}
    state = ww_init(ds, config)
    labels = ds.labels
    total_candidates = n * (num_classes - 1)
    rng = np.random.default_rng(config.seed)
    csr = ds.to_csr()
    stats = TrainStats()
    started = perf_counter()
    pending_full = False
    log.info("node %d/%d owns classes %s", me, transport.num_nodes, bundles[me])

    def run_task_pairs(pairs, epoch, section, cand, thresh):
        upd = 0
        vis = 0
        for a, b in partition_pairs(pairs, weight_of, 1)[0]:
            if instrument is not None:
                instrument(epoch, section, me, a - 1, b - 1)
            u, v = run_pair(state, a - 1, b - 1, cand, epoch, thresh)
            upd += u
            vis += v
        return upd, vis

    for epoch in range(1, config.max_epochs + 1):
        tick = perf_counter()
        perm = rng.permutation(n)
        cand = class_candidates(ds, perm)
        full_pass = pending_full or not config.shrinking
        thresh = _shrink_threshold(config, epoch, full_pass)
        updates_part = 0
        active_part = 0
        for section, phase in enumerate(phases):
            task = next((t for t in phase.tasks if me in t.owners), None)
            if task is not None and len(task.owners) == 1:
                u, v = run_task_pairs(task.pairs, epoch, section, cand, thresh)
                updates_part += u
                active_part += v
            elif task is not None:
                executor, partner = task.owners
                if me == partner:
                    for row in (c - 1 for c in bundles[me]):
                        transport.send(executor, TAG_SPARSE_WEIGHT,
                                       _encode_class_state(state, row))
                    for row in (c - 1 for c in bundles[me]):
                        _, payload = transport.recv(executor,
                                                    expect=TAG_SPARSE_WEIGHT)
                        _install_class_state(state, payload, row)
                else:
                    borrowed = [c - 1 for c in bundles[partner]]
                    for row in borrowed:
                        _, payload = transport.recv(partner,
                                                    expect=TAG_SPARSE_WEIGHT)
                        _install_class_state(state, payload, row)
                    u, v = run_task_pairs(task.pairs, epoch, section, cand,
                                          thresh)
                    updates_part += u
                    active_part += v
                    for row in borrowed:
                        transport.send(partner, TAG_SPARSE_WEIGHT,
                                       _encode_class_state(state, row))
            transport.barrier()

        state.epoch = epoch
        w_own = state.w[own_rows]
        score_part = np.zeros((n, num_classes))
        score_part[:, own_rows] = np.asarray(csr @ w_own.T)
        tail = np.array([
            state.alpha[own_rows].sum(),
            np.dot(w_own.ravel(), w_own.ravel()),
            float(updates_part),
            float(active_part),
        ])
        reduced = transport.allreduce_sum(
            np.concatenate([score_part.ravel(), tail])
        )
        scores = reduced[: n * num_classes].reshape(n, num_classes)
        alpha_sum, quad, f_updates, f_active = reduced[n * num_classes :]
        dual = float(alpha_sum - 0.5 * quad)
        primal = float(0.5 * quad + config.c_reg * hinge_from_scores(scores, labels))
        updates = int(f_updates)
        active = int(f_active)
        state.optimal = updates == 0
        stats.record(EpochStats(epoch, dual, primal, primal - dual,
                                active, perf_counter() - tick))
        if updates == 0:
            if full_pass or active == total_candidates:
                stats.converged = True
                break
            pending_full = True
        else:
            pending_full = False
    stats.wall_seconds = perf_counter() - started
    weights = _gather_model(transport, own_rows, state.w[own_rows],
                            num_classes, d)
    return WeightMatrix(weights, ds.label_names), stats
