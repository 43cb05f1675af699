"""Shared fixtures and helpers for the test suite.

Frozen toy problems with hand-checked optima, a synthetic sparse data
generator, the deterministic 90/10 split of the classic 150-flower
measurement set, optional on-disk corpora, and thread runners for the
message-passing trainers.
"""

from __future__ import annotations

import os
import socket
import threading

import numpy as np
import pytest

from mcsvm.dataset import Normalization, SparseDataset, normalize, parse_libsvm
from mcsvm.kernels import warm_up
from mcsvm.transport import InProcessGroup, TcpTransport

# Two orthogonal samples, one per class. Both joint solvers converge in one
# epoch and the optima are hand-checkable:
#   sum-to-zero (c_reg=1):  alpha = 1 on both cross coordinates, dual 1.5,
#                           weights [[0.5, -0.5], [-0.5, 0.5]]
#   pairwise    (c_reg=10): both duals 0.5, dual objective 0.5, same weights
TOY_TEXT = "a 1:1\nb 2:1\n"

# Split seed for datasets that ship without an official train/test split.
# Chosen once; documented in the decisions ledger outside the package.
SPLIT_SEED = 5


@pytest.fixture(scope="session", autouse=True)
def _compiled_kernels():
    # Compile the numba kernels before any timed or counted work runs.
    warm_up()


@pytest.fixture()
def toy_ds() -> SparseDataset:
    return parse_libsvm(TOY_TEXT)


def make_synthetic(n, num_classes, d, seed, extra_nnz=5, noise=0.3, margin=1.5):
    """Sparse, linearly structured data built directly as CSR arrays.

    Column c carries class c's anchor weight (requires d > num_classes);
    extra_nnz noise entries per row land in columns [num_classes, d).
    Labels are balanced. Rows are never empty.
    """
    if d <= num_classes:
        raise ValueError("need d > num_classes for the anchor layout")
    rng = np.random.default_rng(seed)
    labels = (np.arange(n) % num_classes).astype(np.int32)
    rng.shuffle(labels)
    cols = np.concatenate(
        [labels[:, None].astype(np.int64),
         rng.integers(num_classes, d, size=(n, extra_nnz))],
        axis=1,
    )
    vals = np.concatenate(
        [margin + noise * rng.standard_normal((n, 1)),
         noise * rng.standard_normal((n, extra_nnz))],
        axis=1,
    )
    order = np.argsort(cols, axis=1, kind="stable")
    cols = np.take_along_axis(cols, order, axis=1)
    vals = np.take_along_axis(vals, order, axis=1)
    keep = np.ones(cols.shape, dtype=bool)
    keep[:, 1:] = cols[:, 1:] != cols[:, :-1]  # first of every duplicate run
    keep &= vals != 0.0
    indptr = np.concatenate(([0], np.cumsum(keep.sum(axis=1)))).astype(np.int64)
    return SparseDataset(
        indptr=indptr,
        col_indices=cols[keep].astype(np.int32),
        values=vals[keep],
        labels=labels,
        label_names=tuple(f"k{c}" for c in range(num_classes)),
        num_features=d,
    )


def dense_dataset(x, y) -> SparseDataset:
    """Dense rows to a SparseDataset; labels mapped by first appearance."""
    indptr = [0]
    cols: list[int] = []
    vals: list[float] = []
    for row in x:
        nz = np.nonzero(row)[0]
        cols.extend(int(j) for j in nz)
        vals.extend(float(row[j]) for j in nz)
        indptr.append(len(cols))
    ids: dict[str, int] = {}
    names: list[str] = []
    labs = []
    for lab in y:
        token = str(int(lab))
        if token not in ids:
            ids[token] = len(names)
            names.append(token)
        labs.append(ids[token])
    return SparseDataset(
        indptr=np.asarray(indptr, dtype=np.int64),
        col_indices=np.asarray(cols, dtype=np.int32),
        values=np.asarray(vals, dtype=np.float64),
        labels=np.asarray(labs, dtype=np.int32),
        label_names=tuple(names),
        num_features=int(x.shape[1]),
    )


def minmax_scaled_columns(x) -> np.ndarray:
    """Per-column linear map onto [-1, 1] (constant columns map to -1)."""
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return 2.0 * (x - lo) / span - 1.0


def flowers_split() -> tuple[SparseDataset, SparseDataset]:
    """(train, test) for the 150-sample 3-class flower data.

    Columns are min-max scaled to [-1, 1] over the full set (the form the
    public repositories distribute), rows are unit-normalized, and the
    90/10 split is the fixed seeded permutation.
    """
    sklearn_datasets = pytest.importorskip("sklearn.datasets")
    data = sklearn_datasets.load_iris()
    x = minmax_scaled_columns(np.asarray(data.data, dtype=np.float64))
    y = np.asarray(data.target)
    perm = np.random.default_rng(SPLIT_SEED).permutation(y.shape[0])
    test_idx, train_idx = perm[:15], perm[15:]
    train = dense_dataset(x[train_idx], y[train_idx])
    test = dense_dataset(x[test_idx], y[test_idx])
    return (normalize(train, Normalization.UNIT_NORM),
            normalize(test, Normalization.UNIT_NORM))


@pytest.fixture(scope="session")
def flowers():
    return flowers_split()


def subset_rows(ds: SparseDataset, idx) -> SparseDataset:
    """New dataset holding the given rows; label names are preserved."""
    idx = np.asarray(idx, dtype=np.int64)
    counts = ds.indptr[idx + 1] - ds.indptr[idx]
    indptr = np.concatenate(([0], np.cumsum(counts)))
    take = np.concatenate(
        [np.arange(ds.indptr[i], ds.indptr[i + 1]) for i in idx]
    ) if idx.size else np.array([], dtype=np.int64)
    return SparseDataset(
        indptr=indptr.astype(np.int64),
        col_indices=ds.col_indices[take],
        values=ds.values[take],
        labels=ds.labels[idx],
        label_names=ds.label_names,
        num_features=ds.num_features,
    )


def data_dir() -> str:
    default = os.path.join(os.path.dirname(__file__), os.pardir, "data")
    return os.environ.get("MCSVM_DATA_DIR", default)


def require_data(name: str) -> str:
    """Path of an optional on-disk corpus, or skip the calling test."""
    path = os.path.join(data_dir(), name)
    if not os.path.exists(path):
        pytest.skip(f"corpus file {name} not present (set MCSVM_DATA_DIR)")
    return path


def load_libsvm_file(path: str, mode=Normalization.NONE) -> SparseDataset:
    with open(path, "r", encoding="utf-8") as fh:
        ds = parse_libsvm(fh)
    return normalize(ds, mode)


def free_ports(count: int) -> list[int]:
    socks = []
    try:
        for _ in range(count):
            s = socket.socket()
            s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            s.bind(("127.0.0.1", 0))
            socks.append(s)
        return [s.getsockname()[1] for s in socks]
    finally:
        for s in socks:
            s.close()


def run_in_process_group(num_nodes, fn):
    """Run fn(transport) per node on threads; results in node order.

    The first node failure is re-raised after every thread has stopped.
    """
    group = InProcessGroup(num_nodes)
    results = [None] * num_nodes
    errors: list[BaseException] = []

    def runner(k):
        transport = group.transport(k)
        try:
            results[k] = fn(transport)
        except BaseException as exc:  # noqa: BLE001 - propagated below
            errors.append(exc)
        finally:
            transport.close()

    threads = [threading.Thread(target=runner, args=(k,)) for k in range(num_nodes)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return results


def run_tcp_group(num_nodes, dataset_hash, fn, timeout=60.0):
    """Same as run_in_process_group over localhost TCP."""
    ports = free_ports(num_nodes)
    addresses = [("127.0.0.1", p) for p in ports]
    results = [None] * num_nodes
    errors: list[BaseException] = []

    def runner(k):
        transport = TcpTransport(k, addresses, dataset_hash, timeout=timeout)
        try:
            results[k] = fn(transport)
        except BaseException as exc:  # noqa: BLE001 - propagated below
            errors.append(exc)
        finally:
            transport.close()

    threads = [threading.Thread(target=runner, args=(k,)) for k in range(num_nodes)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return results
