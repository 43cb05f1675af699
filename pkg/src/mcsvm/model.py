"""Primal weight matrix: prediction, density, and binary persistence.

The model file starts with the magic "MCSVM1"; everything after it is
little-endian: u32 feature count d, u32 class count, one length-prefixed
UTF-8 label name per class, then per class a u64 non-zero count followed
by (u32 column, f64 value) pairs. Columns are 0-based. Floats are IEEE-754
binary64, so save/load round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dataset import SparseDataset, SparseVector

MAGIC = b"MCSVM1"

_HEAD = struct.Struct("<II")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_ENTRY_DTYPE = np.dtype([("col", "<u4"), ("val", "<f8")])


class ModelFormatError(ValueError):
    """Bad magic, truncated data, or inconsistent counts in a model file."""


@dataclass(eq=False)
class WeightMatrix:
    """One dense weight row per class; rows align with label_names."""

    weights: np.ndarray
    label_names: tuple[str, ...]

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("weights must be 2-dimensional (classes x features)")
        if self.weights.shape[0] != len(self.label_names):
            raise ValueError("one label name required per class row")

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def num_features(self) -> int:
        return self.weights.shape[1]


def predict(model: WeightMatrix, x: SparseVector) -> int:
    """Internal id of the highest-scoring class; ties go to the smallest id.

    Features beyond the model's dimensionality are ignored.
    """
    cols = x.indices - 1
    keep = cols < model.num_features
    scores = model.weights[:, cols[keep]] @ x.values[keep]
    return int(np.argmax(scores))


def decision_scores(model: WeightMatrix, ds: SparseDataset) -> np.ndarray:
    """(n, num_classes) score matrix; excess dataset columns are ignored."""
    d = model.num_features
    x: sp.csr_matrix = ds.to_csr()
    if ds.num_features > d:
        x = x[:, :d]
        return np.asarray(x @ model.weights.T)
    return np.asarray(x @ model.weights[:, : ds.num_features].T)


def predict_dataset(model: WeightMatrix, ds: SparseDataset) -> np.ndarray:
    """Predicted internal class ids for every sample (argmax, smallest wins ties)."""
    return np.argmax(decision_scores(model, ds), axis=1).astype(np.int32)


def density(model: WeightMatrix, threshold: float = 0.0) -> float:
    """Percentage of weight entries with |w| strictly above threshold."""
    total = model.weights.size
    if total == 0:
        return 0.0
    return 100.0 * float(np.count_nonzero(np.abs(model.weights) > threshold)) / total


def save_model(model: WeightMatrix) -> bytes:
    out = bytearray(MAGIC)
    out += _HEAD.pack(model.num_features, model.num_classes)
    for name in model.label_names:
        raw = name.encode("utf-8")
        out += _U32.pack(len(raw))
        out += raw
    for c in range(model.num_classes):
        row = model.weights[c]
        cols = np.nonzero(row)[0]
        entries = np.empty(cols.shape[0], dtype=_ENTRY_DTYPE)
        entries["col"] = cols
        entries["val"] = row[cols]
        out += _U64.pack(cols.shape[0])
        out += entries.tobytes()
    return bytes(out)


def save_model_file(model: WeightMatrix, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(save_model(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        end = self.pos + count
        if end > len(self.data):
            raise ModelFormatError("truncated model data")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk


def load_model(data: bytes) -> WeightMatrix:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise ModelFormatError("bad magic; not a model file")
    d, num_classes = _HEAD.unpack(r.take(_HEAD.size))
    names = []
    for _ in range(num_classes):
        (ln,) = _U32.unpack(r.take(_U32.size))
        names.append(r.take(ln).decode("utf-8"))
    weights = np.zeros((num_classes, d))
    for c in range(num_classes):
        (nnz,) = _U64.unpack(r.take(_U64.size))
        entries = np.frombuffer(r.take(nnz * _ENTRY_DTYPE.itemsize), dtype=_ENTRY_DTYPE)
        cols = entries["col"].astype(np.int64)
        if nnz and cols.max() >= d:
            raise ModelFormatError(f"class {c}: column {cols.max()} out of range")
        weights[c, cols] = entries["val"]
    if r.pos != len(data):
        raise ModelFormatError("trailing bytes after model data")
    return WeightMatrix(weights, tuple(names))


def load_model_file(path: str) -> WeightMatrix:
    with open(path, "rb") as fh:
        return load_model(fh.read())
