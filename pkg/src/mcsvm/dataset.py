"""Sparse datasets in SVMlight/LIBSVM text format.

Samples are kept in CSR-style parallel arrays so the solvers can hand them
to compiled kernels without conversion. Feature indices are 1-based in the
text format and in `SparseVector`; the internal CSR column array is 0-based.
Label ids are assigned by first appearance in the input stream and the
original label tokens are kept for reporting.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator

import numpy as np
import scipy.sparse as sp


class DatasetError(ValueError):
    """Malformed dataset input. `line` is the 1-based offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyDatasetError(DatasetError):
    """Input contained no samples."""


class NonAscendingIndexError(DatasetError):
    """Feature indices in a line were not strictly increasing."""


class Normalization(Enum):
    """Feature scaling applied before training."""

    NONE = "none"
    UNIT_NORM = "l2"
    UNIT_VARIANCE = "var"


@dataclass(frozen=True)
class SparseVector:
    """One sample: strictly increasing 1-based indices with non-zero values."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.indices.shape != self.values.shape:
            raise ValueError("indices and values must have equal length")

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    def norm_sq(self) -> float:
        return float(np.dot(self.values, self.values))

    def entries(self) -> Iterator[tuple[int, float]]:
        return zip((int(i) for i in self.indices), (float(v) for v in self.values))


@dataclass(eq=False)
class SparseDataset:
    """An immutable labeled sparse dataset.

    Attributes:
        indptr: int64 array of length n+1; row i spans [indptr[i], indptr[i+1]).
        col_indices: int32 array of 0-based feature columns, strictly
            increasing within each row.
        values: float64 array of stored (non-zero, finite) feature values.
        labels: int32 array of internal class ids in [0, num_classes).
        label_names: original label token for each internal class id.
        num_features: d; valid columns are 0..d-1 (text indices 1..d).
    """

    indptr: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    labels: np.ndarray
    label_names: tuple[str, ...]
    num_features: int
    norms_sq: np.ndarray = field(init=False)

    def __post_init__(self):
        self.indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        self.col_indices = np.ascontiguousarray(self.col_indices, dtype=np.int32)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int32)
        # Row norms are read on every coordinate update; precompute once.
        sq = self.values * self.values
        acc = np.concatenate(([0.0], np.cumsum(sq)))
        self.norms_sq = acc[self.indptr[1:]] - acc[self.indptr[:-1]]
        for arr in (self.indptr, self.col_indices, self.values, self.labels, self.norms_sq):
            arr.flags.writeable = False
        self._class_lists: list[np.ndarray] | None = None

    @property
    def num_samples(self) -> int:
        return int(self.labels.shape[0])

    @property
    def num_classes(self) -> int:
        return len(self.label_names)

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    def class_index(self, c: int) -> np.ndarray:
        """Sample ids with label c, ascending."""
        if self._class_lists is None:
            order = np.argsort(self.labels, kind="stable")
            bounds = np.searchsorted(self.labels[order], np.arange(self.num_classes + 1))
            self._class_lists = [order[bounds[k]:bounds[k + 1]] for k in range(self.num_classes)]
        return self._class_lists[c]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def sample(self, i: int) -> SparseVector:
        lo, hi = int(self.indptr[i]), int(self.indptr[i + 1])
        return SparseVector(self.col_indices[lo:hi].astype(np.int64) + 1,
                            self.values[lo:hi].copy())

    def to_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, self.col_indices, self.indptr),
            shape=(self.num_samples, self.num_features),
        )

    def content_hash(self) -> bytes:
        """8-byte digest of everything that affects training."""
        h = hashlib.blake2b(digest_size=8)
        h.update(np.int64(self.num_features).tobytes())
        for arr in (self.indptr, self.col_indices, self.values, self.labels):
            h.update(arr.tobytes())
        h.update("\x00".join(self.label_names).encode("utf-8"))
        return h.digest()


def parse_feature_tokens(
    tokens: list[str], line_no: int
) -> tuple[list[int], list[float], int]:
    """Parse `idx:val` tokens; returns 1-based indices, values, max index.

    Enforces strictly increasing positive indices and finite values.
    Explicit zeros are dropped (the format allows them; we never store them)
    but still count toward the max index, i.e. the declared dimensionality.
    """
    idxs: list[int] = []
    vals: list[float] = []
    prev = 0
    for tok in tokens:
        part = tok.partition(":")
        if part[1] != ":":
            raise DatasetError(f"expected idx:value, got {tok!r}", line_no)
        try:
            idx = int(part[0])
            val = float(part[2])
        except ValueError:
            raise DatasetError(f"bad feature entry {tok!r}", line_no) from None
        if idx < 1:
            raise DatasetError(f"feature index {idx} is not positive", line_no)
        if idx <= prev:
            kind = "duplicate" if idx == prev else "non-ascending"
            raise NonAscendingIndexError(f"{kind} feature index {idx}", line_no)
        prev = idx
        if not np.isfinite(val):
            raise DatasetError(f"non-finite value for feature {idx}", line_no)
        if val != 0.0:
            idxs.append(idx)
            vals.append(val)
    return idxs, vals, prev


def parse_vector(line: str, line_no: int = 1) -> SparseVector:
    """Parse one unlabeled feature line (a leading label token is allowed)."""
    body = line.split("#", 1)[0].strip()
    tokens = body.split()
    if tokens and ":" not in tokens[0]:
        tokens = tokens[1:]
    idxs, vals, _ = parse_feature_tokens(tokens, line_no)
    return SparseVector(np.asarray(idxs, dtype=np.int64), np.asarray(vals, dtype=np.float64))


def parse_libsvm(source: str | Iterable[str]) -> SparseDataset:
    """Parse LIBSVM text into a SparseDataset.

    Args:
        source: full text or an iterable of lines (e.g. an open file).
            Each non-blank line is `<label> <idx>:<val> ...`; `#` starts a
            comment; labels are arbitrary tokens.

    Raises:
        EmptyDatasetError: no samples in the input.
        NonAscendingIndexError: repeated or decreasing indices in a line.
        DatasetError: any other malformed line, with its line number.
    """
    if isinstance(source, str):
        source = source.splitlines()
    indptr = [0]
    cols: list[int] = []
    vals: list[float] = []
    labels: list[int] = []
    label_ids: dict[str, int] = {}
    names: list[str] = []
    max_idx = 0
    for line_no, raw in enumerate(source, start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        tokens = body.split()
        if ":" in tokens[0]:
            raise DatasetError("missing label token", line_no)
        label = tokens[0]
        idxs, vs, top = parse_feature_tokens(tokens[1:], line_no)
        if label not in label_ids:
            label_ids[label] = len(names)
            names.append(label)
        labels.append(label_ids[label])
        cols.extend(i - 1 for i in idxs)
        vals.extend(vs)
        max_idx = max(max_idx, top)
        indptr.append(len(cols))
    if not labels:
        raise EmptyDatasetError("no samples in input")
    return SparseDataset(
        indptr=np.asarray(indptr, dtype=np.int64),
        col_indices=np.asarray(cols, dtype=np.int32),
        values=np.asarray(vals, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.int32),
        label_names=tuple(names),
        num_features=max_idx,
    )


def serialize_libsvm(ds: SparseDataset) -> str:
    """Render a dataset back to LIBSVM text; exact float round-trip."""
    out: list[str] = []
    for i in range(ds.num_samples):
        lo, hi = int(ds.indptr[i]), int(ds.indptr[i + 1])
        parts = [ds.label_names[ds.labels[i]]]
        parts.extend(
            f"{int(ds.col_indices[p]) + 1}:{ds.values[p]:.17g}" for p in range(lo, hi)
        )
        out.append(" ".join(parts))
    return "\n".join(out) + "\n"


def variance_scales(ds: SparseDataset) -> np.ndarray:
    """Per-column 1/sigma factors; sigma is the population standard deviation
    over all n samples, implicit zeros included. Zero-variance columns get 1.
    """
    n = ds.num_samples
    s1 = np.zeros(ds.num_features)
    s2 = np.zeros(ds.num_features)
    np.add.at(s1, ds.col_indices, ds.values)
    np.add.at(s2, ds.col_indices, ds.values * ds.values)
    var = s2 / n - (s1 / n) ** 2
    var = np.maximum(var, 0.0)
    sigma = np.sqrt(var)
    scales = np.ones(ds.num_features)
    nz = sigma > 0.0
    scales[nz] = 1.0 / sigma[nz]
    return scales


def apply_column_scales(ds: SparseDataset, scales: np.ndarray) -> SparseDataset:
    """Scale columns by the given factors (columns beyond len(scales) pass through)."""
    factors = np.ones(ds.num_features)
    m = min(ds.num_features, scales.shape[0])
    factors[:m] = scales[:m]
    return SparseDataset(
        indptr=ds.indptr.copy(),
        col_indices=ds.col_indices.copy(),
        values=ds.values * factors[ds.col_indices],
        labels=ds.labels.copy(),
        label_names=ds.label_names,
        num_features=ds.num_features,
    )


def normalize(ds: SparseDataset, mode: Normalization) -> SparseDataset:
    """Return a normalized copy of the dataset (NONE returns ds itself).

    UNIT_NORM scales each sample to Euclidean length 1 (zero rows untouched).
    UNIT_VARIANCE scales each column to population standard deviation 1
    (constant columns untouched).
    """
    if mode is Normalization.NONE:
        return ds
    if mode is Normalization.UNIT_NORM:
        row_scale = np.ones(ds.num_samples)
        nz = ds.norms_sq > 0.0
        row_scale[nz] = 1.0 / np.sqrt(ds.norms_sq[nz])
        values = ds.values * np.repeat(row_scale, np.diff(ds.indptr))
        return SparseDataset(
            indptr=ds.indptr.copy(),
            col_indices=ds.col_indices.copy(),
            values=values,
            labels=ds.labels.copy(),
            label_names=ds.label_names,
            num_features=ds.num_features,
        )
    if mode is Normalization.UNIT_VARIANCE:
        return apply_column_scales(ds, variance_scales(ds))
    raise ValueError(f"unknown normalization mode {mode!r}")


def shuffle_order(ds: SparseDataset, seed: int) -> np.ndarray:
    """Deterministic traversal permutation of sample ids; storage untouched."""
    return np.random.default_rng(seed).permutation(ds.num_samples)
