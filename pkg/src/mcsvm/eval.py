"""Evaluation metrics: test error, micro/macro F1, model and dual density.

Test files are parsed with their own label dictionary, so samples are
matched to the model's classes by label token, not by numeric id. A test
label that never occurred in training counts as always-wrong: it adds a
false positive to whatever class was predicted and one pooled miss, which
keeps the single-label identity micro-F1 = accuracy = 100 - error intact
(asserted on every report).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import SparseDataset
from .model import WeightMatrix, density, predict_dataset


@dataclass(frozen=True)
class ClassMetrics:
    label: str
    true_count: int
    tp: int
    fp: int
    fn: int
    precision_pct: float
    recall_pct: float
    f1_pct: float


@dataclass(frozen=True)
class EvalReport:
    error_pct: float
    micro_f1_pct: float
    macro_f1_pct: float
    model_density_pct: float
    alpha_density_pct: float | None
    per_class: tuple[ClassMetrics, ...]
    num_test: int
    num_unknown_labels: int

    CSV_HEADER = "error_pct,micro_f1_pct,macro_f1_pct,model_density_pct,alpha_density_pct"

    def to_csv(self) -> str:
        alpha = "" if self.alpha_density_pct is None else f"{self.alpha_density_pct:.4f}"
        row = (
            f"{self.error_pct:.4f},{self.micro_f1_pct:.4f},{self.macro_f1_pct:.4f},"
            f"{self.model_density_pct:.4f},{alpha}"
        )
        return f"{self.CSV_HEADER}\n{row}\n"

    def to_text(self) -> str:
        lines = [
            f"test samples      {self.num_test}",
            f"error             {self.error_pct:.2f}%",
            f"micro-F1          {self.micro_f1_pct:.2f}%",
            f"macro-F1          {self.macro_f1_pct:.2f}%",
            f"model density     {self.model_density_pct:.2f}%",
        ]
        if self.alpha_density_pct is not None:
            lines.append(f"dual density      {self.alpha_density_pct:.2f}%")
        if self.num_unknown_labels:
            lines.append(f"unknown labels    {self.num_unknown_labels} (counted as errors)")
        lines.append("")
        lines.append(f"{'class':>12}  {'count':>6} {'prec':>7} {'recall':>7} {'f1':>7}")
        for m in self.per_class:
            lines.append(
                f"{m.label:>12}  {m.true_count:>6} {m.precision_pct:>6.2f}% "
                f"{m.recall_pct:>6.2f}% {m.f1_pct:>6.2f}%"
            )
        return "\n".join(lines) + "\n"


def _f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
    return 100.0 * precision, 100.0 * recall, 100.0 * f1


def evaluate(
    model: WeightMatrix,
    test_ds: SparseDataset,
    train_label_names: "tuple[str, ...] | None" = None,
    alpha_density_pct: float | None = None,
    density_threshold: float = 0.0,
) -> EvalReport:
    """Score a model on a labeled test set.

    train_label_names overrides the class dictionary (defaults to the
    model's); macro-F1 averages over every class in that dictionary, with
    0/0 per-class F1 defined as 0.
    """
    names = model.label_names if train_label_names is None else tuple(train_label_names)
    if len(names) != model.weights.shape[0]:
        raise ValueError("one label name per model class required")
    if test_ds.num_samples == 0:
        raise ValueError("test set is empty")
    index = {name: k for k, name in enumerate(names)}
    remap = np.array(
        [index.get(name, -1) for name in test_ds.label_names], dtype=np.int64
    )
    truth = remap[test_ds.labels]
    predicted = predict_dataset(model, test_ds)
    n = test_ds.num_samples
    correct = int(np.count_nonzero(predicted == truth))
    error_pct = 100.0 * (n - correct) / n

    num_classes = len(names)
    tp = np.zeros(num_classes, dtype=np.int64)
    fp = np.zeros(num_classes, dtype=np.int64)
    fn = np.zeros(num_classes, dtype=np.int64)
    true_counts = np.zeros(num_classes, dtype=np.int64)
    hit = predicted == truth
    np.add.at(tp, predicted[hit], 1)
    np.add.at(fp, predicted[~hit], 1)
    known_miss = (~hit) & (truth >= 0)
    np.add.at(fn, truth[known_miss], 1)
    np.add.at(true_counts, truth[truth >= 0], 1)
    unknown = int(np.count_nonzero(truth < 0))

    # Pool: each unknown-label sample is one miss nobody's recall can claim.
    pool_tp = int(tp.sum())
    pool_fp = int(fp.sum())
    pool_fn = int(fn.sum()) + unknown
    micro = 100.0 * 2 * pool_tp / (2 * pool_tp + pool_fp + pool_fn)
    assert abs(micro - (100.0 - error_pct)) < 1e-9

    per_class = []
    macro_sum = 0.0
    for k, name in enumerate(names):
        precision, recall, f1 = _f1(int(tp[k]), int(fp[k]), int(fn[k]))
        macro_sum += f1
        per_class.append(
            ClassMetrics(name, int(true_counts[k]), int(tp[k]), int(fp[k]),
                         int(fn[k]), precision, recall, f1)
        )
    return EvalReport(
        error_pct=error_pct,
        micro_f1_pct=micro,
        macro_f1_pct=macro_sum / num_classes,
        model_density_pct=density(model, density_threshold),
        alpha_density_pct=alpha_density_pct,
        per_class=tuple(per_class),
        num_test=n,
        num_unknown_labels=unknown,
    )


def alpha_density(state) -> float:
    """Percentage of positive dual variables out of n * (num_classes - 1).

    Works on any trainer state carrying a (num_classes, num_samples) dual
    matrix (named alpha, or beta for the one-vs-rest baseline; the latter
    has n * num_classes real coordinates, so its value is scaled by the
    same all-in-one denominator for comparability).
    """
    duals = getattr(state, "alpha", None)
    if duals is None:
        duals = state.beta
    num_classes, n = duals.shape
    if num_classes < 2:
        raise ValueError("density needs at least two classes")
    return 100.0 * float(np.count_nonzero(duals > 0.0)) / (n * (num_classes - 1))
