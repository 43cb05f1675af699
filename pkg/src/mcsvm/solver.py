"""Shared solver configuration and per-epoch training statistics."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class SolverConfig:
    """Knobs shared by every trainer.

    Attributes:
        c_reg: regularization constant C > 0 (box upper bound on dual vars).
        epsilon: KKT band half-width; a coordinate moves only when its
            gradient leaves [-epsilon, epsilon]. 1e-3 suits small data;
            0.1 is the practical choice for large sparse corpora.
        max_epochs: hard cap; hitting it reports non-convergence, not an error.
        seed: traversal shuffle seed; results are reproducible per seed.
        num_workers: worker threads for the class-parallel sections.
        syncs_per_epoch: mean-vector synchronization barriers per epoch.
        shrink_after: epochs a coordinate may sit still before it is dropped
            from the sweep (a full verification pass precedes termination).
        shrinking: disable to sweep every coordinate every epoch.
    """

    c_reg: float = 1.0
    epsilon: float = 1e-3
    max_epochs: int = 1000
    seed: int = 0
    num_workers: int = 1
    syncs_per_epoch: int = 10
    shrink_after: int = 3
    shrinking: bool = True

    def __post_init__(self):
        if not self.c_reg > 0:
            raise ValueError("c_reg must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        for name in ("max_epochs", "num_workers", "syncs_per_epoch", "shrink_after"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


# Sentinel shrink threshold that keeps every coordinate active.
NEVER_SHRINK = -(2**31)


@dataclass
class EpochStats:
    epoch: int
    dual: float
    primal: float
    gap: float
    active: int
    seconds: float


@dataclass
class TrainStats:
    """Per-epoch trace plus the final convergence verdict."""

    epochs: list[EpochStats] = field(default_factory=list)
    converged: bool = False
    wall_seconds: float = 0.0

    CSV_HEADER = "epoch,dual,primal,gap,active,seconds"

    def record(self, row: EpochStats) -> None:
        self.epochs.append(row)

    def final_dual(self) -> float:
        return self.epochs[-1].dual if self.epochs else 0.0

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for e in self.epochs:
            lines.append(
                f"{e.epoch},{e.dual:.17g},{e.primal:.17g},{e.gap:.17g},"
                f"{e.active},{e.seconds:.6f}"
            )
        return "\n".join(lines) + "\n"


def partition_pairs(
    pairs: "tuple[tuple[int, int], ...]",
    weights: "dict[int, int] | None",
    num_workers: int,
) -> "list[list[tuple[int, int]]]":
    """Deal one round's class pairs into per-worker groups.

    Pairs within a round touch disjoint state, so any deal yields the same
    result; this one balances by per-pair sample weight, largest first,
    deterministically.
    """
    groups: list[list[tuple[int, int]]] = [[] for _ in range(num_workers)]
    loads = [0] * num_workers
    def load_of(p):
        if weights is None:
            return 1
        return weights.get(p[0], 0) + weights.get(p[1], 0)
    for pair in sorted(pairs, key=lambda p: (-load_of(p), p)):
        pick = min(range(num_workers), key=lambda w: (loads[w], w))
        groups[pick].append(pair)
        loads[pick] += load_of(pair)
    return [g for g in groups if g]
