"""Conflict-free pairing schedules for class-parallel training.

Classes are numbered 1..C throughout this module (tournament convention).
A round pairs classes so that no class appears twice; over a full schedule
every unordered pair occurs exactly once. For odd C the construction adds
an implicit dummy class, so each round leaves exactly one real class unpaired
(a bye). Two-level schedules do the same over bundles of classes, pairing
bundles per round and exhausting all cross-bundle class pairs inside a
bundle pairing.
"""

from __future__ import annotations

from dataclasses import dataclass


def _mod1(a: int, base: int) -> int:
    # Residue in 1..base: the zero residue wraps to base.
    r = a % base
    return r if r != 0 else base


def num_rounds(num_classes: int) -> int:
    """C-1 rounds for even C, C rounds (one bye each) for odd C."""
    if num_classes < 1:
        raise ValueError("num_classes must be positive")
    return num_classes - 1 if num_classes % 2 == 0 else num_classes


def match_class(num_classes: int, c: int, r: int) -> int:
    """Partner of class c in round r; returns c itself for a bye.

    Even C: class C pairs with r, class r pairs with C, and otherwise the
    partner is 2r - c modulo C-1 folded into 1..C-1. Odd C: the same scheme
    over C+1 classes where the dummy's partner sits out, which collapses to
    2r - c modulo C with a bye exactly when c equals r.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes to pair")
    if not 1 <= c <= num_classes:
        raise ValueError(f"class {c} out of range 1..{num_classes}")
    if not 1 <= r <= num_rounds(num_classes):
        raise ValueError(f"round {r} out of range 1..{num_rounds(num_classes)}")
    if num_classes % 2 == 0:
        if c == num_classes:
            return r
        if c == r:
            return num_classes
        return _mod1(2 * r - c, num_classes - 1)
    if c == r:
        return c
    return _mod1(2 * r - c, num_classes)


@dataclass(frozen=True)
class Round:
    """One parallel section: disjoint pairs plus at most one bye."""

    pairs: tuple[tuple[int, int], ...]
    bye: int | None = None


def build_schedule(num_classes: int) -> tuple[Round, ...]:
    """All rounds for classes 1..num_classes; every pair exactly once.

    Pairs are reported as (low, high) sorted by low id within each round.
    """
    if num_classes < 1:
        raise ValueError("num_classes must be positive")
    if num_classes == 1:
        return ()
    rounds = []
    for r in range(1, num_rounds(num_classes) + 1):
        pairs = []
        bye = None
        for c in range(1, num_classes + 1):
            partner = match_class(num_classes, c, r)
            if partner == c:
                bye = c
            elif c < partner:
                pairs.append((c, partner))
        pairs.sort()
        rounds.append(Round(tuple(pairs), bye))
    return tuple(rounds)


def chunk_classes(
    num_classes: int,
    num_workers: int,
    sizes: "list[int] | tuple[int, ...] | None" = None,
) -> tuple[tuple[int, ...], ...]:
    """Partition classes 1..num_classes into num_workers bundles.

    Bundle class counts differ by at most one. When per-class sizes are
    given, classes are dealt largest-first to the lightest bundle among
    those currently smallest, which balances bundle sample totals as far
    as the count constraint allows. Bundles list their classes ascending;
    extra workers get empty bundles.

    Args:
        num_classes: number of classes, C >= 1.
        num_workers: number of bundles to produce, >= 1.
        sizes: optional per-class weights (e.g. sample counts), len C.
    """
    if num_classes < 1 or num_workers < 1:
        raise ValueError("num_classes and num_workers must be positive")
    if sizes is not None and len(sizes) != num_classes:
        raise ValueError("sizes must have one entry per class")
    weights = [1] * num_classes if sizes is None else [int(s) for s in sizes]
    order = sorted(range(num_classes), key=lambda k: (-weights[k], k))
    members: list[list[int]] = [[] for _ in range(num_workers)]
    loads = [0] * num_workers
    for k in order:
        floor = min(len(m) for m in members)
        pick = min(
            (b for b in range(num_workers) if len(members[b]) == floor),
            key=lambda b: (loads[b], b),
        )
        members[pick].append(k + 1)
        loads[pick] += weights[k]
    return tuple(tuple(sorted(m)) for m in members)


@dataclass(frozen=True)
class PairTask:
    """Class pairs one worker executes sequentially within a phase.

    owners holds the bundle index (or the two bundle indices) whose classes
    the task touches; tasks in one phase never share a bundle.
    """

    owners: tuple[int, ...]
    pairs: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class Phase:
    """A parallel section of class-disjoint tasks."""

    tasks: tuple[PairTask, ...]


def two_level_schedule(bundles: "tuple[tuple[int, ...], ...]") -> tuple[Phase, ...]:
    """Schedule all class pairs given a bundle partition.

    First the intra-bundle phases: every bundle runs its own local schedule,
    one local round per phase, all bundles in parallel. Then one phase per
    bundle-pairing round: each paired bundle set (A, B) becomes a task whose
    pairs are the full cross product A x B in row-major order. With a single
    bundle this degenerates to the plain class schedule.
    """
    seen: set[int] = set()
    for b in bundles:
        for c in b:
            if c in seen:
                raise ValueError(f"class {c} appears in more than one bundle")
            seen.add(c)
    phases: list[Phase] = []
    local = [build_schedule(len(b)) if len(b) > 1 else () for b in bundles]
    for k in range(max((len(s) for s in local), default=0)):
        tasks = []
        for bi, sched in enumerate(local):
            if k < len(sched) and sched[k].pairs:
                classes = bundles[bi]
                pairs = tuple(
                    (classes[a - 1], classes[b - 1]) for a, b in sched[k].pairs
                )
                tasks.append(PairTask((bi,), pairs))
        if tasks:
            phases.append(Phase(tuple(tasks)))
    active = [bi for bi, b in enumerate(bundles) if b]
    if len(active) > 1:
        for rnd in build_schedule(len(active)):
            tasks = []
            for a, b in rnd.pairs:
                ba, bb = active[a - 1], active[b - 1]
                pairs = tuple((ca, cb) for ca in bundles[ba] for cb in bundles[bb])
                tasks.append(PairTask((ba, bb), pairs))
            phases.append(Phase(tuple(tasks)))
    return tuple(phases)
