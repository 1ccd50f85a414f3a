"""Balanced odd-even prefix schedule for an arbitrary binary combiner.

The schedule is the recursive odd-even one: combine neighbours pairwise,
scan the half-length sequence of pair results, then fill the remaining
positions by combining the preceding prefix with the leaf that follows it.
It is laid out in place over a buffer of ``T`` slots: every step overwrites
its right operand, so after execution slot ``t`` holds prefix ``t``.

Nothing here assumes the combiner is associative. The plan fixes a tree
shape and the result is whatever that tree computes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Sequence, TypeVar

S = TypeVar("S")

PAIR = "pair"
FILL = "fill"


@dataclass(frozen=True)
class ScanStep:
    kind: str
    left_index: int
    right_index: int
    out_index: int


@dataclass(frozen=True)
class ScanPlan:
    T: int
    levels: tuple[tuple[ScanStep, ...], ...]

    @property
    def depth(self) -> int:
        return len(self.levels)

    @property
    def op_count(self) -> int:
        return sum(len(level) for level in self.levels)

    def steps(self) -> Iterable[ScanStep]:
        for level in self.levels:
            yield from level


@lru_cache(maxsize=None)
def build_plan(T: int) -> ScanPlan:
    if T < 1:
        raise ValueError(f"sequence length must be >= 1, got {T}")
    pair_levels: list[list[ScanStep]] = []
    fill_levels: list[list[ScanStep]] = []

    view = list(range(T))
    while len(view) >= 2:
        n = len(view)
        pair_levels.append([ScanStep(PAIR, view[2 * j], view[2 * j + 1], view[2 * j + 1])
                            for j in range(n // 2)])
        fill_levels.append([ScanStep(FILL, view[2 * j - 1], view[2 * j], view[2 * j])
                            for j in range(1, (n + 1) // 2)])
        view = view[1::2]

    levels = pair_levels + fill_levels[::-1]
    return ScanPlan(T, tuple(tuple(lv) for lv in levels if lv))


def restrict(plan: ScanPlan, targets: Iterable[int]) -> ScanPlan:
    """Sub-plan containing only the steps that feed the final value of ``targets``."""
    needed = set(targets)
    if any(not 0 <= t < plan.T for t in needed):
        raise ValueError(f"targets outside [0, {plan.T})")
    kept: list[tuple[ScanStep, ...]] = []
    for level in reversed(plan.levels):
        keep = tuple(s for s in level if s.out_index in needed)
        for s in keep:
            needed.discard(s.out_index)
        for s in keep:
            needed.add(s.left_index)
            needed.add(s.right_index)
        if keep:
            kept.append(keep)
    return ScanPlan(plan.T, tuple(reversed(kept)))


@lru_cache(maxsize=None)
def reduce_plan(T: int) -> ScanPlan:
    return restrict(build_plan(T), [T - 1])


def execute_levels(plan: ScanPlan, leaves: Sequence[S],
                   level_fn: Callable[[list[S], list[S]], list[S]]) -> list[S]:
    """Run ``plan`` calling ``level_fn(lefts, rights)`` once per level.

    ``level_fn`` receives every operand pair of the level at once, which lets
    callers batch the combiner across the level.
    """
    if len(leaves) != plan.T:
        raise ValueError(f"plan is for {plan.T} leaves, got {len(leaves)}")
    buf = list(leaves)
    for level in plan.levels:
        outs = level_fn([buf[s.left_index] for s in level], [buf[s.right_index] for s in level])
        for s, v in zip(level, outs):
            buf[s.out_index] = v
    return buf


def execute_prefix(plan: ScanPlan, leaves: Sequence[S], combiner: Callable[[S, S], S]) -> list[S]:
    return execute_levels(plan, leaves, lambda ls, rs: [combiner(a, b) for a, b in zip(ls, rs)])


def execute_reduce(plan: ScanPlan, leaves: Sequence[S], combiner: Callable[[S, S], S]) -> S:
    sub = restrict(plan, [plan.T - 1])
    return execute_prefix(sub, leaves, combiner)[-1]


def depth_work(plan: ScanPlan) -> tuple[int, int]:
    """(work, depth): combiner applications and sequential levels."""
    return plan.op_count, plan.depth


def log_bound(T: int) -> int:
    return 2 * math.ceil(math.log2(T)) if T > 1 else 0


def path_length(plan: ScanPlan, source: int = 0, target: int | None = None) -> int:
    """Longest chain of combiner applications from leaf ``source`` to output ``target``."""
    target = plan.T - 1 if target is None else target
    # longest path from the source leaf into each slot's current value; -1 = unreachable
    dist = [-1] * plan.T
    dist[source] = 0
    for level in plan.levels:
        upd = []
        for s in level:
            best = max(dist[s.left_index], dist[s.right_index])
            upd.append((s.out_index, best + 1 if best >= 0 else -1))
        for slot, d in upd:
            dist[slot] = d
    return dist[target]


def live_states(plan: ScanPlan) -> int:
    """Peak number of states held while executing the plan in place.

    The buffer always holds ``T`` states; a level additionally holds its freshly
    combined outputs until they overwrite their slots.
    """
    return plan.T + max((len(level) for level in plan.levels), default=0)


def materialized_states(plan: ScanPlan) -> int:
    """States created over a full run: the leaves plus one per combiner call."""
    return plan.T + plan.op_count
