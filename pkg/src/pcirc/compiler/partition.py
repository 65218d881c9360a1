"""Grouping of blocks by child count.

Blocks within a layer rarely share one fan-in, so the engine pads each block
to its group's capacity (absent children behave as probability-zero pseudo
nodes).  Picking group capacities is an optimization problem: few groups
mean fewer kernel launches, tight capacities mean less wasted work.  A
dynamic program over the sorted unique counts yields, for every group count
n, the assignment of minimal total overhead sum(capacity_i * members_i);
the plan keeps the smallest n whose optimum stays within a tolerance of the
ideal (the plain sum of counts), falling back to the maximum group count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import UsageError


@dataclass(frozen=True)
class PartitionPlan:
    capacities: tuple[int, ...]  # ascending, one per group
    assignment: np.ndarray  # group index per input entry
    overhead: int  # sum over entries of their group capacity
    target: int  # overhead budget derived from the tolerance
    num_groups: int

    def capacity_of(self, entry: int) -> int:
        return self.capacities[self.assignment[entry]]


def round_child_counts(nchs: np.ndarray, quantum: int) -> np.ndarray:
    """Round counts up to multiples of quantum (coalesces near-equal fan-ins
    so the grouping DP stays small on irregular layers)."""
    if quantum < 1:
        raise UsageError(f"rounding quantum must be >= 1, got {quantum}")
    arr = np.asarray(nchs, dtype=np.int64)
    return -(-arr // quantum) * quantum


def partition_layer(
    nchs: np.ndarray,
    max_groups: int,
    tol: float,
    round_quantum: int | None = None,
    round_threshold: int | None = None,
) -> PartitionPlan:
    """Group child counts into at most max_groups capacity classes.

    When round_quantum is given and the number of unique counts exceeds
    round_threshold, counts are first rounded up to multiples of the quantum.
    The returned overhead is optimal for the realized group count.
    """
    if max_groups < 1:
        raise UsageError(f"max_groups must be >= 1, got {max_groups}")
    if tol < 0:
        raise UsageError(f"tol must be >= 0, got {tol}")
    vals = np.asarray(nchs, dtype=np.int64)
    if vals.ndim != 1:
        raise UsageError("nchs must be one-dimensional")
    if vals.size == 0:
        return PartitionPlan((), np.zeros(0, dtype=np.int64), 0, 0, 0)
    if vals.min() < 1:
        raise UsageError("child counts must be positive")

    work = vals
    if (
        round_quantum is not None
        and round_threshold is not None
        and np.unique(work).size > round_threshold
    ):
        work = round_child_counts(work, round_quantum)

    u, counts = np.unique(work, return_counts=True)
    csum = counts.cumsum()
    L = u.size
    G = min(max_groups, L)

    # dp[j, i]: minimal overhead covering values u[0..i] with j+1 groups,
    # the last group capped at u[i].
    dp = np.full((G, L), np.iinfo(np.int64).max, dtype=np.int64)
    arg = np.full((G, L), -1, dtype=np.int64)
    dp[0] = u * csum
    for j in range(1, G):
        for i in range(j, L):
            ks = np.arange(j - 1, i)
            cand = dp[j - 1, ks] + u[i] * (csum[i] - csum[ks])
            t = int(np.argmin(cand))
            dp[j, i] = cand[t]
            arg[j, i] = ks[t]

    total = int(work.sum())
    target = math.ceil(total * (1.0 + tol))
    chosen = G
    for n in range(1, G + 1):
        if dp[n - 1, L - 1] <= target:
            chosen = n
            break

    caps = []
    i = L - 1
    for j in range(chosen - 1, -1, -1):
        caps.append(int(u[i]))
        i = int(arg[j, i])
    caps.reverse()
    capacities = tuple(caps)

    assignment = np.searchsorted(np.asarray(capacities), work)
    overhead = int(np.asarray(capacities)[assignment].sum())
    assert overhead == int(dp[chosen - 1, L - 1])
    return PartitionPlan(capacities, assignment, overhead, target, chosen)
