"""Brute-force reference implementations.

Everything here trades speed for being obviously correct: recursive circuit
evaluation, flow propagation by definition, finite-difference gradients,
exhaustive grouping search, and the classical HMM forward recursion.  The
compiled engine is tested against these on desk-scale inputs.
"""
from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np

from .graph import CircuitGraph, InputNode, ProductNode, SumNode

MISSING = -1


def naive_forward(g: CircuitGraph, x: np.ndarray) -> np.ndarray:
    """Log value of every node for one sample.

    x holds one category index per variable; MISSING marginalizes the
    variable (the input evaluates to 1).
    """
    x = np.asarray(x)
    params = g.params
    logs = np.empty(g.num_nodes, dtype=np.float64)
    with np.errstate(divide="ignore"):
        for nid in g.topological_order():
            node = g.nodes[nid]
            if isinstance(node, InputNode):
                cat = int(x[node.var])
                if cat == MISSING:
                    logs[nid] = 0.0
                else:
                    logs[nid] = np.log(params[node.slot + cat])
            elif isinstance(node, ProductNode):
                logs[nid] = logs[node.children].sum()
            else:
                terms = np.log(params[node.slots]) + logs[node.children]
                logs[nid] = np.logaddexp.reduce(terms)
    return logs


def naive_flows(
    g: CircuitGraph, x: np.ndarray
) -> tuple[np.ndarray, dict[tuple[int, int], float]]:
    """Node flows and per-edge flows for one sample, by definition.

    The root flow is 1.  A sum edge carries theta * p_child / p_sum times the
    sum's flow; the child accumulates that amount.  A product passes its flow
    to every child unchanged.  This matches the identity
    flow(n) = d log p_root / d log p_n on circuits where it is defined, and
    extends it to inputs that sit directly under sums.
    """
    logs = naive_forward(g, x)
    flows = np.zeros(g.num_nodes, dtype=np.float64)
    flows[g.root] = 1.0
    edge_flows: dict[tuple[int, int], float] = {}
    params = g.params
    for nid in reversed(g.topological_order()):
        node = g.nodes[nid]
        if isinstance(node, InputNode):
            continue
        f = flows[nid]
        if isinstance(node, ProductNode):
            for c in node.children.tolist():
                flows[c] += f
            continue
        lm = logs[nid]
        for idx, (c, slot) in enumerate(
            zip(node.children.tolist(), node.slots.tolist())
        ):
            theta = params[slot]
            if f == 0.0 or theta == 0.0 or lm == -np.inf:
                ef = 0.0
            else:
                ef = math.exp(math.log(theta) + logs[c] - lm) * f
            edge_flows[(nid, idx)] = ef
            flows[c] += ef
    return flows, edge_flows


def naive_slot_flows(g: CircuitGraph, x: np.ndarray) -> np.ndarray:
    """Flows aggregated per logical parameter slot (one sample).

    Sum edges add their edge flow to the edge's slot.  An observed input adds
    its node flow to the slot of the observed category; a marginalized input
    spreads its flow over the categories in proportion to the pmf.
    """
    x = np.asarray(x)
    flows, edge_flows = naive_flows(g, x)
    acc = np.zeros(g.num_param_slots, dtype=np.float64)
    params = g.params
    for nid, node in enumerate(g.nodes):
        if isinstance(node, SumNode):
            for idx, slot in enumerate(node.slots.tolist()):
                acc[slot] += edge_flows[(nid, idx)]
        elif isinstance(node, InputNode):
            cat = int(x[node.var])
            if cat == MISSING:
                rng = slice(node.slot, node.slot + node.num_categories)
                acc[rng] += flows[nid] * params[rng]
            else:
                acc[node.slot + cat] += flows[nid]
    return acc


def fd_param_gradient(
    g: CircuitGraph, x: np.ndarray, slot: int, h: float = 1e-6
) -> float:
    """Central finite difference of log p_root with respect to one logical
    slot, with renormalization deliberately disabled."""
    params = g.params
    saved = params[slot]
    try:
        params[slot] = saved + h
        lp = naive_forward(g, x)[g.root]
        params[slot] = saved - h
        lm = naive_forward(g, x)[g.root]
    finally:
        params[slot] = saved
    return (lp - lm) / (2.0 * h)


def brute_partition(nchs: Sequence[int], num_groups: int) -> int:
    """Minimal total overhead of grouping child counts into at most
    num_groups capacity classes, by exhaustive search.

    Overhead of a group with capacity k holding c entries is k * c; the
    capacity of a group is the largest value placed in it, so only contiguous
    splits of the sorted unique values need to be considered.
    """
    values, counts = np.unique(np.asarray(nchs, dtype=np.int64), return_counts=True)
    L = values.size
    if L == 0:
        return 0
    best = None
    max_groups = min(num_groups, L)
    for n in range(1, max_groups + 1):
        for cuts in itertools.combinations(range(1, L), n - 1):
            bounds = (0,) + cuts + (L,)
            total = 0
            for a, b in zip(bounds[:-1], bounds[1:]):
                total += int(values[b - 1]) * int(counts[a:b].sum())
            if best is None or total < best:
                best = total
    return int(best)


def hmm_forward_reference(
    pi: np.ndarray, A: np.ndarray, E: np.ndarray, tokens: np.ndarray
) -> np.ndarray:
    """Log-likelihood of token sequences under a homogeneous HMM via the
    classical alpha recursion, in log space.

    pi: (K,) initial distribution; A: (K, K) row-stochastic transitions from
    the state at step t to the state at step t+1; E: (K, V) emissions.
    tokens: (B, T) category indices, MISSING marginalizes a step.
    """
    tokens = np.atleast_2d(np.asarray(tokens))
    B, T = tokens.shape
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
        log_A = np.log(A)
        log_E = np.log(E)

    def emit(t: int, la: np.ndarray) -> np.ndarray:
        obs = tokens[:, t] != MISSING
        out = la.copy()
        idx = np.where(obs)[0]
        if idx.size:
            out[idx] += log_E[:, tokens[idx, t]].T
        return out

    la = emit(0, np.broadcast_to(log_pi, (B, pi.size)).copy())
    for t in range(1, T):
        stacked = la[:, :, None] + log_A[None, :, :]
        m = stacked.max(axis=1)
        with np.errstate(invalid="ignore"):
            la = m + np.log(
                np.exp(stacked - m[:, None, :]).sum(axis=1)
            )
        la = np.where(np.isneginf(m), -np.inf, la)
        la = emit(t, la)
    m = la.max(axis=1)
    out = m + np.log(np.exp(la - m[:, None]).sum(axis=1))
    return np.where(np.isneginf(m), -np.inf, out)
