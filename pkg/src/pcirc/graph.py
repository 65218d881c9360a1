"""Probabilistic-circuit DAGs over categorical variables.

A circuit is a DAG of input, product, and sum nodes.  Input nodes hold a
categorical distribution over one variable, product nodes multiply children
with pairwise-disjoint scopes, and sum nodes mix children that share a scope.
Parameters live in a flat pool of logical slots; nodes reference slots by
index, so several edges (or several input nodes) may share one slot, which is
how parameter tying is expressed structurally.  An optional tying map adds
slot-group equivalences on top of that.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import CircuitValidationError

SIMPLEX_TOL = 1e-9


@dataclass
class InputNode:
    id: int
    var: int
    num_categories: int
    slot: int  # first of num_categories consecutive logical slots


@dataclass
class ProductNode:
    id: int
    children: np.ndarray  # int64 child ids


@dataclass
class SumNode:
    id: int
    children: np.ndarray  # int64 child ids
    slots: np.ndarray  # int64, one logical parameter slot per edge


Node = InputNode | ProductNode | SumNode


@dataclass
class Violation:
    code: str
    nodes: tuple[int, ...]
    message: str

    def __str__(self) -> str:
        return f"[{self.code}] {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "valid"
        return "\n".join(str(v) for v in self.violations)

    def raise_if_invalid(self) -> None:
        if not self.ok:
            raise CircuitValidationError(str(self))


def _as_ids(ids: Sequence[int] | np.ndarray) -> np.ndarray:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise CircuitValidationError("child list must be a non-empty 1-d sequence")
    return arr


class CircuitGraph:
    """Mutable circuit builder; freeze() locks the structure for compilation."""

    def __init__(self, num_vars: int):
        if num_vars < 1:
            raise CircuitValidationError(f"num_vars must be >= 1, got {num_vars}")
        self.num_vars = int(num_vars)
        self.nodes: list[Node] = []
        self.tying: dict[int, int] = {}
        self._params = np.zeros(64, dtype=np.float64)
        self._num_slots = 0
        self._root: int | None = None
        self._frozen = False
        self._topo_cache: list[int] | None = None

    # -- parameter pool -------------------------------------------------

    @property
    def num_param_slots(self) -> int:
        return self._num_slots

    @property
    def params(self) -> np.ndarray:
        """View of the logical parameter vector (do not resize)."""
        return self._params[: self._num_slots]

    def _alloc_slots(self, n: int) -> int:
        start = self._num_slots
        need = start + n
        if need > self._params.size:
            cap = max(need, 2 * self._params.size)
            grown = np.zeros(cap, dtype=np.float64)
            grown[: self._num_slots] = self._params[: self._num_slots]
            self._params = grown
        self._num_slots = need
        return start

    def set_param_values(self, slots: np.ndarray, values: np.ndarray) -> None:
        """Write parameter values; allowed on frozen graphs (EM write-back)."""
        self._params[slots] = values

    # -- construction ---------------------------------------------------

    def _check_mutable(self) -> None:
        if self._frozen:
            raise CircuitValidationError("graph is frozen; structure cannot change")

    def _check_children(self, children: np.ndarray) -> None:
        if children.min() < 0 or children.max() >= len(self.nodes):
            raise CircuitValidationError(
                f"child id out of range (have {len(self.nodes)} nodes)"
            )

    def add_input(
        self,
        var: int,
        pmf: Sequence[float] | np.ndarray | None = None,
        *,
        slot: int | None = None,
        num_categories: int | None = None,
    ) -> int:
        """Add a categorical input node.

        Pass an explicit slot to share a previously allocated pmf range
        (structural tying); otherwise a fresh range is allocated from pmf.
        """
        self._check_mutable()
        if not 0 <= var < self.num_vars:
            raise CircuitValidationError(f"var {var} out of range [0, {self.num_vars})")
        if pmf is not None:
            pmf = np.asarray(pmf, dtype=np.float64)
            if pmf.ndim != 1 or pmf.size < 1:
                raise CircuitValidationError("pmf must be a non-empty vector")
            if pmf.min() < 0 or abs(pmf.sum() - 1.0) > SIMPLEX_TOL:
                raise CircuitValidationError(
                    f"pmf for var {var} is not on the probability simplex"
                )
            ncat = pmf.size
            if num_categories is not None and num_categories != ncat:
                raise CircuitValidationError("num_categories disagrees with pmf length")
        elif num_categories is not None:
            ncat = int(num_categories)
        else:
            raise CircuitValidationError("add_input needs a pmf or num_categories")
        if slot is None:
            slot = self._alloc_slots(ncat)
        elif slot < 0 or slot + ncat > self._num_slots:
            raise CircuitValidationError("input slot range not allocated")
        if pmf is not None:
            self._params[slot : slot + ncat] = pmf
        node = InputNode(len(self.nodes), var, ncat, int(slot))
        self.nodes.append(node)
        self._invalidate()
        return node.id

    def add_product(self, children: Sequence[int] | np.ndarray) -> int:
        self._check_mutable()
        ch = _as_ids(children)
        self._check_children(ch)
        node = ProductNode(len(self.nodes), ch)
        self.nodes.append(node)
        self._invalidate()
        return node.id

    def add_sum(
        self,
        children: Sequence[int] | np.ndarray,
        params: Sequence[float] | np.ndarray | None = None,
        *,
        slots: Sequence[int] | np.ndarray | None = None,
    ) -> int:
        """Add a sum node.

        Pass explicit slots to share previously allocated edge parameters
        (structural tying); otherwise a fresh contiguous range is used.
        """
        self._check_mutable()
        ch = _as_ids(children)
        self._check_children(ch)
        if params is not None:
            params = np.asarray(params, dtype=np.float64)
            if params.shape != ch.shape:
                raise CircuitValidationError("one parameter per child edge required")
            if params.min() < 0 or abs(params.sum() - 1.0) > SIMPLEX_TOL:
                raise CircuitValidationError("sum weights are not on the simplex")
        if slots is None:
            if params is None:
                raise CircuitValidationError("add_sum needs params or slots")
            start = self._alloc_slots(ch.size)
            slot_arr = np.arange(start, start + ch.size, dtype=np.int64)
        else:
            slot_arr = np.asarray(slots, dtype=np.int64)
            if slot_arr.shape != ch.shape:
                raise CircuitValidationError("one slot per child edge required")
            if slot_arr.min() < 0 or slot_arr.max() >= self._num_slots:
                raise CircuitValidationError("sum slot out of allocated range")
        if params is not None:
            self._params[slot_arr] = params
        node = SumNode(len(self.nodes), ch, slot_arr)
        self.nodes.append(node)
        self._invalidate()
        return node.id

    def tie(self, slots: Iterable[int], group: int | None = None) -> int:
        """Assign the given logical slots to one tying group."""
        self._check_mutable()
        if group is None:
            group = (max(self.tying.values()) + 1) if self.tying else 0
        for s in slots:
            if not 0 <= s < self._num_slots:
                raise CircuitValidationError(f"tie slot {s} not allocated")
            self.tying[int(s)] = int(group)
        return group

    def set_root(self, node_id: int) -> None:
        self._check_mutable()
        if not 0 <= node_id < len(self.nodes):
            raise CircuitValidationError(f"root id {node_id} out of range")
        self._root = node_id

    @property
    def root(self) -> int:
        if not self.nodes:
            raise CircuitValidationError("empty graph has no root")
        return self._root if self._root is not None else len(self.nodes) - 1

    def freeze(self) -> None:
        self._frozen = True

    @property
    def frozen(self) -> bool:
        return self._frozen

    def _invalidate(self) -> None:
        self._topo_cache = None

    # -- derived structure ----------------------------------------------

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return sum(
            n.children.size for n in self.nodes if not isinstance(n, InputNode)
        )

    def parent_counts(self) -> np.ndarray:
        counts = np.zeros(len(self.nodes), dtype=np.int64)
        for n in self.nodes:
            if not isinstance(n, InputNode):
                np.add.at(counts, n.children, 1)
        return counts

    def topological_order(self) -> list[int]:
        """Children-before-parents order; raises on cycles."""
        if self._topo_cache is not None:
            return self._topo_cache
        order = self._kahn()
        if len(order) != len(self.nodes):
            raise CircuitValidationError("cycle detected in circuit graph")
        self._topo_cache = order
        return order

    def _kahn(self) -> list[int]:
        n = len(self.nodes)
        remaining = np.zeros(n, dtype=np.int64)
        parents: list[list[int]] = [[] for _ in range(n)]
        for node in self.nodes:
            if isinstance(node, InputNode):
                continue
            remaining[node.id] = node.children.size
            for c in node.children.tolist():
                parents[c].append(node.id)
        stack = [i for i in range(n) if remaining[i] == 0]
        order: list[int] = []
        while stack:
            nid = stack.pop()
            order.append(nid)
            for p in parents[nid]:
                remaining[p] -= 1
                if remaining[p] == 0:
                    stack.append(p)
        return order

    def scope_masks(self) -> list[int]:
        """Variable scope per node as int bitmasks, children-first order."""
        masks = [0] * len(self.nodes)
        for nid in self.topological_order():
            node = self.nodes[nid]
            if isinstance(node, InputNode):
                masks[nid] = 1 << node.var
            else:
                m = 0
                for c in node.children.tolist():
                    m |= masks[c]
                masks[nid] = m
        return masks

    def scope(self, node_id: int) -> frozenset[int]:
        mask = self.scope_masks()[node_id]
        return frozenset(v for v in range(self.num_vars) if mask >> v & 1)

    def var_categories(self) -> np.ndarray:
        """Category count per variable, taken from the input nodes."""
        cats = np.zeros(self.num_vars, dtype=np.int64)
        for node in self.nodes:
            if isinstance(node, InputNode):
                cats[node.var] = max(cats[node.var], node.num_categories)
        return cats

    # -- validation ------------------------------------------------------

    def validate(self) -> ValidationReport:
        """Check every structural contract; returns a report, never raises."""
        v: list[Violation] = []
        n = len(self.nodes)
        if n == 0:
            return ValidationReport([Violation("empty", (), "graph has no nodes")])
        order = self._kahn()
        if len(order) != n:
            done = set(order)
            bad = tuple(i for i in range(n) if i not in done)
            v.append(Violation("cycle", bad, f"cycle through nodes {bad[:8]}"))

        root = self.root
        pc = self.parent_counts()
        if pc[root] > 0:
            v.append(Violation("root_has_parents", (root,), "root node has parents"))
        orphans = tuple(i for i in range(n) if pc[i] == 0 and i != root)
        if orphans:
            v.append(
                Violation(
                    "multi_root",
                    orphans,
                    f"{len(orphans)} non-root node(s) have no parents",
                )
            )

        reach = np.zeros(n, dtype=bool)
        reach[root] = True
        stack = [root]
        while stack:
            node = self.nodes[stack.pop()]
            if isinstance(node, InputNode):
                continue
            for c in node.children.tolist():
                if not reach[c]:
                    reach[c] = True
                    stack.append(c)
        unreachable = tuple(
            i for i in range(n) if not reach[i] and i != root and pc[i] > 0
        )
        if unreachable:
            v.append(
                Violation(
                    "unreachable",
                    unreachable,
                    f"{len(unreachable)} node(s) unreachable from root",
                )
            )

        for node in self.nodes:
            if isinstance(node, SumNode):
                kinds = [
                    isinstance(self.nodes[c], SumNode) for c in node.children.tolist()
                ]
                if any(kinds):
                    v.append(
                        Violation(
                            "alternation",
                            (node.id,),
                            f"sum {node.id} has a sum child",
                        )
                    )
            elif isinstance(node, ProductNode):
                kinds = [
                    isinstance(self.nodes[c], ProductNode)
                    for c in node.children.tolist()
                ]
                if any(kinds):
                    v.append(
                        Violation(
                            "alternation",
                            (node.id,),
                            f"product {node.id} has a product child",
                        )
                    )

        ncat_by_var: dict[int, int] = {}
        for node in self.nodes:
            if isinstance(node, InputNode):
                seen = ncat_by_var.setdefault(node.var, node.num_categories)
                if seen != node.num_categories:
                    v.append(
                        Violation(
                            "var_categories",
                            (node.id,),
                            f"var {node.var} has inputs with {seen} and "
                            f"{node.num_categories} categories",
                        )
                    )

        params = self.params
        for node in self.nodes:
            if isinstance(node, InputNode):
                pmf = params[node.slot : node.slot + node.num_categories]
                if pmf.min() < 0 or abs(pmf.sum() - 1.0) > SIMPLEX_TOL:
                    v.append(
                        Violation(
                            "simplex",
                            (node.id,),
                            f"input {node.id} pmf off the simplex "
                            f"(sum={pmf.sum():.12g})",
                        )
                    )
            elif isinstance(node, SumNode):
                w = params[node.slots]
                if w.min() < 0 or abs(w.sum() - 1.0) > SIMPLEX_TOL:
                    v.append(
                        Violation(
                            "simplex",
                            (node.id,),
                            f"sum {node.id} weights off the simplex "
                            f"(sum={w.sum():.12g})",
                        )
                    )

        if len(order) == n:
            masks = [0] * n
            for nid in order:
                node = self.nodes[nid]
                if isinstance(node, InputNode):
                    masks[nid] = 1 << node.var
                    continue
                m = 0
                if isinstance(node, ProductNode):
                    for c in node.children.tolist():
                        if m & masks[c]:
                            v.append(
                                Violation(
                                    "decomposability",
                                    (node.id,),
                                    f"product {node.id} children share variables",
                                )
                            )
                            break
                        m |= masks[c]
                    else:
                        masks[nid] = m
                        continue
                    for c in node.children.tolist():
                        m |= masks[c]
                else:
                    first = masks[node.children[0]]
                    for c in node.children.tolist():
                        if masks[c] != first:
                            v.append(
                                Violation(
                                    "smoothness",
                                    (node.id,),
                                    f"sum {node.id} children have unequal scopes",
                                )
                            )
                            break
                        m |= masks[c]
                    m |= first
                masks[nid] = m
            full = (1 << self.num_vars) - 1
            if masks[root] != full:
                missing = [v_ for v_ in range(self.num_vars) if not masks[root] >> v_ & 1]
                v.append(
                    Violation(
                        "root_scope",
                        (root,),
                        f"root scope misses variables {missing[:8]}",
                    )
                )
        return ValidationReport(v)

    @classmethod
    def from_parts(
        cls,
        num_vars: int,
        nodes: list[Node],
        params: np.ndarray,
        root: int | None = None,
        tying: dict[int, int] | None = None,
    ) -> "CircuitGraph":
        """Assemble a graph from parsed parts; structural checks are deferred
        to validate(), but ids must already be dense and in range."""
        g = cls(num_vars)
        g.nodes = nodes
        g._params = np.asarray(params, dtype=np.float64).copy()
        g._num_slots = g._params.size
        if root is not None:
            if not 0 <= root < len(nodes):
                raise CircuitValidationError(f"root id {root} out of range")
            g._root = root
        if tying:
            g.tying = dict(tying)
        return g
