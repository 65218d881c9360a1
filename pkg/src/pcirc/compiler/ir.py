"""Index-tensor IR produced by the compiler and consumed by the runtime.

Everything the engine touches at execution time lives here as flat numpy
index arrays.  Two address spaces are used:

* value slots: rows of the persistent (slots x batch) log-probability and
  flow buffers.  Slot 0..reserved-1 is a constant block (-inf values, zero
  flows) that padded entries point at.  Input and sum nodes own slots;
  product values are recomputed into a scratch region per consuming layer.
* parameter indices: positions in theta_flat.  Index 0 starts a reserved
  all-zero tile for padded edges; tied edges share one physical range.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GraphLayer:
    """One topological layer of the source graph (inspection view)."""

    depth: int
    kind: str  # "input" | "product" | "sum"
    node_ids: np.ndarray


@dataclass
class InputLayerIR:
    """Evaluation plan for all input nodes, grouped by category count."""

    node_ids: np.ndarray  # (n,) source node ids
    slots: np.ndarray  # (n,) persistent value slots
    vars: np.ndarray  # (n,) variable index per node
    param_ids: np.ndarray  # (n,) physical start of each pmf in theta_flat
    num_categories: int  # shared by every node in this chunk


@dataclass
class ProductEvalIR:
    """One fan-in bucket of a layer's product evaluation step."""

    out: np.ndarray  # (n,) scratch slots to write
    children: np.ndarray  # (n, fan_in) persistent value slots to read


@dataclass
class FlowPushIR:
    """Distribution of finished product flows to their children."""

    rows: np.ndarray  # (n,) rows of the product-flow buffer
    children: np.ndarray  # (n, fan_in) persistent value slots to add into


@dataclass
class ForwardGroupIR:
    """One forward kernel configuration: sum blocks sharing a padded
    child-block capacity."""

    sum_ids: np.ndarray  # (rows,) value-slot start per sum block
    prod_ids: np.ndarray  # (rows, cap) scratch start per child block
    param_ids: np.ndarray  # (rows, cap) theta_flat start per parameter tile
    flow_ids: np.ndarray  # (rows, cap) f_params start per accumulation tile


@dataclass
class BackwardGroupIR:
    """One backward kernel configuration: product blocks sharing a padded
    parent-block capacity."""

    ch_ids: np.ndarray  # (rows,) scratch start per product block
    par_ids: np.ndarray  # (rows, cap) value-slot start per parent sum block
    par_param_ids: np.ndarray  # (rows, cap) theta_flat start per tile


@dataclass
class SumLayerIR:
    """One compiled sum layer plus the product evaluation step feeding it."""

    depth: int
    k_m: int  # sum block size
    k_n: int  # product block size
    scratch_window: int  # rows of scratch used (incl. the leading pad block)
    prod_evals: list[ProductEvalIR]
    fwd_groups: list[ForwardGroupIR]
    bwd_groups: list[BackwardGroupIR]
    # flow bookkeeping: scratch slot and flow-buffer row of every product
    # evaluated here, plus the pushes scheduled once those rows are final
    prod_slots: np.ndarray
    prod_rows: np.ndarray
    pushes: list[FlowPushIR]
    # edge table for this layer (pseudo entries excluded), used by
    # inspection and structural tests
    edge_sums: np.ndarray  # (E,) source sum node id per edge
    edge_children: np.ndarray  # (E,) source child node id per edge
    edge_slots: np.ndarray  # (E,) logical parameter slot per edge
    report: "LayerReport" = None


@dataclass
class LayerReport:
    """Per-layer compilation statistics for the inspection dump."""

    depth: int
    num_sums: int
    num_prods: int
    k_m: int
    k_n: int
    demoted: bool
    sum_pad_fraction: float
    prod_pad_fraction: float
    fwd_capacities: tuple[int, ...]
    fwd_overhead: int
    fwd_target: int
    fwd_ideal: int  # sum of true child-block counts
    bwd_capacities: tuple[int, ...]
    bwd_overhead: int
    bwd_target: int
    bwd_ideal: int

    @property
    def fwd_padding_fraction(self) -> float:
        return self.fwd_overhead / self.fwd_ideal - 1.0 if self.fwd_ideal else 0.0

    @property
    def bwd_padding_fraction(self) -> float:
        return self.bwd_overhead / self.bwd_ideal - 1.0 if self.bwd_ideal else 0.0


@dataclass
class CompiledCircuit:
    """Layered block-parallel program for one circuit and one config."""

    graph_hash: str
    config: "CompileConfig"  # noqa: F821 (defined in build)
    num_vars: int
    num_nodes: int
    var_categories: np.ndarray
    # buffer geometry
    reserved: int  # leading constant value slots
    num_value_slots: int
    scratch_size: int
    num_prod_rows: int
    theta_size: int  # physical parameter count (prefix of f_params)
    f_params_size: int  # theta_size plus replicated accumulator ranges
    zero_len: int  # length of the reserved zero tile at theta_flat[0]
    # parameters and tying
    theta: np.ndarray  # (theta_size,) physical values
    slot_phys: np.ndarray  # logical slot -> physical index (-1 if unused)
    reductions: np.ndarray  # (r, 3) rows of [src_start, dst_start, length]
    tile_starts: np.ndarray  # physical start of every distinct tile
    tile_writers: np.ndarray  # accumulation sites per tile, aligned
    # simplex groups over physical indices (ragged: indices + offsets)
    group_idx: np.ndarray
    group_off: np.ndarray
    # program
    input_layer: list[InputLayerIR]
    layers: list[SumLayerIR]
    # root access: value slot for input/sum roots, else the child slots and
    # flow row of the root product
    root_slot: int
    root_children: np.ndarray | None
    root_row: int
    # node -> buffer maps for inspection and tests
    node_value_slot: np.ndarray  # (num_nodes,), -1 for products
    node_prod_row: np.ndarray  # (num_nodes,), -1 for non-products

    @property
    def num_edges(self) -> int:
        return int(sum(l.edge_sums.size for l in self.layers))

    def describe(self) -> str:
        """Human-readable compilation dump (layers, groups, padding)."""
        lines = [
            f"circuit hash {self.graph_hash[:16]}  nodes {self.num_nodes}  "
            f"edges {self.num_edges}",
            f"value slots {self.num_value_slots} (reserved {self.reserved})  "
            f"scratch rows {self.scratch_size}  params {self.theta_size}  "
            f"flow accumulators {self.f_params_size}",
        ]
        for layer in self.layers:
            r = layer.report
            lines.append(
                f"layer d={r.depth}: sums {r.num_sums} prods {r.num_prods} "
                f"K={r.k_m}x{r.k_n}"
                + (" (demoted)" if r.demoted else "")
                + f" pad {r.sum_pad_fraction:.2f}/{r.prod_pad_fraction:.2f}"
            )
            lines.append(
                f"  fwd groups {len(r.fwd_capacities)} caps {r.fwd_capacities} "
                f"overhead {r.fwd_overhead}/{r.fwd_ideal} "
                f"(+{100 * r.fwd_padding_fraction:.1f}%)"
            )
            lines.append(
                f"  bwd groups {len(r.bwd_capacities)} caps {r.bwd_capacities} "
                f"overhead {r.bwd_overhead}/{r.bwd_ideal} "
                f"(+{100 * r.bwd_padding_fraction:.1f}%)"
            )
        return "\n".join(lines)
