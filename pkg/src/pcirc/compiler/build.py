"""Compilation of a circuit DAG into the layered block-parallel program.

The pipeline: assign topological depths; for every depth holding sum nodes,
re-index the products those sums consume (plus direct input children,
wrapped as single-child pseudo products) into a per-layer scratch namespace;
detect the layer's block structure; partition sum blocks by child-block
count into padded forward kernel groups and product blocks by parent-block
count into backward groups; and emit flattened parameter tiles with all
index arrays.

Parameter handling: logical slots (as stored on the graph) map to physical
positions in theta_flat so each (sum block, product block) pair owns one
contiguous row-major K_M*K_N tile.  Tiles with identical tied-slot patterns
collapse into one physical range.  A range with more accumulation sites
than the contention threshold gets one replica range per site plus an entry
in the reduction list; a range that would be hit twice within one kernel
column is replicated as well, so every scatter in the runtime stays
collision-free.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..errors import CircuitValidationError, UsageError
from ..graph import CircuitGraph, InputNode, ProductNode, SumNode
from .blocks import PAD, detect_blocks
from .ir import (
    BackwardGroupIR,
    CompiledCircuit,
    FlowPushIR,
    ForwardGroupIR,
    GraphLayer,
    InputLayerIR,
    LayerReport,
    ProductEvalIR,
    SumLayerIR,
)
from .partition import partition_layer

_ALLOWED_K = (1, 2, 4, 8, 16, 32, 64)

# input child c of a sum compiles to a single-child pseudo product whose
# scratch key must not collide with product ids (>= 0) or PAD (-1)
_VKEY_BASE = -2


def _vkey(input_id: int) -> int:
    return _VKEY_BASE - input_id


def _vkey_decode(key: int) -> int:
    return _VKEY_BASE - key


@dataclass(frozen=True)
class CompileConfig:
    """Block, grouping, and tying knobs for compilation."""

    block_size: int = 32
    sum_block_size: int | None = None  # overrides block_size for sums
    prod_block_size: int | None = None  # overrides block_size for products
    max_groups: int = 8
    tolerance: float = 0.25
    round_quantum: int = 10
    round_threshold: int = 256
    contention_threshold: int = 4
    demote_threshold: float = 0.5

    def __post_init__(self):
        for name in ("block_size", "sum_block_size", "prod_block_size"):
            val = getattr(self, name)
            if val is not None and val not in _ALLOWED_K:
                raise UsageError(
                    f"{name} must be a power of two in {_ALLOWED_K}, got {val}"
                )
        if self.max_groups < 1:
            raise UsageError(f"max_groups must be >= 1, got {self.max_groups}")
        if self.tolerance < 0:
            raise UsageError(f"tolerance must be >= 0, got {self.tolerance}")
        if self.round_quantum < 1:
            raise UsageError(f"round_quantum must be >= 1, got {self.round_quantum}")
        if self.contention_threshold < 1:
            raise UsageError(
                f"contention_threshold must be >= 1, got {self.contention_threshold}"
            )
        if not 0.0 <= self.demote_threshold <= 1.0:
            raise UsageError(
                f"demote_threshold must lie in [0, 1], got {self.demote_threshold}"
            )

    @property
    def k_m(self) -> int:
        return self.block_size if self.sum_block_size is None else self.sum_block_size

    @property
    def k_n(self) -> int:
        return self.block_size if self.prod_block_size is None else self.prod_block_size


def node_depths(g: CircuitGraph) -> np.ndarray:
    """Topological depth per node: inputs 0, else 1 + max child depth."""
    depth = np.zeros(g.num_nodes, dtype=np.int64)
    for nid in g.topological_order():
        node = g.nodes[nid]
        if not isinstance(node, InputNode):
            depth[nid] = 1 + int(depth[node.children].max())
    return depth


def layerize(g: CircuitGraph) -> list[GraphLayer]:
    """Group nodes into (depth, kind) layers, sorted by depth."""
    depth = node_depths(g)
    kind_rank = {"input": 0, "product": 1, "sum": 2}
    buckets: dict[tuple[int, str], list[int]] = {}
    for node in g.nodes:
        if isinstance(node, InputNode):
            kind = "input"
        elif isinstance(node, ProductNode):
            kind = "product"
        else:
            kind = "sum"
        buckets.setdefault((int(depth[node.id]), kind), []).append(node.id)
    layers = [
        GraphLayer(d, kind, np.array(ids, dtype=np.int64))
        for (d, kind), ids in sorted(
            buckets.items(), key=lambda kv: (kv[0][0], kind_rank[kv[0][1]])
        )
    ]
    return layers


def _union_find_reps(num_slots: int, tying: dict[int, int]) -> np.ndarray:
    """Representative slot per logical slot under the tying relation."""
    parent = np.arange(num_slots, dtype=np.int64)
    groups: dict[int, int] = {}
    for slot, group in sorted(tying.items()):
        if group in groups:
            # union by walking both roots
            a, b = groups[group], slot
            while parent[a] != a:
                a = parent[a]
            while parent[b] != b:
                b = parent[b]
            if a != b:
                parent[max(a, b)] = min(a, b)
        else:
            groups[group] = slot
    # full path compression
    while True:
        nxt = parent[parent]
        if np.array_equal(nxt, parent):
            return parent
        parent = nxt


def _sorted_lookup(keys: np.ndarray, *values: np.ndarray):
    """Return a vectorized mapper from key arrays built by _block_arrays."""
    order = np.argsort(keys, kind="stable")
    sk = keys[order]
    sv = [v[order] for v in values]

    def lookup(query: np.ndarray) -> list[np.ndarray]:
        idx = np.searchsorted(sk, query)
        return [v[idx] for v in sv]

    return lookup


def _block_arrays(blocks: list[np.ndarray]):
    """Flatten a block list into (keys, block index, offset) for real slots."""
    keys, bidx, off = [], [], []
    for i, members in enumerate(blocks):
        real = members != PAD
        keys.append(members[real])
        bidx.append(np.full(int(real.sum()), i, dtype=np.int64))
        off.append(np.nonzero(real)[0].astype(np.int64))
    return np.concatenate(keys), np.concatenate(bidx), np.concatenate(off)


def compile_circuit(
    g: CircuitGraph,
    cfg: CompileConfig | None = None,
    *,
    validate: bool = True,
) -> CompiledCircuit:
    """Compile a circuit into index tensors; deterministic given (g, cfg)."""
    cfg = cfg or CompileConfig()
    if validate:
        g.validate().raise_if_invalid()
    g.freeze()

    nodes = g.nodes
    params = g.params
    depth = node_depths(g)
    root = g.root

    input_ids = [n.id for n in nodes if isinstance(n, InputNode)]
    sum_depths = sorted({int(depth[n.id]) for n in nodes if isinstance(n, SumNode)})

    # -- pass 1: block layouts per sum layer -----------------------------
    layer_sums: dict[int, list[int]] = {}
    for node in nodes:
        if isinstance(node, SumNode):
            layer_sums.setdefault(int(depth[node.id]), []).append(node.id)
    layouts = {}
    layer_keys: dict[int, list[np.ndarray]] = {}
    for d in sum_depths:
        sids = sorted(layer_sums[d])
        keylists = []
        for sid in sids:
            ch = nodes[sid].children
            keys = np.array(
                [
                    c if isinstance(nodes[c], ProductNode) else _vkey(c)
                    for c in ch.tolist()
                ],
                dtype=np.int64,
            )
            keylists.append(keys)
        layouts[d] = detect_blocks(
            np.array(sids, dtype=np.int64),
            keylists,
            cfg.k_m,
            cfg.k_n,
            cfg.demote_threshold,
        )
        layer_keys[d] = keylists

    reserved = max([lo.k_m for lo in layouts.values()] or [1])

    # -- value slots: constants, inputs, then sum blocks per layer -------
    node_value_slot = np.full(g.num_nodes, -1, dtype=np.int64)
    next_slot = reserved
    for iid in input_ids:
        node_value_slot[iid] = next_slot
        next_slot += 1
    sum_block_slots: dict[int, np.ndarray] = {}
    for d in sum_depths:
        lo = layouts[d]
        starts = next_slot + lo.k_m * np.arange(len(lo.sum_blocks), dtype=np.int64)
        sum_block_slots[d] = starts
        for bi, members in enumerate(lo.sum_blocks):
            real = members != PAD
            node_value_slot[members[real]] = starts[bi] + np.nonzero(real)[0]
        next_slot += lo.k_m * len(lo.sum_blocks)
    num_value_slots = next_slot

    # -- physical parameter layout ---------------------------------------
    rep = _union_find_reps(g.num_param_slots, g.tying)
    zero_len = max([lo.k_m * lo.k_n for lo in layouts.values()] or [1])
    theta_parts: list[np.ndarray] = [np.zeros(zero_len)]
    theta_size = zero_len
    slot_phys = np.full(g.num_param_slots, -1, dtype=np.int64)
    assigned_slots: list[np.ndarray] = []  # every (logical, physical) pairing,
    assigned_phys: list[np.ndarray] = []  # kept for the tying alignment check
    pmf_phys_of: dict[int, int] = {}
    pmf_ranges: dict[bytes, int] = {}
    for iid in input_ids:
        node = nodes[iid]
        rng = np.arange(node.slot, node.slot + node.num_categories)
        key = rep[rng].tobytes()
        start = pmf_ranges.get(key)
        if start is None:
            start = theta_size
            pmf_ranges[key] = start
            theta_parts.append(params[rng].copy())
            theta_size += node.num_categories
        pmf_phys_of[iid] = start
        slot_phys[rng] = start + np.arange(node.num_categories)
        assigned_slots.append(rng)
        assigned_phys.append(start + np.arange(node.num_categories))

    tiles: dict[bytes, int] = {}
    tile_writers: dict[int, int] = {}
    layer_geom = {}  # depth -> per-layer arrays reused when emitting groups
    for d in sum_depths:
        lo = layouts[d]
        sids = sorted(layer_sums[d])
        km, kn = lo.k_m, lo.k_n
        tilesz = km * kn
        n_pb = len(lo.prod_blocks)

        counts = [k.size for k in layer_keys[d]]
        e_sum = np.repeat(np.array(sids, dtype=np.int64), counts)
        e_key = np.concatenate(layer_keys[d])
        e_slot = np.concatenate([nodes[s].slots for s in sids])

        skeys, sbidx, soff = _block_arrays(lo.sum_blocks)
        pkeys, pbidx, poff = _block_arrays(lo.prod_blocks)
        sum_lookup = _sorted_lookup(skeys, sbidx, soff)
        prod_lookup = _sorted_lookup(pkeys, pbidx, poff)
        e_sb, e_so = sum_lookup(e_sum)
        e_pb, e_po = prod_lookup(e_key)

        codes = e_sb * n_pb + e_pb
        pair_codes = np.unique(codes)
        pair_idx = np.searchsorted(pair_codes, codes)
        toff = e_so * kn + e_po
        flat = pair_idx * tilesz + toff
        if np.unique(flat).size != flat.size:
            dup = int(e_sum[np.argmax(np.bincount(flat) > 1)])
            raise CircuitValidationError(
                f"sum node {dup} has parallel edges to one child; merge their "
                "weights before compiling"
            )

        grids = np.full((pair_codes.size, tilesz), -1, dtype=np.int64)
        grids[pair_idx, toff] = e_slot
        mask = grids >= 0
        grid_rep = np.where(mask, rep[np.where(mask, grids, 0)], -1)

        pair_theta = np.empty(pair_codes.size, dtype=np.int64)
        for p in range(pair_codes.size):
            key = grid_rep[p].tobytes()
            start = tiles.get(key)
            if start is None:
                start = theta_size
                tiles[key] = start
                vals = np.where(mask[p], params[np.where(mask[p], grids[p], 0)], 0.0)
                theta_parts.append(vals)
                theta_size += tilesz
            pair_theta[p] = start
            tile_writers[start] = tile_writers.get(start, 0) + 1

        slot_phys[e_slot] = pair_theta[pair_idx] + toff
        assigned_slots.append(e_slot)
        assigned_phys.append(pair_theta[pair_idx] + toff)
        layer_geom[d] = {
            "sids": sids,
            "pair_codes": pair_codes,
            "pair_theta": pair_theta,
            "pair_sb": pair_codes // n_pb,
            "pair_pb": pair_codes % n_pb,
            "n_pb": n_pb,
            "edges": (e_sum, e_key, e_slot),
        }

    theta = np.concatenate(theta_parts)

    # tying must respect tile boundaries: every use of one tied slot group
    # has to land on a single physical position
    if assigned_slots:
        all_slots = np.concatenate(assigned_slots)
        all_phys = np.concatenate(assigned_phys)
        order = np.argsort(rep[all_slots], kind="stable")
        ru, pu = rep[all_slots][order], all_phys[order]
        starts = np.r_[0, np.nonzero(np.diff(ru))[0] + 1]
        mins = np.minimum.reduceat(pu, starts)
        maxs = np.maximum.reduceat(pu, starts)
        bad = np.nonzero(mins != maxs)[0]
        if bad.size:
            raise CircuitValidationError(
                f"parameter tying of slot group {int(ru[starts[bad[0]]])} does "
                "not align with the compiled block layout; compile with block "
                "size 1"
            )

    # -- groups, product evaluation, and flow bookkeeping ----------------
    prod_row_of: dict[int, int] = {}
    push_done: set[int] = set()
    num_prod_rows = 0
    scratch_size = 1
    layers: list[SumLayerIR] = []
    for d in sum_depths:
        lo = layouts[d]
        geom = layer_geom[d]
        km, kn = lo.k_m, lo.k_n
        n_pb = geom["n_pb"]
        prod_scratch = (1 + np.arange(n_pb, dtype=np.int64)) * kn
        window = int((1 + n_pb) * kn)
        scratch_size = max(scratch_size, window)
        blk_slots = sum_block_slots[d]

        nchs = np.array([c.size for c in lo.child_blocks], dtype=np.int64)
        plan = partition_layer(
            nchs, cfg.max_groups, cfg.tolerance, cfg.round_quantum, cfg.round_threshold
        )
        pc, pt = geom["pair_codes"], geom["pair_theta"]
        fwd_groups = []
        for gi in range(plan.num_groups):
            rows = np.nonzero(plan.assignment == gi)[0]
            cap = plan.capacities[gi]
            prod_ids = np.zeros((rows.size, cap), dtype=np.int64)
            param_ids = np.zeros((rows.size, cap), dtype=np.int64)
            for r, bi in enumerate(rows.tolist()):
                cbs = lo.child_blocks[bi]
                prod_ids[r, : cbs.size] = prod_scratch[cbs]
                param_ids[r, : cbs.size] = pt[np.searchsorted(pc, bi * n_pb + cbs)]
            fwd_groups.append(
                ForwardGroupIR(
                    sum_ids=blk_slots[rows],
                    prod_ids=prod_ids,
                    param_ids=param_ids,
                    flow_ids=param_ids.copy(),
                )
            )

        npar = np.bincount(geom["pair_pb"], minlength=n_pb)
        bplan = partition_layer(
            npar, cfg.max_groups, cfg.tolerance, cfg.round_quantum, cfg.round_threshold
        )
        psort = np.lexsort((geom["pair_sb"], geom["pair_pb"]))
        pb_sorted = geom["pair_pb"][psort]
        bwd_groups = []
        for gi in range(bplan.num_groups):
            rows = np.nonzero(bplan.assignment == gi)[0]
            cap = bplan.capacities[gi]
            par_ids = np.zeros((rows.size, cap), dtype=np.int64)
            par_param_ids = np.zeros((rows.size, cap), dtype=np.int64)
            for r, bi in enumerate(rows.tolist()):
                lo_i = int(np.searchsorted(pb_sorted, bi, side="left"))
                hi_i = int(np.searchsorted(pb_sorted, bi, side="right"))
                sel = psort[lo_i:hi_i]
                par_ids[r, : sel.size] = blk_slots[geom["pair_sb"][sel]]
                par_param_ids[r, : sel.size] = pt[sel]
            bwd_groups.append(
                BackwardGroupIR(
                    ch_ids=prod_scratch[rows],
                    par_ids=par_ids,
                    par_param_ids=par_param_ids,
                )
            )

        # product evaluation, flow rows, and pushes, bucketed by fan-in
        evals: dict[int, tuple[list[int], list[np.ndarray]]] = {}
        push: dict[int, tuple[list[int], list[np.ndarray]]] = {}
        slots_l: list[int] = []
        rows_l: list[int] = []
        num_real = 0
        for bi, members in enumerate(lo.prod_blocks):
            for off, key in enumerate(members.tolist()):
                if key == PAD:
                    continue
                out = int(prod_scratch[bi]) + off
                if key >= 0:
                    ch_slots = node_value_slot[nodes[key].children]
                    row = prod_row_of.get(key)
                    if row is None:
                        row = num_prod_rows
                        prod_row_of[key] = row
                        num_prod_rows += 1
                    do_push = key not in push_done
                    push_done.add(key)
                else:
                    ch_slots = node_value_slot[[_vkey_decode(key)]]
                    row = num_prod_rows
                    num_prod_rows += 1
                    do_push = True
                num_real += 1
                slots_l.append(out)
                rows_l.append(row)
                f = int(ch_slots.size)
                evals.setdefault(f, ([], []))[0].append(out)
                evals[f][1].append(ch_slots)
                if do_push:
                    push.setdefault(f, ([], []))[0].append(row)
                    push[f][1].append(ch_slots)

        prod_evals = [
            ProductEvalIR(
                out=np.array(outs, dtype=np.int64),
                children=np.stack(chs).astype(np.int64),
            )
            for f, (outs, chs) in sorted(evals.items())
        ]
        pushes = [
            FlowPushIR(
                rows=np.array(rows_, dtype=np.int64),
                children=np.stack(chs).astype(np.int64),
            )
            for f, (rows_, chs) in sorted(push.items())
        ]

        e_sum, e_key, e_slot = geom["edges"]
        e_child = np.where(e_key >= 0, e_key, _VKEY_BASE - e_key)
        report = LayerReport(
            depth=d,
            num_sums=len(geom["sids"]),
            num_prods=num_real,
            k_m=km,
            k_n=kn,
            demoted=lo.demoted,
            sum_pad_fraction=lo.sum_pad_fraction,
            prod_pad_fraction=lo.prod_pad_fraction,
            fwd_capacities=plan.capacities,
            fwd_overhead=plan.overhead,
            fwd_target=plan.target,
            fwd_ideal=int(nchs.sum()),
            bwd_capacities=bplan.capacities,
            bwd_overhead=bplan.overhead,
            bwd_target=bplan.target,
            bwd_ideal=int(npar.sum()),
        )
        layers.append(
            SumLayerIR(
                depth=d,
                k_m=km,
                k_n=kn,
                scratch_window=window,
                prod_evals=prod_evals,
                fwd_groups=fwd_groups,
                bwd_groups=bwd_groups,
                prod_slots=np.array(slots_l, dtype=np.int64),
                prod_rows=np.array(rows_l, dtype=np.int64),
                pushes=pushes,
                edge_sums=e_sum,
                edge_children=e_child,
                edge_slots=e_slot,
                report=report,
            )
        )

    # -- replicated flow accumulators for contended parameter tiles ------
    f_params_size = theta_size
    reductions: list[tuple[int, int, int]] = []
    for layer in layers:
        tilesz = layer.k_m * layer.k_n
        for gr in layer.fwd_groups:
            for c in range(gr.param_ids.shape[1]):
                seen: set[int] = set()
                for r in range(gr.param_ids.shape[0]):
                    t = int(gr.param_ids[r, c])
                    if t == 0:
                        continue
                    if tile_writers[t] > cfg.contention_threshold or t in seen:
                        gr.flow_ids[r, c] = f_params_size
                        reductions.append((f_params_size, t, tilesz))
                        f_params_size += tilesz
                    else:
                        seen.add(t)

    # -- simplex groups over physical parameter positions ----------------
    # A group is the multiset of positions one node normalizes over, so
    # two nodes whose tied slots land on the same positions in different
    # edge order share a single group.
    group_map: dict[bytes, int] = {}
    group_members: list[np.ndarray] = []
    for node in nodes:
        if isinstance(node, InputNode):
            phys = pmf_phys_of[node.id] + np.arange(node.num_categories, dtype=np.int64)
        elif isinstance(node, SumNode):
            phys = np.sort(slot_phys[node.slots])
        else:
            continue
        key = phys.tobytes()
        if key not in group_map:
            group_map[key] = len(group_members)
            group_members.append(phys)
    claim = np.full(theta_size, -1, dtype=np.int64)
    for gi, phys in enumerate(group_members):
        prev = claim[phys]
        if np.any((prev != -1) & (prev != gi)):
            raise CircuitValidationError(
                "normalization groups overlap after parameter tying; tie whole "
                "sum nodes (or whole pmfs), not parts of them"
            )
        claim[phys] = gi
    group_idx = (
        np.concatenate(group_members)
        if group_members
        else np.zeros(0, dtype=np.int64)
    )
    group_off = np.zeros(len(group_members) + 1, dtype=np.int64)
    np.cumsum([m.size for m in group_members], out=group_off[1:])

    # -- input evaluation chunks by category count -----------------------
    by_ncat: dict[int, list[int]] = {}
    for iid in input_ids:
        by_ncat.setdefault(nodes[iid].num_categories, []).append(iid)
    input_layer = []
    for ncat, ids in sorted(by_ncat.items()):
        arr = np.array(ids, dtype=np.int64)
        input_layer.append(
            InputLayerIR(
                node_ids=arr,
                slots=node_value_slot[arr],
                vars=np.array([nodes[i].var for i in ids], dtype=np.int64),
                param_ids=np.array([pmf_phys_of[i] for i in ids], dtype=np.int64),
                num_categories=ncat,
            )
        )

    # -- root access ------------------------------------------------------
    node_prod_row = np.full(g.num_nodes, -1, dtype=np.int64)
    for pid, row in prod_row_of.items():
        node_prod_row[pid] = row
    root_node = nodes[root]
    if isinstance(root_node, ProductNode):
        root_row = num_prod_rows
        num_prod_rows += 1
        node_prod_row[root] = root_row
        root_slot = -1
        root_children = node_value_slot[root_node.children]
    else:
        root_row = -1
        root_slot = int(node_value_slot[root])
        root_children = None

    return CompiledCircuit(
        graph_hash=graph_hash(g),
        config=cfg,
        num_vars=g.num_vars,
        num_nodes=g.num_nodes,
        var_categories=g.var_categories(),
        reserved=reserved,
        num_value_slots=num_value_slots,
        scratch_size=scratch_size,
        num_prod_rows=num_prod_rows,
        theta_size=theta_size,
        f_params_size=f_params_size,
        zero_len=zero_len,
        theta=theta,
        slot_phys=slot_phys,
        reductions=np.array(reductions, dtype=np.int64).reshape(-1, 3),
        tile_starts=np.array(sorted(tiles.values()), dtype=np.int64),
        tile_writers=np.array(
            [tile_writers[t] for t in sorted(tiles.values())], dtype=np.int64
        ),
        group_idx=group_idx,
        group_off=group_off,
        input_layer=input_layer,
        layers=layers,
        root_slot=root_slot,
        root_children=root_children,
        root_row=root_row,
        node_value_slot=node_value_slot,
        node_prod_row=node_prod_row,
    )


def graph_hash(g: CircuitGraph) -> str:
    """Structural hash of a circuit (nodes, parameters, root, tying)."""
    h = hashlib.sha256()
    h.update(b"pcirc-graph-1")
    h.update(np.array([g.num_vars, g.num_nodes, g.root], dtype=np.int64).tobytes())
    for node in g.nodes:
        if isinstance(node, InputNode):
            h.update(b"I")
            h.update(
                np.array(
                    [node.var, node.num_categories, node.slot], dtype=np.int64
                ).tobytes()
            )
        elif isinstance(node, ProductNode):
            h.update(b"P")
            h.update(node.children.astype(np.int64).tobytes())
        else:
            h.update(b"S")
            h.update(node.children.astype(np.int64).tobytes())
            h.update(node.slots.astype(np.int64).tobytes())
    h.update(g.params.tobytes())
    if g.tying:
        h.update(np.array(sorted(g.tying.items()), dtype=np.int64).tobytes())
    return h.hexdigest()
