"""Binary cache for compiled circuits.

Versioned little-endian container: index tensors are stored as 32-bit
integers, parameters as 64-bit floats.  The writer is deterministic, so
compiling the same graph with the same config twice produces byte-identical
files; a cache is only accepted when its stored graph hash matches the
circuit it is loaded for.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, UsageError
from .build import CompileConfig
from .ir import (
    BackwardGroupIR,
    CompiledCircuit,
    FlowPushIR,
    ForwardGroupIR,
    InputLayerIR,
    LayerReport,
    ProductEvalIR,
    SumLayerIR,
)

MAGIC = b"PCCF"
VERSION = 1

_I32_MAX = 2**31 - 1


def _w_ints(f, *vals: int) -> None:
    f.write(struct.pack(f"<{len(vals)}q", *vals))


def _r_ints(f, n: int) -> tuple[int, ...]:
    raw = f.read(8 * n)
    if len(raw) != 8 * n:
        raise FormatError("compiled cache truncated")
    return struct.unpack(f"<{n}q", raw)


def _w_floats(f, *vals: float) -> None:
    f.write(struct.pack(f"<{len(vals)}d", *vals))


def _r_floats(f, n: int) -> tuple[float, ...]:
    raw = f.read(8 * n)
    if len(raw) != 8 * n:
        raise FormatError("compiled cache truncated")
    return struct.unpack(f"<{n}d", raw)


def _w_idx(f, arr: np.ndarray) -> None:
    """Write an integer index array as little-endian int32 with its shape."""
    arr = np.asarray(arr)
    if arr.size and (arr.min() < -_I32_MAX - 1 or arr.max() > _I32_MAX):
        raise UsageError("index array exceeds the 32-bit cache format")
    _w_ints(f, arr.ndim, *arr.shape)
    f.write(np.ascontiguousarray(arr, dtype="<i4").tobytes())


def _r_idx(f) -> np.ndarray:
    (ndim,) = _r_ints(f, 1)
    shape = _r_ints(f, ndim)
    count = int(np.prod(shape)) if ndim else 1
    raw = f.read(4 * count)
    if len(raw) != 4 * count:
        raise FormatError("compiled cache truncated")
    return np.frombuffer(raw, dtype="<i4").astype(np.int64).reshape(shape)


def _w_f64(f, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    _w_ints(f, arr.ndim, *arr.shape)
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _r_f64(f) -> np.ndarray:
    (ndim,) = _r_ints(f, 1)
    shape = _r_ints(f, ndim)
    count = int(np.prod(shape)) if ndim else 1
    raw = f.read(8 * count)
    if len(raw) != 8 * count:
        raise FormatError("compiled cache truncated")
    return np.frombuffer(raw, dtype="<f8").copy().reshape(shape)


def dumps_compiled(c: CompiledCircuit) -> bytes:
    f = io.BytesIO()
    f.write(MAGIC)
    _w_ints(f, VERSION)
    hash_bytes = c.graph_hash.encode("ascii")
    _w_ints(f, len(hash_bytes))
    f.write(hash_bytes)

    cfg = c.config
    _w_ints(
        f,
        cfg.block_size,
        -1 if cfg.sum_block_size is None else cfg.sum_block_size,
        -1 if cfg.prod_block_size is None else cfg.prod_block_size,
        cfg.max_groups,
        cfg.round_quantum,
        cfg.round_threshold,
        cfg.contention_threshold,
    )
    _w_floats(f, cfg.tolerance, cfg.demote_threshold)

    _w_ints(
        f,
        c.num_vars,
        c.num_nodes,
        c.reserved,
        c.num_value_slots,
        c.scratch_size,
        c.num_prod_rows,
        c.theta_size,
        c.f_params_size,
        c.zero_len,
        c.root_slot,
        c.root_row,
    )
    _w_f64(f, c.theta)
    _w_idx(f, c.var_categories)
    _w_idx(f, c.slot_phys)
    _w_idx(f, c.reductions)
    _w_idx(f, c.tile_starts)
    _w_idx(f, c.tile_writers)
    _w_idx(f, c.group_idx)
    _w_idx(f, c.group_off)
    _w_idx(f, c.node_value_slot)
    _w_idx(f, c.node_prod_row)
    if c.root_children is None:
        _w_ints(f, 0)
    else:
        _w_ints(f, 1)
        _w_idx(f, c.root_children)

    _w_ints(f, len(c.input_layer))
    for chunk in c.input_layer:
        _w_ints(f, chunk.num_categories)
        _w_idx(f, chunk.node_ids)
        _w_idx(f, chunk.slots)
        _w_idx(f, chunk.vars)
        _w_idx(f, chunk.param_ids)

    _w_ints(f, len(c.layers))
    for layer in c.layers:
        _w_ints(f, layer.depth, layer.k_m, layer.k_n, layer.scratch_window)
        _w_ints(f, len(layer.prod_evals))
        for ev in layer.prod_evals:
            _w_idx(f, ev.out)
            _w_idx(f, ev.children)
        _w_ints(f, len(layer.fwd_groups))
        for gr in layer.fwd_groups:
            _w_idx(f, gr.sum_ids)
            _w_idx(f, gr.prod_ids)
            _w_idx(f, gr.param_ids)
            _w_idx(f, gr.flow_ids)
        _w_ints(f, len(layer.bwd_groups))
        for gr in layer.bwd_groups:
            _w_idx(f, gr.ch_ids)
            _w_idx(f, gr.par_ids)
            _w_idx(f, gr.par_param_ids)
        _w_idx(f, layer.prod_slots)
        _w_idx(f, layer.prod_rows)
        _w_ints(f, len(layer.pushes))
        for push in layer.pushes:
            _w_idx(f, push.rows)
            _w_idx(f, push.children)
        _w_idx(f, layer.edge_sums)
        _w_idx(f, layer.edge_children)
        _w_idx(f, layer.edge_slots)
        r = layer.report
        _w_ints(
            f,
            r.num_sums,
            r.num_prods,
            int(r.demoted),
            r.fwd_overhead,
            r.fwd_target,
            r.fwd_ideal,
            r.bwd_overhead,
            r.bwd_target,
            r.bwd_ideal,
        )
        _w_floats(f, r.sum_pad_fraction, r.prod_pad_fraction)
        _w_idx(f, np.array(r.fwd_capacities, dtype=np.int64))
        _w_idx(f, np.array(r.bwd_capacities, dtype=np.int64))
    return f.getvalue()


def loads_compiled(data: bytes) -> CompiledCircuit:
    f = io.BytesIO(data)
    if f.read(4) != MAGIC:
        raise FormatError("not a compiled-circuit cache (bad magic)")
    (version,) = _r_ints(f, 1)
    if version != VERSION:
        raise FormatError(f"unsupported cache version {version}")
    (hlen,) = _r_ints(f, 1)
    graph_hash = f.read(hlen).decode("ascii")

    (bs, sbs, pbs, groups, quantum, threshold, contention) = _r_ints(f, 7)
    tol, demote = _r_floats(f, 2)
    cfg = CompileConfig(
        block_size=bs,
        sum_block_size=None if sbs < 0 else sbs,
        prod_block_size=None if pbs < 0 else pbs,
        max_groups=groups,
        tolerance=tol,
        round_quantum=quantum,
        round_threshold=threshold,
        contention_threshold=contention,
        demote_threshold=demote,
    )

    (
        num_vars,
        num_nodes,
        reserved,
        num_value_slots,
        scratch_size,
        num_prod_rows,
        theta_size,
        f_params_size,
        zero_len,
        root_slot,
        root_row,
    ) = _r_ints(f, 11)
    theta = _r_f64(f)
    var_categories = _r_idx(f)
    slot_phys = _r_idx(f)
    reductions = _r_idx(f).reshape(-1, 3)
    tile_starts = _r_idx(f)
    tile_writers = _r_idx(f)
    group_idx = _r_idx(f)
    group_off = _r_idx(f)
    node_value_slot = _r_idx(f)
    node_prod_row = _r_idx(f)
    (has_rc,) = _r_ints(f, 1)
    root_children = _r_idx(f) if has_rc else None

    (n_chunks,) = _r_ints(f, 1)
    input_layer = []
    for _ in range(n_chunks):
        (ncat,) = _r_ints(f, 1)
        input_layer.append(
            InputLayerIR(
                node_ids=_r_idx(f),
                slots=_r_idx(f),
                vars=_r_idx(f),
                param_ids=_r_idx(f),
                num_categories=ncat,
            )
        )

    (n_layers,) = _r_ints(f, 1)
    layers = []
    for _ in range(n_layers):
        depth, k_m, k_n, window = _r_ints(f, 4)
        (n_ev,) = _r_ints(f, 1)
        prod_evals = [
            ProductEvalIR(out=_r_idx(f), children=_r_idx(f)) for _ in range(n_ev)
        ]
        (n_fwd,) = _r_ints(f, 1)
        fwd_groups = [
            ForwardGroupIR(
                sum_ids=_r_idx(f),
                prod_ids=_r_idx(f),
                param_ids=_r_idx(f),
                flow_ids=_r_idx(f),
            )
            for _ in range(n_fwd)
        ]
        (n_bwd,) = _r_ints(f, 1)
        bwd_groups = [
            BackwardGroupIR(
                ch_ids=_r_idx(f), par_ids=_r_idx(f), par_param_ids=_r_idx(f)
            )
            for _ in range(n_bwd)
        ]
        prod_slots = _r_idx(f)
        prod_rows = _r_idx(f)
        (n_push,) = _r_ints(f, 1)
        pushes = [
            FlowPushIR(rows=_r_idx(f), children=_r_idx(f)) for _ in range(n_push)
        ]
        edge_sums = _r_idx(f)
        edge_children = _r_idx(f)
        edge_slots = _r_idx(f)
        (
            num_sums,
            num_prods,
            demoted,
            fwd_overhead,
            fwd_target,
            fwd_ideal,
            bwd_overhead,
            bwd_target,
            bwd_ideal,
        ) = _r_ints(f, 9)
        sum_pad, prod_pad = _r_floats(f, 2)
        fwd_caps = tuple(int(x) for x in _r_idx(f))
        bwd_caps = tuple(int(x) for x in _r_idx(f))
        report = LayerReport(
            depth=depth,
            num_sums=num_sums,
            num_prods=num_prods,
            k_m=k_m,
            k_n=k_n,
            demoted=bool(demoted),
            sum_pad_fraction=sum_pad,
            prod_pad_fraction=prod_pad,
            fwd_capacities=fwd_caps,
            fwd_overhead=fwd_overhead,
            fwd_target=fwd_target,
            fwd_ideal=fwd_ideal,
            bwd_capacities=bwd_caps,
            bwd_overhead=bwd_overhead,
            bwd_target=bwd_target,
            bwd_ideal=bwd_ideal,
        )
        layers.append(
            SumLayerIR(
                depth=depth,
                k_m=k_m,
                k_n=k_n,
                scratch_window=window,
                prod_evals=prod_evals,
                fwd_groups=fwd_groups,
                bwd_groups=bwd_groups,
                prod_slots=prod_slots,
                prod_rows=prod_rows,
                pushes=pushes,
                edge_sums=edge_sums,
                edge_children=edge_children,
                edge_slots=edge_slots,
                report=report,
            )
        )
    if f.read(1):
        raise FormatError("trailing bytes after compiled cache payload")

    return CompiledCircuit(
        graph_hash=graph_hash,
        config=cfg,
        num_vars=num_vars,
        num_nodes=num_nodes,
        var_categories=var_categories,
        reserved=reserved,
        num_value_slots=num_value_slots,
        scratch_size=scratch_size,
        num_prod_rows=num_prod_rows,
        theta_size=theta_size,
        f_params_size=f_params_size,
        zero_len=zero_len,
        theta=theta,
        slot_phys=slot_phys,
        reductions=reductions,
        tile_starts=tile_starts,
        tile_writers=tile_writers,
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


def save_compiled(c: CompiledCircuit, path: str | Path) -> None:
    Path(path).write_bytes(dumps_compiled(c))


def load_compiled(path: str | Path, expect_hash: str | None = None) -> CompiledCircuit:
    p = Path(path)
    if not p.exists():
        raise FormatError(f"compiled cache not found: {p}")
    c = loads_compiled(p.read_bytes())
    if expect_hash is not None and c.graph_hash != expect_hash:
        raise FormatError(
            "compiled cache does not match the circuit "
            f"(cache {c.graph_hash[:12]}, circuit {expect_hash[:12]})"
        )
    return c
