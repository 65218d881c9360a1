"""Numerically stable batched evaluation and differentiation.

The forward pass works entirely in log space.  Sum blocks are reduced
with a streaming log-sum-exp: each child block tile is rescaled by its
per-sample maximum and multiplied through the weight tile in linear
space, and a running pair (max, linear sum) absorbs the partial product
by rescaling whichever side is smaller.  A single log at the very end
turns the pair back into a log value, so a normalized circuit with
every variable marginalized evaluates to exactly zero.  Samples for
which a tile is entirely impossible (max of -inf) leave the running
pair untouched.

The backward pass recomputes each layer's product values into scratch,
then derives parameter flows and child flows from the identity

    flow(edge s -> c) = theta * exp(value(c) - value(s)) * flow(s)

again with per-sample rescaling so that ratios of tiny probabilities
stay exact.  Flows of fully impossible nodes are defined as zero.
"""

from __future__ import annotations

import numpy as np

from ..errors import FormatError, NumericError, UsageError
from .buffers import EvalBuffers, allocate_buffers

__all__ = ["MISSING", "forward", "backward"]

MISSING = -1

_NEG_INF = -np.inf


def _validate_batch(compiled, batch) -> np.ndarray:
    data = np.asarray(batch, dtype=np.int64)
    if data.ndim == 1:
        data = data[None, :]
    if data.ndim != 2 or data.shape[1] != compiled.num_vars:
        raise FormatError(
            f"batch must have shape (n, {compiled.num_vars}), got {data.shape}"
        )
    if data.size and data.min() < MISSING:
        raise FormatError("category values must be >= 0, or -1 for missing")
    cats = compiled.var_categories[None, :]
    if data.size and np.any(data >= cats):
        var = int(np.argwhere(data >= cats)[0, 1])
        raise FormatError(
            f"variable {var} has values outside [0, {compiled.var_categories[var]})"
        )
    return data


def _eval_inputs(compiled, values: np.ndarray, batch: np.ndarray, theta: np.ndarray):
    for chunk in compiled.input_layer:
        n = chunk.node_ids.size
        ncat = chunk.num_categories
        pm = theta[chunk.param_ids[:, None] + np.arange(ncat)]
        with np.errstate(divide="ignore"):
            logp = np.log(pm)
        x = batch[:, chunk.vars]
        obs = x >= 0
        picked = logp[np.arange(n)[:, None], np.where(obs, x, 0).T]
        values[chunk.slots] = np.where(obs.T, picked, 0.0)


def _eval_products(layer, values: np.ndarray, scratch: np.ndarray):
    scratch[:layer.scratch_window] = _NEG_INF
    for ev in layer.prod_evals:
        scratch[ev.out] = values[ev.children].sum(axis=1)


def _forward_group(gr, k_m: int, k_n: int, values, scratch, theta, batch_tile: int):
    rows = gr.sum_ids.size
    cap = gr.prod_ids.shape[1]
    bsz = scratch.shape[1]
    moff = np.arange(k_m)
    soff = np.arange(k_n)
    toff = np.arange(k_m * k_n)
    out_rows = gr.sum_ids[:, None] + moff
    for bs in range(0, bsz, batch_tile):
        sc = scratch[:, bs:bs + batch_tile]
        width = sc.shape[1]
        lin = np.zeros((rows, k_m, width))
        top = np.full((rows, 1, width), _NEG_INF)
        for c in range(cap):
            child = sc[gr.prod_ids[:, c, None] + soff]
            cmax = child.max(axis=1, keepdims=True)
            tiles = theta[gr.param_ids[:, c, None] + toff].reshape(rows, k_m, k_n)
            with np.errstate(invalid="ignore", over="ignore"):
                part = tiles @ np.exp(child - cmax)
                merged = np.where(
                    cmax > top,
                    lin * np.exp(top - cmax) + part,
                    lin + part * np.exp(cmax - top),
                )
            dead = np.isneginf(cmax)
            lin = np.where(dead, lin, merged)
            top = np.where(dead, top, np.maximum(top, cmax))
        with np.errstate(divide="ignore"):
            values[:, bs:bs + batch_tile][out_rows] = np.log(lin) + top


def _param_flow_group(gr, k_m: int, k_n: int, values, flows, scratch, theta, f_params):
    rows = gr.sum_ids.size
    cap = gr.prod_ids.shape[1]
    moff = np.arange(k_m)
    soff = np.arange(k_n)
    toff = np.arange(k_m * k_n)
    srows = gr.sum_ids[:, None] + moff
    fs = flows[srows]
    ls = values[srows]
    with np.errstate(divide="ignore", invalid="ignore"):
        log_nf = np.where(np.isneginf(ls), _NEG_INF, np.log(fs) - ls)
        nmax = log_nf.max(axis=1, keepdims=True)
        scaled = np.where(np.isneginf(nmax), 0.0, np.exp(log_nf - nmax))
    for c in range(cap):
        child = scratch[gr.prod_ids[:, c, None] + soff]
        with np.errstate(over="ignore"):
            emars = np.exp(child + nmax)
        acc = scaled @ emars.transpose(0, 2, 1)
        tiles = theta[gr.param_ids[:, c, None] + toff].reshape(rows, k_m, k_n)
        # Flow targets are unique within a column by construction (contended
        # tiles get replica ranges), so a plain fancy add is sufficient.
        f_params[(gr.flow_ids[:, c, None] + toff).ravel()] += (tiles * acc).ravel()


def _child_flow_group(gr, k_m: int, k_n: int, values, flows, scratch, flow_scratch,
                      theta, batch_tile: int):
    rows = gr.ch_ids.size
    cap = gr.par_ids.shape[1]
    bsz = values.shape[1]
    moff = np.arange(k_m)
    soff = np.arange(k_n)
    toff = np.arange(k_m * k_n)
    crows = gr.ch_ids[:, None] + soff
    for bs in range(0, bsz, batch_tile):
        val = values[:, bs:bs + batch_tile]
        flo = flows[:, bs:bs + batch_tile]
        width = val.shape[1]
        lin = np.zeros((rows, k_n, width))
        top = np.full((rows, 1, width), _NEG_INF)
        for p in range(cap):
            prow = gr.par_ids[:, p, None] + moff
            fs = flo[prow]
            ls = val[prow]
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                log_nf = np.where(np.isneginf(ls), _NEG_INF, np.log(fs) - ls)
                nmax = log_nf.max(axis=1, keepdims=True)
                scaled = np.where(np.isneginf(nmax), 0.0, np.exp(log_nf - nmax))
                tiles = theta[gr.par_param_ids[:, p, None] + toff]
                trans = tiles.reshape(rows, k_m, k_n).transpose(0, 2, 1)
                part = trans @ scaled
                merged = np.where(
                    nmax > top,
                    lin * np.exp(top - nmax) + part,
                    lin + part * np.exp(nmax - top),
                )
            dead = np.isneginf(nmax)
            lin = np.where(dead, lin, merged)
            top = np.where(dead, top, np.maximum(top, nmax))
        sc = scratch[:, bs:bs + batch_tile]
        with np.errstate(over="ignore"):
            flow_scratch[:, bs:bs + batch_tile][crows] = lin * np.exp(top + sc[crows])


def _input_param_flows(compiled, flows, batch, theta, f_params):
    for chunk in compiled.input_layer:
        n = chunk.node_ids.size
        ncat = chunk.num_categories
        fl = flows[chunk.slots]
        x = batch[:, chunk.vars].T
        obs = x >= 0
        hit = chunk.param_ids[:, None] + np.where(obs, x, 0)
        w = np.where(obs, fl, 0.0)
        f_params += np.bincount(hit.ravel(), weights=w.ravel(), minlength=f_params.size)
        missing_total = np.where(obs, 0.0, fl).sum(axis=1)
        if np.any(missing_total):
            rng = chunk.param_ids[:, None] + np.arange(ncat)
            spread = missing_total[:, None] * theta[rng]
            f_params += np.bincount(rng.ravel(), weights=spread.ravel(),
                                    minlength=f_params.size)


def forward(compiled, batch, *, batch_tile: int = 64,
            bufs: EvalBuffers | None = None) -> tuple[np.ndarray, EvalBuffers]:
    """Evaluate per-sample root log-probabilities.

    ``batch`` holds one row per sample with integer categories, -1 for a
    missing value; missing variables are marginalized out.  Returns the
    root log-probability vector and the populated buffers, ready for a
    backward pass.
    """
    data = _validate_batch(compiled, batch)
    theta = compiled.theta
    if not np.all(np.isfinite(theta)):
        raise NumericError("parameter table contains non-finite values")
    if bufs is None or bufs.batch_size != data.shape[0]:
        bufs = allocate_buffers(compiled, data.shape[0])
    bufs.batch = data
    tile = max(1, min(int(batch_tile), data.shape[0])) if data.shape[0] else 1
    values = bufs.values
    values.fill(_NEG_INF)
    _eval_inputs(compiled, values, data, theta)
    for layer in compiled.layers:
        _eval_products(layer, values, bufs.scratch)
        for gr in layer.fwd_groups:
            _forward_group(gr, layer.k_m, layer.k_n, values, bufs.scratch, theta, tile)
    if compiled.root_slot >= 0:
        lroot = values[compiled.root_slot].copy()
    else:
        lroot = values[compiled.root_children].sum(axis=0)
    bufs.lroot = lroot
    bufs.forward_done = True
    bufs.backward_done = False
    return lroot, bufs


def backward(compiled, bufs: EvalBuffers, *, batch_tile: int = 64) -> EvalBuffers:
    """Accumulate node and parameter flows for the last forward batch.

    The root carries flow 1 per sample.  On return ``bufs.flows`` holds
    input and sum-node flows, ``bufs.prod_flows`` product-node flows and
    ``bufs.f_params`` expected counts aligned with the parameter table.
    """
    if not bufs.forward_done:
        raise UsageError("backward requires a completed forward pass")
    theta = compiled.theta
    values = bufs.values
    flows = bufs.flows
    flows.fill(0.0)
    bufs.prod_flows.fill(0.0)
    bufs.f_params.fill(0.0)
    tile = max(1, min(int(batch_tile), values.shape[1])) if values.shape[1] else 1
    if compiled.root_slot >= 0:
        flows[compiled.root_slot] = 1.0
    else:
        bufs.prod_flows[compiled.root_row] = 1.0
        np.add.at(flows, compiled.root_children, 1.0)
    for layer in reversed(compiled.layers):
        _eval_products(layer, values, bufs.scratch)
        for gr in layer.fwd_groups:
            _param_flow_group(gr, layer.k_m, layer.k_n, values, flows,
                              bufs.scratch, theta, bufs.f_params)
        for gr in layer.bwd_groups:
            _child_flow_group(gr, layer.k_m, layer.k_n, values, flows,
                              bufs.scratch, bufs.flow_scratch, theta, tile)
        if layer.prod_rows.size:
            bufs.prod_flows[layer.prod_rows] += bufs.flow_scratch[layer.prod_slots]
        for push in layer.pushes:
            rows = bufs.prod_flows[push.rows]
            for c in range(push.children.shape[1]):
                np.add.at(flows, push.children[:, c], rows)
    _input_param_flows(compiled, flows, bufs.batch, theta, bufs.f_params)
    for src, dst, length in compiled.reductions:
        bufs.f_params[dst:dst + length] += bufs.f_params[src:src + length]
    bufs.backward_done = True
    return bufs
