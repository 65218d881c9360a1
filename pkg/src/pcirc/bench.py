"""Wall-clock measurement of compiled execution.

Two entry points: a model sweep that compiles one circuit at several
block sizes and times full passes, and a synthetic single-layer kernel
benchmark that measures just the sum-layer kernels on a freshly built
dense or block-sparse layer.  All timings are mean and standard
deviation over a requested number of runs.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass, field

import numpy as np

from .compiler import CompileConfig, compile_circuit, partition_layer
from .compiler.ir import BackwardGroupIR, ForwardGroupIR
from .errors import UsageError
from .runtime import backward, forward
from .runtime.engine import (
    _child_flow_group,
    _eval_products,
    _forward_group,
    _param_flow_group,
)

__all__ = [
    "BenchReport",
    "KernelBenchResult",
    "bench_model",
    "kernel_bench",
    "synthetic_sum_layer",
]

_COLUMNS = [
    "section",
    "name",
    "block_size",
    "forward_ms",
    "forward_sd_ms",
    "backward_ms",
    "backward_sd_ms",
    "epoch_ms",
    "speedup",
    "padding_fraction",
]


@dataclass
class BenchRow:
    section: str
    name: str
    block_size: int | None = None
    forward_ms: float | None = None
    forward_sd_ms: float | None = None
    backward_ms: float | None = None
    backward_sd_ms: float | None = None
    epoch_ms: float | None = None
    speedup: float | None = None
    padding_fraction: float | None = None


@dataclass
class BenchReport:
    batch_size: int
    repeats: int
    rows: list[BenchRow] = field(default_factory=list)

    def to_tsv(self) -> str:
        out = io.StringIO()
        out.write(f"# batch_size={self.batch_size} repeats={self.repeats}\n")
        out.write("\t".join(_COLUMNS) + "\n")
        for row in self.rows:
            cells = []
            for col in _COLUMNS:
                v = getattr(row, col)
                if v is None:
                    cells.append("")
                elif isinstance(v, float):
                    cells.append(f"{v:.4f}")
                else:
                    cells.append(str(v))
            out.write("\t".join(cells) + "\n")
        return out.getvalue()


def _timed(fn, repeats: int) -> tuple[float, float]:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    arr = np.asarray(times)
    return float(arr.mean()), float(arr.std())


def bench_model(g, *, batch_size: int = 128, block_sizes=(1, 2, 4, 8, 16, 32, 64),
                repeats: int = 5, seed: int = 0) -> BenchReport:
    """Time full forward and backward passes at each block size.

    Block sizes larger than a layer allows are clipped by compilation,
    so requesting 64 on a small model measures its largest legal size.
    """
    if repeats < 1:
        raise UsageError(f"repeats must be >= 1, got {repeats}")
    if batch_size < 1:
        raise UsageError(f"batch size must be >= 1, got {batch_size}")
    rng = np.random.default_rng(seed)
    cats = np.maximum(g.var_categories(), 1)
    batch = rng.integers(0, cats[None, :], size=(batch_size, g.num_vars)).astype(np.int64)
    report = BenchReport(batch_size=batch_size, repeats=repeats)
    base_total = None
    last_compiled = None
    for k in block_sizes:
        compiled = compile_circuit(g, CompileConfig(block_size=int(k)))
        _, bufs = forward(compiled, batch)

        def fwd():
            forward(compiled, batch, bufs=bufs)

        def bwd():
            backward(compiled, bufs)

        fm, fs = _timed(fwd, repeats)
        bm, bs = _timed(bwd, repeats)
        total = fm + bm
        if base_total is None:
            base_total = total
        report.rows.append(
            BenchRow(
                section="sweep",
                name=f"K={k}",
                block_size=int(k),
                forward_ms=fm * 1e3,
                forward_sd_ms=fs * 1e3,
                backward_ms=bm * 1e3,
                backward_sd_ms=bs * 1e3,
                speedup=base_total / total,
            )
        )
        last_compiled = compiled
    _per_layer_rows(report, last_compiled, batch, repeats)
    _epoch_row(report, last_compiled, batch, repeats)
    return report


def _per_layer_rows(report: BenchReport, compiled, batch, repeats: int):
    _, bufs = forward(compiled, batch)
    backward(compiled, bufs)
    theta = compiled.theta
    for layer in compiled.layers:

        def fwd_layer():
            _eval_products(layer, bufs.values, bufs.scratch)
            for gr in layer.fwd_groups:
                _forward_group(gr, layer.k_m, layer.k_n, bufs.values, bufs.scratch,
                               theta, 64)

        def bwd_layer():
            _eval_products(layer, bufs.values, bufs.scratch)
            for gr in layer.fwd_groups:
                _param_flow_group(gr, layer.k_m, layer.k_n, bufs.values, bufs.flows,
                                  bufs.scratch, theta, bufs.f_params)
            for gr in layer.bwd_groups:
                _child_flow_group(gr, layer.k_m, layer.k_n, bufs.values, bufs.flows,
                                  bufs.scratch, bufs.flow_scratch, theta, 64)

        fm, _ = _timed(fwd_layer, repeats)
        bm, _ = _timed(bwd_layer, repeats)
        pad = layer.report.fwd_padding_fraction
        report.rows.append(
            BenchRow(
                section="layer",
                name=f"depth={layer.depth}",
                block_size=layer.k_m,
                forward_ms=fm * 1e3,
                backward_ms=bm * 1e3,
                padding_fraction=pad,
            )
        )


def _epoch_row(report: BenchReport, compiled, batch, repeats: int):
    from .runtime import EMAccumulator, apply_theta, em_accumulate, em_step_full

    def epoch():
        lroot, bufs = forward(compiled, batch)
        backward(compiled, bufs)
        acc = EMAccumulator.for_circuit(compiled)
        em_accumulate(acc, bufs)
        apply_theta(compiled, em_step_full(compiled, acc, pseudocount=1e-6))

    em_ms, _ = _timed(epoch, repeats)
    report.rows.append(
        BenchRow(section="epoch", name="full_em", block_size=compiled.config.block_size,
                 epoch_ms=em_ms * 1e3)
    )


@dataclass
class SyntheticLayer:
    """A hand-built sum layer over one product layer, ready to execute."""

    k: int
    fwd_groups: list[ForwardGroupIR]
    bwd_groups: list[BackwardGroupIR]
    theta: np.ndarray
    f_params: np.ndarray
    values: np.ndarray
    scratch: np.ndarray
    flows: np.ndarray
    flow_scratch: np.ndarray
    num_pairs: int


def synthetic_sum_layer(num_nodes: int, k: int, batch: int, *, density: float = 1.0,
                        seed: int = 0) -> SyntheticLayer:
    """Build one sum layer of ``num_nodes`` sums over ``num_nodes`` products.

    ``density`` keeps each (sum block, product block) pair with that
    probability; every sum block keeps at least one pair so all rows
    stay connected.  Values, flows, and tiles are random but consistent
    (sum values are produced by actually running the forward kernel).
    """
    if num_nodes % k != 0:
        raise UsageError("num_nodes must be a multiple of the block size")
    rng = np.random.default_rng(seed)
    nb = num_nodes // k
    tile = k * k
    keep = rng.random((nb, nb)) < density
    keep[np.arange(nb), rng.integers(0, nb, size=nb)] = True
    pair_sum, pair_prod = np.nonzero(keep)
    num_pairs = pair_sum.size

    # theta: zero tile at 0, one tile per kept pair, row-normalized per sum row
    theta = np.zeros(tile + num_pairs * tile)
    raw = rng.random((num_pairs, k, k)) + 1e-3
    row_tot = np.zeros((nb, k))
    np.add.at(row_tot, pair_sum, raw.sum(axis=2))
    raw /= row_tot[pair_sum][:, :, None]
    theta[tile:] = raw.ravel()
    pair_param = tile + np.arange(num_pairs) * tile

    # buffers: one leading pad block in each address space
    scratch_rows = (nb + 1) * k
    value_rows = (nb + 1) * k
    scratch = np.full((scratch_rows, batch), -np.inf)
    scratch[k:] = -np.abs(rng.normal(2.0, 1.0, size=(nb * k, batch)))
    values = np.full((value_rows, batch), -np.inf)
    flows = np.zeros((value_rows, batch))
    flows[k:] = rng.random((nb * k, batch))
    flow_scratch = np.zeros((scratch_rows, batch))
    f_params = np.zeros(theta.size)

    counts = np.bincount(pair_sum, minlength=nb)
    plan = partition_layer(counts, 8, 0.25)
    order = np.argsort(pair_sum, kind="stable")
    ps, pp, ppar = pair_sum[order], pair_prod[order], pair_param[order]
    starts = np.concatenate([[0], np.cumsum(counts)])
    fwd_groups = []
    for gi, cap in enumerate(plan.capacities):
        members = np.flatnonzero(plan.assignment == gi)
        rows = members.size
        prod_ids = np.zeros((rows, cap), dtype=np.int64)
        param_ids = np.zeros((rows, cap), dtype=np.int64)
        for ri, blk in enumerate(members):
            a, b = starts[blk], starts[blk + 1]
            prod_ids[ri, : b - a] = (pp[a:b] + 1) * k
            param_ids[ri, : b - a] = ppar[a:b]
        fwd_groups.append(
            ForwardGroupIR(
                sum_ids=(members + 1) * k,
                prod_ids=prod_ids,
                param_ids=param_ids,
                flow_ids=param_ids.copy(),
            )
        )

    pcounts = np.bincount(pair_prod, minlength=nb)
    pplan = partition_layer(pcounts, 8, 0.25)
    porder = np.argsort(pair_prod, kind="stable")
    bps, bpp, bppar = pair_sum[porder], pair_prod[porder], pair_param[porder]
    pstarts = np.concatenate([[0], np.cumsum(pcounts)])
    bwd_groups = []
    for gi, cap in enumerate(pplan.capacities):
        members = np.flatnonzero(pplan.assignment == gi)
        rows = members.size
        par_ids = np.zeros((rows, cap), dtype=np.int64)
        par_param_ids = np.zeros((rows, cap), dtype=np.int64)
        for ri, blk in enumerate(members):
            a, b = pstarts[blk], pstarts[blk + 1]
            par_ids[ri, : b - a] = (bps[a:b] + 1) * k
            par_param_ids[ri, : b - a] = bppar[a:b]
        bwd_groups.append(
            BackwardGroupIR(
                ch_ids=(members + 1) * k,
                par_ids=par_ids,
                par_param_ids=par_param_ids,
            )
        )

    layer = SyntheticLayer(
        k=k,
        fwd_groups=fwd_groups,
        bwd_groups=bwd_groups,
        theta=theta,
        f_params=f_params,
        values=values,
        scratch=scratch,
        flows=flows,
        flow_scratch=flow_scratch,
        num_pairs=num_pairs,
    )
    _run_forward(layer)  # makes sum values consistent with scratch and theta
    return layer


def _run_forward(layer: SyntheticLayer):
    for gr in layer.fwd_groups:
        _forward_group(gr, layer.k, layer.k, layer.values, layer.scratch,
                       layer.theta, 64)


def _run_backward(layer: SyntheticLayer):
    for gr in layer.fwd_groups:
        _param_flow_group(gr, layer.k, layer.k, layer.values, layer.flows,
                          layer.scratch, layer.theta, layer.f_params)
    for gr in layer.bwd_groups:
        _child_flow_group(gr, layer.k, layer.k, layer.values, layer.flows,
                          layer.scratch, layer.flow_scratch, layer.theta, 64)


@dataclass
class KernelBenchResult:
    block_size: int
    density: float
    forward_s: float
    forward_sd: float
    backward_s: float
    backward_sd: float

    @property
    def total_s(self) -> float:
        return self.forward_s + self.backward_s


def kernel_bench(num_nodes: int, k: int, batch: int, *, density: float = 1.0,
                 repeats: int = 5, seed: int = 0) -> KernelBenchResult:
    """Time the sum-layer kernels on one synthetic layer."""
    layer = synthetic_sum_layer(num_nodes, k, batch, density=density, seed=seed)
    _run_forward(layer)
    _run_backward(layer)
    fm, fs = _timed(lambda: _run_forward(layer), repeats)
    bm, bs = _timed(lambda: _run_backward(layer), repeats)
    return KernelBenchResult(
        block_size=k,
        density=density,
        forward_s=fm,
        forward_sd=fs,
        backward_s=bm,
        backward_sd=bs,
    )
