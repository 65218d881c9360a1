"""Reusable batch buffers for circuit evaluation.

All per-sample state lives in a handful of dense arrays shaped
``(rows, batch)`` so that a forward pass followed by a backward pass
never allocates anything proportional to the circuit size.  Buffers can
be reused across batches of the same width.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["EvalBuffers", "allocate_buffers"]


@dataclass
class EvalBuffers:
    """Workspace arrays for one batch of samples.

    values      log-probabilities for inputs and sum blocks, (slots, B).
    scratch     per-layer product log-probabilities, (scratch_size, B).
    flows       node flows for inputs and sum blocks, (slots, B).
    flow_scratch  per-layer product flows before accumulation, (scratch_size, B).
    prod_flows  accumulated product-node flows, (rows, B).
    f_params    parameter flow accumulator, flat like the parameter table.
    """

    batch: np.ndarray
    values: np.ndarray
    scratch: np.ndarray
    flows: np.ndarray
    flow_scratch: np.ndarray
    prod_flows: np.ndarray
    f_params: np.ndarray
    lroot: np.ndarray = field(default_factory=lambda: np.zeros(0))
    forward_done: bool = False
    backward_done: bool = False

    @property
    def batch_size(self) -> int:
        return self.values.shape[1]


def allocate_buffers(compiled, batch_size: int) -> EvalBuffers:
    """Allocate a zeroed workspace for ``batch_size`` samples."""
    b = int(batch_size)
    return EvalBuffers(
        batch=np.zeros((b, compiled.num_vars), dtype=np.int64),
        values=np.zeros((compiled.num_value_slots, b)),
        scratch=np.zeros((compiled.scratch_size, b)),
        flows=np.zeros((compiled.num_value_slots, b)),
        flow_scratch=np.zeros((compiled.scratch_size, b)),
        prod_flows=np.zeros((compiled.num_prod_rows, b)),
        f_params=np.zeros(compiled.f_params_size),
    )
