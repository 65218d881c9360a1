"""Expectation-maximization updates from accumulated parameter flows.

A full-batch step renormalizes each simplex group of the flat parameter
table to the accumulated expected counts plus an optional pseudocount.
Mini-batch training blends the renormalized estimate into the current
parameters with a step size, which keeps every intermediate table on
the simplex.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericError, UsageError

__all__ = [
    "EMAccumulator",
    "apply_theta",
    "em_accumulate",
    "em_step_full",
    "em_step_mini",
    "write_back_params",
]


@dataclass
class EMAccumulator:
    """Running sum of parameter flows across batches."""

    f_params: np.ndarray
    batches: int = 0
    samples: int = 0
    log_likelihood: float = 0.0

    @classmethod
    def for_circuit(cls, compiled) -> "EMAccumulator":
        return cls(f_params=np.zeros(compiled.f_params_size))

    def reset(self):
        self.f_params.fill(0.0)
        self.batches = 0
        self.samples = 0
        self.log_likelihood = 0.0


def em_accumulate(acc: EMAccumulator, bufs) -> EMAccumulator:
    if not bufs.backward_done:
        raise UsageError("accumulate requires a completed backward pass")
    acc.f_params += bufs.f_params
    acc.batches += 1
    acc.samples += bufs.batch_size
    acc.log_likelihood += float(bufs.lroot.sum())
    return acc


def em_step_full(compiled, acc: EMAccumulator, *, pseudocount: float = 0.0) -> np.ndarray:
    """Return a renormalized parameter table from accumulated flows.

    A group whose flows sum to zero carries no information for this
    step and keeps its current parameters; if every group is zero the
    step as a whole failed (typically: all samples had probability 0).
    """
    if pseudocount < 0:
        raise UsageError(f"pseudocount must be >= 0, got {pseudocount}")
    counts = acc.f_params[:compiled.theta_size][compiled.group_idx] + pseudocount
    off = compiled.group_off
    totals = np.add.reduceat(counts, off[:-1])
    informative = totals > 0.0
    if off.size > 1 and not informative.any():
        raise NumericError(
            "every normalization group accumulated zero flow; "
            "use a positive pseudocount or check the data"
        )
    sizes = np.diff(off)
    keep = np.repeat(informative, sizes)
    denom = np.repeat(totals, sizes)
    new_theta = compiled.theta.copy()
    new_theta[compiled.group_idx[keep]] = counts[keep] / denom[keep]
    return new_theta


def em_step_mini(theta: np.ndarray, theta_new: np.ndarray, step_size: float) -> np.ndarray:
    """Blend a renormalized estimate into the current table."""
    if not 0.0 < step_size <= 1.0:
        raise UsageError(f"step size must be in (0, 1], got {step_size}")
    return (1.0 - step_size) * theta + step_size * theta_new


def apply_theta(compiled, new_theta: np.ndarray):
    if new_theta.shape != compiled.theta.shape:
        raise UsageError("parameter table shape mismatch")
    compiled.theta[:] = new_theta


def write_back_params(compiled, graph):
    """Copy trained physical parameters back onto the logical graph slots."""
    slots = np.flatnonzero(compiled.slot_phys >= 0)
    graph.set_param_values(slots, compiled.theta[compiled.slot_phys[slots]])
