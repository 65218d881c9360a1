from .buffers import EvalBuffers, allocate_buffers
from .em import (
    EMAccumulator,
    apply_theta,
    em_accumulate,
    em_step_full,
    em_step_mini,
    write_back_params,
)
from .engine import MISSING, backward, forward
from .metrics import log_likelihood_metrics, metric_line

__all__ = [
    "EvalBuffers",
    "EMAccumulator",
    "MISSING",
    "allocate_buffers",
    "apply_theta",
    "backward",
    "em_accumulate",
    "em_step_full",
    "em_step_mini",
    "forward",
    "log_likelihood_metrics",
    "metric_line",
    "write_back_params",
]
