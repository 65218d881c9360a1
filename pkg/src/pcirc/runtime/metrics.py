"""Likelihood summary metrics and their machine-readable stdout form."""

from __future__ import annotations

import math

import numpy as np

from ..errors import UsageError

__all__ = ["log_likelihood_metrics", "metric_line"]


def log_likelihood_metrics(l_root, num_dims: int | None = None,
                           num_tokens: int | None = None) -> dict[str, float]:
    """Summarize per-sample root log-likelihoods.

    Always reports ``nll`` (mean negative log-likelihood in nats).  With
    ``num_dims`` adds ``bpd`` (bits per dimension); with ``num_tokens``
    adds ``perplexity`` (exp of per-token nll).
    """
    arr = np.asarray(l_root, dtype=float)
    if arr.size == 0:
        raise UsageError("metrics require at least one sample")
    if not np.all(np.isfinite(arr)):
        raise UsageError("log-likelihoods must be finite; some samples have zero probability")
    nll = float(-arr.mean())
    out = {"nll": nll}
    if num_dims is not None:
        if num_dims <= 0:
            raise UsageError(f"num_dims must be positive, got {num_dims}")
        out["bpd"] = nll / (num_dims * math.log(2.0))
    if num_tokens is not None:
        if num_tokens <= 0:
            raise UsageError(f"num_tokens must be positive, got {num_tokens}")
        out["perplexity"] = math.exp(nll / num_tokens)
    return out


def metric_line(name: str, value: float) -> str:
    """Format one metric as ``metric=<name> value=<decimal>``."""
    return f"metric={name} value={value:.17g}"
