"""EM training loops over a compiled circuit.

The loop is the single coordinator: it slices the dataset into batches,
fans batch chunks out to a thread pool, and merges the per-worker flow
accumulators in a fixed order so results do not depend on scheduling.
Full-batch mode renormalizes from flows accumulated over the whole
epoch; mini-batch mode renormalizes per batch and blends the estimate
into the current parameters with a step size.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .runtime import (
    EMAccumulator,
    apply_theta,
    backward,
    em_accumulate,
    em_step_full,
    em_step_mini,
    forward,
)

__all__ = ["TrainConfig", "TrainResult", "default_threads", "train"]


def default_threads() -> int:
    return os.cpu_count() or 1


@dataclass
class TrainConfig:
    epochs: int = 1
    batch_size: int = 256
    mode: str = "full"
    step_size: float = 0.01
    pseudocount: float = 0.0
    seed: int = 0
    threads: int | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise UsageError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise UsageError(f"batch size must be >= 1, got {self.batch_size}")
        if self.mode not in {"full", "mini"}:
            raise UsageError(f"em mode must be 'full' or 'mini', got {self.mode!r}")
        if not 0.0 < self.step_size <= 1.0:
            raise UsageError(f"step size must be in (0, 1], got {self.step_size}")
        if self.pseudocount < 0:
            raise UsageError(f"pseudocount must be >= 0, got {self.pseudocount}")
        if self.threads is not None and self.threads < 1:
            raise UsageError(f"threads must be >= 1, got {self.threads}")


@dataclass
class TrainResult:
    epoch_log_likelihood: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def log_lines(self) -> list[str]:
        return [
            f"epoch={i + 1} ll={ll:.10f} seconds={s:.3f}"
            for i, (ll, s) in enumerate(
                zip(self.epoch_log_likelihood, self.epoch_seconds)
            )
        ]


def _chunk_ranges(n: int, parts: int) -> list[tuple[int, int]]:
    parts = max(1, min(parts, n))
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _accumulate_batch(compiled, batch, acc: EMAccumulator, pool, threads: int):
    """Forward+backward over one batch, flows merged into acc."""
    spans = _chunk_ranges(batch.shape[0], threads)
    if pool is None or len(spans) == 1:
        for a, b in spans:
            _, bufs = forward(compiled, batch[a:b])
            backward(compiled, bufs)
            em_accumulate(acc, bufs)
        return

    def run(span):
        a, b = span
        _, bufs = forward(compiled, batch[a:b])
        backward(compiled, bufs)
        return bufs

    for bufs in pool.map(run, spans):
        em_accumulate(acc, bufs)


def train(compiled, data: np.ndarray, cfg: TrainConfig | None = None) -> TrainResult:
    """Run EM and update ``compiled.theta`` in place."""
    cfg = cfg or TrainConfig()
    data = np.asarray(data, dtype=np.int64)
    n = data.shape[0]
    if n == 0:
        raise UsageError("training data is empty")
    result = TrainResult()
    batch_size = cfg.batch_size
    if batch_size > n:
        result.notes.append(
            f"batch size {batch_size} exceeds {n} samples; clipped to {n}"
        )
        batch_size = n
    threads = cfg.threads if cfg.threads is not None else default_threads()
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for _ in range(cfg.epochs):
            t0 = time.perf_counter()
            order = (
                shuffle_rng.permutation(n) if cfg.mode == "mini" else np.arange(n)
            )
            epoch_acc = EMAccumulator.for_circuit(compiled)
            for a in range(0, n, batch_size):
                batch = data[order[a:a + batch_size]]
                if cfg.mode == "full":
                    _accumulate_batch(compiled, batch, epoch_acc, pool, threads)
                else:
                    acc = EMAccumulator.for_circuit(compiled)
                    _accumulate_batch(compiled, batch, acc, pool, threads)
                    epoch_acc.log_likelihood += acc.log_likelihood
                    epoch_acc.samples += acc.samples
                    new_theta = em_step_full(
                        compiled, acc, pseudocount=cfg.pseudocount
                    )
                    apply_theta(
                        compiled, em_step_mini(compiled.theta, new_theta, cfg.step_size)
                    )
            if cfg.mode == "full":
                apply_theta(
                    compiled, em_step_full(compiled, epoch_acc, pseudocount=cfg.pseudocount)
                )
            result.epoch_log_likelihood.append(
                epoch_acc.log_likelihood / epoch_acc.samples
            )
            result.epoch_seconds.append(time.perf_counter() - t0)
    finally:
        if pool is not None:
            pool.shutdown()
    return result
