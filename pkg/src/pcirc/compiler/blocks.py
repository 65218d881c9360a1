"""Block structure detection within one sum layer.

The engine wants (sum-block x product-block) pairs that are either fully
connected or absent.  Rather than testing a fixed grid, nodes are grouped by
connectivity class: products sharing an identical parent set, then sums
sharing an identical set of child blocks.  Chunking each class into K-sized
blocks (padding the tail with pseudo entries) guarantees every emitted pair
is fully connected.  A layer whose classes are so small that padding would
dominate is demoted to scalar blocks instead.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import UsageError

PAD = -1


def pow2_floor(n: int) -> int:
    if n < 1:
        raise UsageError(f"pow2_floor needs a positive value, got {n}")
    return 1 << (n.bit_length() - 1)


@dataclass
class BlockLayout:
    k_m: int
    k_n: int
    demoted: bool
    sum_blocks: list[np.ndarray]  # sum keys per block, PAD for padded slots
    prod_blocks: list[np.ndarray]  # product keys per block, PAD for padded slots
    child_blocks: list[np.ndarray]  # per sum block: sorted product block indices
    sum_block_of: dict[int, tuple[int, int]]  # key -> (block, offset)
    prod_block_of: dict[int, tuple[int, int]]
    sum_pad_fraction: float
    prod_pad_fraction: float

    @property
    def pairs(self) -> list[tuple[int, int]]:
        """Fully-connected (sum_block, prod_block) pairs; all other pairs
        are unconnected."""
        return [
            (si, int(pb)) for si, cbs in enumerate(self.child_blocks) for pb in cbs
        ]


def _chunk_classes(
    classes: list[np.ndarray], k: int
) -> tuple[list[np.ndarray], dict[int, tuple[int, int]], float]:
    blocks: list[np.ndarray] = []
    block_of: dict[int, tuple[int, int]] = {}
    padded = 0
    for members in classes:
        for start in range(0, members.size, k):
            chunk = members[start : start + k]
            if chunk.size < k:
                padded += k - chunk.size
                chunk = np.concatenate(
                    [chunk, np.full(k - chunk.size, PAD, dtype=np.int64)]
                )
            idx = len(blocks)
            blocks.append(chunk.astype(np.int64))
            for off, key in enumerate(chunk.tolist()):
                if key != PAD:
                    block_of[key] = (idx, off)
    total = len(blocks) * k
    return blocks, block_of, padded / total if total else 0.0


def detect_blocks(
    sum_ids: np.ndarray,
    sum_children: list[np.ndarray],
    k: int,
    k_n: int | None = None,
    demote_threshold: float = 0.5,
) -> BlockLayout:
    """Group one layer's sums and their child products into aligned blocks.

    sum_ids are the layer's sum keys; sum_children holds, per sum, the keys
    of its child products (already restricted to this layer's scratch
    population).  Any integer keys work as long as they are unique.  k caps
    the sum-block size; k_n (default k) the product-block size; both are
    clipped to the largest power of two that fits the layer.
    """
    if k < 1 or (k_n is not None and k_n < 1):
        raise UsageError(f"block size must be >= 1, got {k}/{k_n}")
    sum_ids = np.asarray(sum_ids, dtype=np.int64)
    if sum_ids.size == 0:
        return BlockLayout(1, 1, False, [], [], [], {}, {}, 0.0, 0.0)

    children = [np.asarray(c, dtype=np.int64) for c in sum_children]
    child_concat = np.concatenate(children)
    parent_concat = np.repeat(sum_ids, [c.size for c in children])
    prod_keys = np.unique(child_concat)

    k_n = min(k if k_n is None else k_n, pow2_floor(prod_keys.size))
    k_m = min(k, pow2_floor(sum_ids.size))

    # products sharing an identical parent set form a class
    order = np.lexsort((parent_concat, child_concat))
    sorted_children = child_concat[order]
    sorted_parents = parent_concat[order]
    starts = np.searchsorted(sorted_children, prod_keys, side="left")
    ends = np.searchsorted(sorted_children, prod_keys, side="right")
    prod_classes: dict[bytes, list[int]] = {}
    for key, a, b in zip(prod_keys.tolist(), starts.tolist(), ends.tolist()):
        sig = sorted_parents[a:b].tobytes()
        prod_classes.setdefault(sig, []).append(key)
    prod_blocks, prod_block_of, prod_pad = _chunk_classes(
        [np.array(m, dtype=np.int64) for m in prod_classes.values()], k_n
    )

    # sums sharing an identical child-block set form a class
    block_idx = np.empty(prod_keys.size, dtype=np.int64)
    for key, (b, _) in prod_block_of.items():
        block_idx[np.searchsorted(prod_keys, key)] = b
    sum_child_blocks: list[np.ndarray] = []
    sum_classes: dict[bytes, list[int]] = {}
    for sid, ch in zip(sum_ids.tolist(), children):
        cbs = np.unique(block_idx[np.searchsorted(prod_keys, ch)])
        sum_child_blocks.append(cbs)
        sum_classes.setdefault(cbs.tobytes(), []).append(sid)
    sum_blocks, sum_block_of, sum_pad = _chunk_classes(
        [np.array(m, dtype=np.int64) for m in sum_classes.values()], k_m
    )

    if max(sum_pad, prod_pad) > demote_threshold and max(k_m, k_n) > 1:
        layout = detect_blocks(sum_ids, sum_children, 1, 1, demote_threshold)
        layout.demoted = True
        return layout

    key_to_cbs = {sid: cbs for sid, cbs in zip(sum_ids.tolist(), sum_child_blocks)}
    child_blocks = [key_to_cbs[int(b[0])] for b in sum_blocks]
    return BlockLayout(
        k_m,
        k_n,
        False,
        sum_blocks,
        prod_blocks,
        child_blocks,
        sum_block_of,
        prod_block_of,
        sum_pad,
        prod_pad,
    )
