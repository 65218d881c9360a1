"""Seeded generators for standard circuit families.

Three families are provided: homogeneous (optionally parameter-tied) HMM
chains, PD-style recursive region decompositions over n-d grids, and
RAT-SPN-style random balanced region graphs.  All parameters are drawn from
symmetric Dirichlet(1) distributions; the seed fully determines the graph.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import CircuitValidationError, FormatError
from .graph import CircuitGraph


@dataclass(frozen=True)
class StructureConfig:
    kind: str
    seed: int = 0
    num_vars: int | None = None
    hidden_dim: int = 1
    # hmm
    seq_len: int | None = None
    vocab_size: int | None = None
    tied: bool = True
    # pd
    shape: tuple[int, ...] | None = None
    split_interval: int = 2
    # ratspn
    depth: int | None = None
    num_sums_per_region: int | None = None
    num_input_components: int | None = None
    # input categories for pd / ratspn leaves
    num_categories: int = 2


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def parse_structure_config(text: str) -> StructureConfig:
    """Parse the flat key=value config format used by the build command."""
    fields: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        try:
            if key in {
                "seed",
                "num_vars",
                "hidden_dim",
                "seq_len",
                "vocab_size",
                "split_interval",
                "depth",
                "num_sums_per_region",
                "num_input_components",
                "num_categories",
            }:
                fields[key] = int(value)
            elif key == "tied":
                fields[key] = _BOOL[value.lower()]
            elif key == "shape":
                fields[key] = tuple(int(v) for v in value.split(",") if v.strip())
            elif key == "kind":
                fields[key] = value
            else:
                raise FormatError(f"config line {lineno}: unknown key {key!r}")
        except (ValueError, KeyError):
            raise FormatError(
                f"config line {lineno}: bad value {value!r} for {key!r}"
            ) from None
    if "kind" not in fields:
        raise FormatError("config is missing the required key 'kind'")
    if fields["kind"] not in {"hmm", "pd", "ratspn"}:
        raise FormatError(f"unknown structure kind {fields['kind']!r}")
    return StructureConfig(**fields)  # type: ignore[arg-type]


def load_structure_config(path: str | Path) -> StructureConfig:
    p = Path(path)
    if not p.exists():
        raise FormatError(f"config file not found: {p}")
    return parse_structure_config(p.read_text())


def _dirichlet_rows(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    """Dirichlet(1) rows with the largest entry nudged so each float row sum
    is exactly 1 where representable."""
    rows = rng.dirichlet(np.ones(k), size=n)
    rows /= rows.sum(axis=1, keepdims=True)
    top = np.argmax(rows, axis=1)
    rows[np.arange(n), top] += 1.0 - rows.sum(axis=1)
    return rows


def _dirichlet(rng: np.random.Generator, k: int) -> np.ndarray:
    return _dirichlet_rows(rng, 1, k)[0]


def hmm_parameters(cfg: StructureConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The (pi, A, E) draw used by build_hmm for the same config."""
    K, V = cfg.hidden_dim, cfg.vocab_size
    rng = np.random.default_rng(cfg.seed)
    pi = _dirichlet(rng, K)
    A = _dirichlet_rows(rng, K, K)
    E = _dirichlet_rows(rng, K, V)
    return pi, A, E


def build_hmm(cfg: StructureConfig) -> CircuitGraph:
    """Homogeneous HMM chain.

    The chain is laid out so the circuit value equals the classical forward
    algorithm with initial distribution pi, row-stochastic transitions A
    (state at position t to position t+1) and emissions E.  Construction runs
    from the last sequence position upward; each built step adds hidden_dim
    sums over the previous step's products and pairs them with that
    position's emission inputs.  The root mixes the first position's products
    with pi.  With tied=true every step shares one transition slot block and
    one emission slot block.
    """
    T, K, V = cfg.seq_len, cfg.hidden_dim, cfg.vocab_size
    if T is None or T < 1:
        raise CircuitValidationError("hmm config needs seq_len >= 1")
    if K < 1:
        raise CircuitValidationError("hmm config needs hidden_dim >= 1")
    if V is None or V < 2:
        raise CircuitValidationError("hmm config needs vocab_size >= 2")
    if cfg.num_vars is not None and cfg.num_vars != T:
        raise CircuitValidationError("hmm num_vars must equal seq_len")
    pi, A, E = hmm_parameters(cfg)
    g = CircuitGraph(T)
    em_slots: list[int | None] = [None] * K
    trans_slots: list[np.ndarray | None] = [None] * K
    prev_prods: np.ndarray | None = None
    for t in range(T - 1, -1, -1):
        inputs = []
        for j in range(K):
            if cfg.tied and em_slots[j] is not None:
                nid = g.add_input(t, slot=em_slots[j], num_categories=V)
            else:
                nid = g.add_input(t, E[j])
                if cfg.tied:
                    em_slots[j] = g.nodes[nid].slot
            inputs.append(nid)
        prods = []
        for j in range(K):
            if prev_prods is None:
                prods.append(g.add_product([inputs[j]]))
            else:
                if cfg.tied and trans_slots[j] is not None:
                    s = g.add_sum(prev_prods, A[j], slots=trans_slots[j])
                else:
                    s = g.add_sum(prev_prods, A[j])
                    if cfg.tied:
                        trans_slots[j] = g.nodes[s].slots
                prods.append(g.add_product([inputs[j], s]))
        prev_prods = np.array(prods, dtype=np.int64)
    root = g.add_sum(prev_prods, pi)
    g.set_root(root)
    return g


def build_pd(cfg: StructureConfig) -> CircuitGraph:
    """Recursive region decomposition over an n-d grid of variables.

    Every admissible cut (a multiple of split_interval strictly inside the
    region, on any axis) contributes the full cross product of the two
    sub-regions' nodes; a region with no admissible cut is halved at the
    midpoint of its longest axis.  Single-cell regions hold hidden_dim
    categorical inputs; every other region holds hidden_dim sums (one at the
    root) over all of its products.
    """
    if cfg.shape is None or len(cfg.shape) == 0 or min(cfg.shape) < 1:
        raise CircuitValidationError("pd config needs a non-empty positive shape")
    if cfg.split_interval < 1:
        raise CircuitValidationError("pd split_interval must be >= 1")
    if cfg.hidden_dim < 1 or cfg.num_categories < 2:
        raise CircuitValidationError("pd needs hidden_dim >= 1, num_categories >= 2")
    nv = int(np.prod(cfg.shape))
    if cfg.num_vars is not None and cfg.num_vars != nv:
        raise CircuitValidationError("pd num_vars must equal prod(shape)")
    h, step = cfg.hidden_dim, cfg.split_interval
    rng = np.random.default_rng(cfg.seed)
    g = CircuitGraph(nv)
    var_index = np.arange(nv).reshape(cfg.shape)
    memo: dict[tuple[tuple[int, int], ...], list[int]] = {}

    def region(box: tuple[tuple[int, int], ...], is_root: bool = False) -> list[int]:
        if not is_root and box in memo:
            return memo[box]
        sizes = [hi - lo for lo, hi in box]
        if int(np.prod(sizes)) == 1:
            var = int(var_index[tuple(lo for lo, _ in box)])
            nodes = [
                g.add_input(var, _dirichlet(rng, cfg.num_categories)) for _ in range(h)
            ]
            memo[box] = nodes
            return nodes
        cuts = []
        for axis, (lo, hi) in enumerate(box):
            first = (lo // step + 1) * step
            cuts.extend((axis, c) for c in range(first, hi, step) if c > lo)
        if not cuts:
            axis = int(np.argmax(sizes))
            lo, hi = box[axis]
            cuts = [(axis, lo + (hi - lo) // 2)]
        products = []
        for axis, cut in cuts:
            lo, hi = box[axis]
            left = region(box[:axis] + ((lo, cut),) + box[axis + 1 :])
            right = region(box[:axis] + ((cut, hi),) + box[axis + 1 :])
            products.extend(
                g.add_product([a, b]) for a in left for b in right
            )
        n_sums = 1 if is_root else h
        nodes = [
            g.add_sum(products, _dirichlet(rng, len(products))) for _ in range(n_sums)
        ]
        if not is_root:
            memo[box] = nodes
        return nodes

    root_box = tuple((0, int(s)) for s in cfg.shape)
    root_nodes = region(root_box, is_root=True)
    g.set_root(root_nodes[0])
    return g


def build_ratspn(cfg: StructureConfig) -> CircuitGraph:
    """Random balanced region graph in the RAT-SPN style.

    Variables are split into two balanced halves (seeded shuffle) down to the
    given depth; every inner region holds num_sums_per_region sums over all
    cross products of its child regions' nodes.  Single-variable leaves hold
    num_input_components categorical inputs under per-region mixtures; a
    multi-variable region at the depth limit fully factorizes into products
    of fresh per-variable input mixtures.
    """
    nv = cfg.num_vars
    if nv is None or nv < 2:
        raise CircuitValidationError("ratspn config needs num_vars >= 2")
    depth = cfg.depth
    if depth is None or depth < 1:
        raise CircuitValidationError("ratspn config needs depth >= 1")
    if 2**depth > nv:
        raise CircuitValidationError(
            f"depth {depth} too large for {nv} variables (needs 2^depth <= num_vars)"
        )
    num_sums = cfg.num_sums_per_region or cfg.hidden_dim
    num_inputs = cfg.num_input_components or num_sums
    ncat = cfg.num_categories
    if num_sums < 1 or num_inputs < 1 or ncat < 2:
        raise CircuitValidationError("ratspn component counts must be positive")
    rng = np.random.default_rng(cfg.seed)
    g = CircuitGraph(nv)

    def leaf_mixture(v: int) -> int:
        comps = [g.add_input(v, _dirichlet(rng, ncat)) for _ in range(num_inputs)]
        return g.add_sum(comps, _dirichlet(rng, num_inputs))

    def region(vars_: np.ndarray, level: int) -> list[int]:
        n_s = num_sums if level > 0 else 1
        if vars_.size == 1:
            v = int(vars_[0])
            comps = [g.add_input(v, _dirichlet(rng, ncat)) for _ in range(num_inputs)]
            return [g.add_sum(comps, _dirichlet(rng, num_inputs)) for _ in range(n_s)]
        if level == depth:
            comps = [
                g.add_product([leaf_mixture(int(v)) for v in vars_])
                for _ in range(num_inputs)
            ]
            return [g.add_sum(comps, _dirichlet(rng, num_inputs)) for _ in range(n_s)]
        perm = rng.permutation(vars_)
        half = perm.size // 2
        left = region(np.sort(perm[:half]), level + 1)
        right = region(np.sort(perm[half:]), level + 1)
        prods = [g.add_product([a, b]) for a in left for b in right]
        return [g.add_sum(prods, _dirichlet(rng, len(prods))) for _ in range(n_s)]

    root_nodes = region(np.arange(nv), 0)
    g.set_root(root_nodes[0])
    return g


_BUILDERS = {"hmm": build_hmm, "pd": build_pd, "ratspn": build_ratspn}


def build_structure(cfg: StructureConfig, seed: int | None = None) -> CircuitGraph:
    """Dispatch on cfg.kind; seed overrides the config seed when given."""
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    builder = _BUILDERS.get(cfg.kind)
    if builder is None:
        raise CircuitValidationError(f"unknown structure kind {cfg.kind!r}")
    return builder(cfg)
