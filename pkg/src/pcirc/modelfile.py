"""Plain-text circuit serialization (pcirc format, version 1).

Layout:

    pcirc 1 <num_vars> <num_nodes> <num_param_slots>
    I <id> <var> <num_categories> <first_slot>
    P <id> <k> <child_1> ... <child_k>
    S <id> <k> <child_1> <slot_1> ... <child_k> <slot_k>
    ROOT <id>            # optional, defaults to the highest id
    TIE <slot> <group>   # optional, repeated
    PARAMS
    <decimal> <decimal> ...

Node ids are dense 0..num_nodes-1 but may appear in any order; the compiler
re-indexes, so file order carries no semantics.  Parameters are written with
shortest round-trip precision, so parse(serialize(g)) is bit-identical.
Blank lines and '#' comments are ignored.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError
from .graph import CircuitGraph, InputNode, Node, ProductNode, SumNode

MAGIC = "pcirc"
VERSION = 1
_PARAMS_PER_LINE = 8


def dumps_model(g: CircuitGraph) -> str:
    lines = [f"{MAGIC} {VERSION} {g.num_vars} {g.num_nodes} {g.num_param_slots}"]
    for node in g.nodes:
        if isinstance(node, InputNode):
            lines.append(f"I {node.id} {node.var} {node.num_categories} {node.slot}")
        elif isinstance(node, ProductNode):
            ch = " ".join(str(c) for c in node.children.tolist())
            lines.append(f"P {node.id} {node.children.size} {ch}")
        else:
            pairs = " ".join(
                f"{c} {s}"
                for c, s in zip(node.children.tolist(), node.slots.tolist())
            )
            lines.append(f"S {node.id} {node.children.size} {pairs}")
    if g.num_nodes and g.root != g.num_nodes - 1:
        lines.append(f"ROOT {g.root}")
    for slot in sorted(g.tying):
        lines.append(f"TIE {slot} {g.tying[slot]}")
    lines.append("PARAMS")
    vals = [repr(float(v)) for v in g.params]
    for i in range(0, len(vals), _PARAMS_PER_LINE):
        lines.append(" ".join(vals[i : i + _PARAMS_PER_LINE]))
    return "\n".join(lines) + "\n"


def save_model(g: CircuitGraph, path: str | Path) -> None:
    Path(path).write_text(dumps_model(g))


def _fail(lineno: int, msg: str) -> None:
    raise FormatError(f"line {lineno}: {msg}")


def _ints(lineno: int, parts: list[str]) -> list[int]:
    try:
        return [int(p) for p in parts]
    except ValueError:
        _fail(lineno, f"expected integers, got {parts!r}")


def loads_model(text: str) -> CircuitGraph:
    raw = text.splitlines()
    lines: list[tuple[int, str]] = []
    for i, line in enumerate(raw, start=1):
        body = line.split("#", 1)[0].strip()
        if body:
            lines.append((i, body))
    if not lines:
        raise FormatError("empty model file")

    lineno, header = lines[0]
    parts = header.split()
    if len(parts) != 5 or parts[0] != MAGIC:
        _fail(lineno, f"bad header {header!r}")
    version, num_vars, num_nodes, num_slots = _ints(lineno, parts[1:])
    if version != VERSION:
        _fail(lineno, f"unsupported format version {version}")
    if num_vars < 1 or num_nodes < 1 or num_slots < 0:
        _fail(lineno, "non-positive counts in header")

    nodes: list[Node | None] = [None] * num_nodes
    root: int | None = None
    tying: dict[int, int] = {}
    params: np.ndarray | None = None

    def check_id(lineno: int, nid: int) -> None:
        if not 0 <= nid < num_nodes:
            _fail(lineno, f"node id {nid} out of range [0, {num_nodes})")
        if nodes[nid] is not None:
            _fail(lineno, f"node id {nid} defined twice")

    def check_slot(lineno: int, slot: int) -> None:
        if not 0 <= slot < num_slots:
            _fail(lineno, f"slot {slot} out of range [0, {num_slots})")

    i = 1
    while i < len(lines):
        lineno, body = lines[i]
        kind = body.split(None, 1)[0]
        if kind == "PARAMS":
            break
        fields = body.split()
        if kind == "I":
            if len(fields) != 5:
                _fail(lineno, "input line needs: I id var ncat slot")
            nid, var, ncat, slot = _ints(lineno, fields[1:])
            check_id(lineno, nid)
            if not 0 <= var < num_vars:
                _fail(lineno, f"var {var} out of range [0, {num_vars})")
            if ncat < 1:
                _fail(lineno, f"input needs >= 1 category, got {ncat}")
            check_slot(lineno, slot)
            check_slot(lineno, slot + ncat - 1)
            nodes[nid] = InputNode(nid, var, ncat, slot)
        elif kind == "P":
            ints = _ints(lineno, fields[1:])
            if len(ints) < 2 or len(ints) != 2 + ints[1]:
                _fail(lineno, "product line needs: P id k c1..ck")
            nid, k = ints[0], ints[1]
            check_id(lineno, nid)
            if k < 1:
                _fail(lineno, "product needs >= 1 child")
            ch = np.array(ints[2:], dtype=np.int64)
            if ch.min() < 0 or ch.max() >= num_nodes:
                _fail(lineno, "product child id out of range")
            nodes[nid] = ProductNode(nid, ch)
        elif kind == "S":
            ints = _ints(lineno, fields[1:])
            if len(ints) < 2 or len(ints) != 2 + 2 * ints[1]:
                _fail(lineno, "sum line needs: S id k c1 s1 .. ck sk")
            nid, k = ints[0], ints[1]
            check_id(lineno, nid)
            if k < 1:
                _fail(lineno, "sum needs >= 1 child")
            pairs = np.array(ints[2:], dtype=np.int64).reshape(k, 2)
            ch, slots = pairs[:, 0].copy(), pairs[:, 1].copy()
            if ch.min() < 0 or ch.max() >= num_nodes:
                _fail(lineno, "sum child id out of range")
            if slots.min() < 0 or slots.max() >= num_slots:
                _fail(lineno, "sum slot out of range")
            nodes[nid] = SumNode(nid, ch, slots)
        elif kind == "ROOT":
            ints = _ints(lineno, fields[1:])
            if len(ints) != 1:
                _fail(lineno, "ROOT line needs one id")
            if not 0 <= ints[0] < num_nodes:
                _fail(lineno, f"ROOT id {ints[0]} out of range")
            root = ints[0]
        elif kind == "TIE":
            ints = _ints(lineno, fields[1:])
            if len(ints) != 2:
                _fail(lineno, "TIE line needs: TIE slot group")
            check_slot(lineno, ints[0])
            tying[ints[0]] = ints[1]
        else:
            _fail(lineno, f"unknown record kind {kind!r}")
        i += 1
    else:
        raise FormatError("missing PARAMS section")

    values: list[float] = []
    for lineno, body in lines[i + 1 :]:
        for tok in body.split():
            try:
                values.append(float(tok))
            except ValueError:
                _fail(lineno, f"bad parameter value {tok!r}")
    if len(values) != num_slots:
        raise FormatError(
            f"PARAMS section has {len(values)} values, header promised {num_slots}"
        )
    params = np.array(values, dtype=np.float64)

    missing = [nid for nid, n in enumerate(nodes) if n is None]
    if missing:
        raise FormatError(f"node ids never defined: {missing[:8]}")

    return CircuitGraph.from_parts(num_vars, nodes, params, root=root, tying=tying)


def load_model(path: str | Path) -> CircuitGraph:
    p = Path(path)
    if not p.exists():
        raise FormatError(f"model file not found: {p}")
    return loads_model(p.read_text())
