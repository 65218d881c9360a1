"""Compiled-cache serialization: byte determinism, full round trips,
and corruption detection."""
import numpy as np
import pytest

from pcirc.compiler import CompileConfig, compile_circuit
from pcirc.compiler.cache import (
    dumps_compiled,
    load_compiled,
    loads_compiled,
    save_compiled,
)
from pcirc.errors import FormatError
from pcirc.runtime import backward, forward
from pcirc.structures import StructureConfig, build_hmm

from circuitgen import random_batch, random_circuit


def small_compiled(seed=0, k=4):
    g = random_circuit(np.random.default_rng(seed), max_vars=5, max_nodes=100)
    return g, compile_circuit(g, CompileConfig(block_size=k))


class TestRoundTrip:
    def test_bytes_stable(self):
        _, c = small_compiled()
        assert dumps_compiled(c) == dumps_compiled(c)

    def test_loaded_equals_original(self):
        g, c = small_compiled(seed=5)
        c2 = loads_compiled(dumps_compiled(c))
        assert dumps_compiled(c2) == dumps_compiled(c)
        assert c2.graph_hash == c.graph_hash
        x = random_batch(np.random.default_rng(1), g, 6, p_missing=0.2)
        l1, b1 = forward(c, x)
        l2, b2 = forward(c2, x)
        np.testing.assert_array_equal(l1, l2)
        backward(c, b1)
        backward(c2, b2)
        np.testing.assert_array_equal(b1.f_params, b2.f_params)

    def test_tied_hmm_round_trips(self):
        cfg = StructureConfig(kind="hmm", seed=2, seq_len=10, hidden_dim=8,
                              vocab_size=6, tied=True)
        c = compile_circuit(build_hmm(cfg), CompileConfig(block_size=8))
        c2 = loads_compiled(dumps_compiled(c))
        np.testing.assert_array_equal(c2.reductions, c.reductions)
        np.testing.assert_array_equal(c2.theta, c.theta)

    def test_file_round_trip(self, tmp_path):
        _, c = small_compiled(seed=9)
        path = tmp_path / "circuit.pcc"
        save_compiled(c, path)
        c2 = load_compiled(path)
        assert dumps_compiled(c2) == dumps_compiled(c)

    def test_hash_guard(self, tmp_path):
        _, c = small_compiled(seed=9)
        path = tmp_path / "circuit.pcc"
        save_compiled(c, path)
        assert load_compiled(path, expect_hash=c.graph_hash) is not None
        with pytest.raises(FormatError):
            load_compiled(path, expect_hash="0" * 64)


class TestCorruption:
    def test_bad_magic(self):
        _, c = small_compiled()
        blob = bytearray(dumps_compiled(c))
        blob[0] ^= 0xFF
        with pytest.raises(FormatError):
            loads_compiled(bytes(blob))

    def test_truncated(self):
        _, c = small_compiled()
        blob = dumps_compiled(c)
        with pytest.raises(FormatError):
            loads_compiled(blob[: len(blob) // 2])

    def test_trailing_garbage(self):
        _, c = small_compiled()
        with pytest.raises(FormatError):
            loads_compiled(dumps_compiled(c) + b"x")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError):
            load_compiled(tmp_path / "absent.pcc")
