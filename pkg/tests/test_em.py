"""EM update semantics: hand-worked steps, simplex restoration,
monotonicity, and tied-parameter behavior."""
import numpy as np
import pytest

from pcirc.compiler import CompileConfig, compile_circuit
from pcirc.errors import NumericError, UsageError
from pcirc.graph import CircuitGraph
from pcirc.runtime import (
    EMAccumulator,
    apply_theta,
    backward,
    em_accumulate,
    em_step_full,
    em_step_mini,
    forward,
    write_back_params,
)
from pcirc.structures import StructureConfig, build_hmm

from circuitgen import random_batch, random_circuit


def indicator_mixture():
    g = CircuitGraph(1)
    a = g.add_input(0, [1.0, 0.0])
    b = g.add_input(0, [0.0, 1.0])
    s = g.add_sum([a, b], [0.3, 0.7])
    return g, s


def run_em(compiled, data, pseudocount):
    _, bufs = forward(compiled, data)
    backward(compiled, bufs)
    acc = EMAccumulator.for_circuit(compiled)
    em_accumulate(acc, bufs)
    return acc, em_step_full(compiled, acc, pseudocount=pseudocount)


class TestFullStep:
    def test_single_sample_concentrates(self):
        g, s = indicator_mixture()
        c = compile_circuit(g)
        _, theta = run_em(c, np.array([[1]]), 0.0)
        np.testing.assert_allclose(
            theta[c.slot_phys[g.nodes[s].slots]], [0.0, 1.0], atol=1e-15
        )

    def test_huge_pseudocount_flattens(self):
        g, s = indicator_mixture()
        c = compile_circuit(g)
        _, theta = run_em(c, np.array([[1]]), 1e12)
        np.testing.assert_allclose(
            theta[c.slot_phys[g.nodes[s].slots]], [0.5, 0.5], atol=1e-9
        )

    def test_dead_branch_keeps_parameters(self):
        # a branch with zero mixture weight receives no flow; its
        # groups carry no information and must stay where they are
        g = CircuitGraph(1)
        a = g.add_input(0, [1.0, 0.0])
        b = g.add_input(0, [0.0, 1.0])
        inner = g.add_sum([a, b], [0.5, 0.5])
        dead_a = g.add_input(0, [1.0, 0.0])
        dead_b = g.add_input(0, [0.0, 1.0])
        dead = g.add_sum([dead_a, dead_b], [0.5, 0.5])
        g.add_sum(
            [g.add_product([inner]), g.add_product([dead])], [1.0, 0.0]
        )
        c = compile_circuit(g)
        _, theta = run_em(c, np.array([[0]]), 0.0)
        np.testing.assert_allclose(
            theta[c.slot_phys[g.nodes[dead].slots]], [0.5, 0.5], atol=1e-15
        )
        np.testing.assert_allclose(
            theta[c.slot_phys[g.nodes[inner].slots]], [1.0, 0.0], atol=1e-15
        )

    def test_no_flow_anywhere_without_pseudocount_is_an_error(self):
        g = CircuitGraph(1)
        a = g.add_input(0, [1.0, 0.0])
        b = g.add_input(0, [1.0, 0.0])
        g.add_sum([a, b], [0.5, 0.5])
        c = compile_circuit(g)
        # the only sample is impossible, so every flow is zero
        acc, _ = run_em(c, np.array([[1]]), 1e-6)
        with pytest.raises(NumericError):
            em_step_full(c, acc, pseudocount=0.0)

    def test_simplex_restored(self):
        rng = np.random.default_rng(10)
        g = random_circuit(rng, max_vars=5)
        c = compile_circuit(g, CompileConfig(block_size=2))
        data = random_batch(rng, g, 50, p_missing=0.1)
        _, theta = run_em(c, data, 1e-6)
        sums = np.add.reduceat(theta[c.group_idx], c.group_off[:-1])
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)

    def test_negative_pseudocount_rejected(self):
        g, _ = indicator_mixture()
        c = compile_circuit(g)
        acc, _ = run_em(c, np.array([[1]]), 0.0)
        with pytest.raises(UsageError):
            em_step_full(c, acc, pseudocount=-1.0)


class TestMiniStep:
    def test_alpha_one_returns_target(self):
        theta = np.array([0.5, 0.5])
        new = np.array([1.0, 0.0])
        np.testing.assert_array_equal(em_step_mini(theta, new, 1.0), new)

    def test_small_alpha_blend(self):
        theta = np.array([0.5, 0.5])
        new = np.array([1.0, 0.0])
        np.testing.assert_allclose(
            em_step_mini(theta, new, 0.01), [0.505, 0.495], rtol=1e-15
        )

    def test_alpha_out_of_range(self):
        theta = np.array([1.0])
        for alpha in (0.0, -0.1, 1.5):
            with pytest.raises(UsageError):
                em_step_mini(theta, theta, alpha)


class TestMonotonicity:
    def test_full_batch_ll_non_decreasing(self):
        rng = np.random.default_rng(21)
        g = random_circuit(rng, max_vars=6, max_nodes=150)
        c = compile_circuit(g, CompileConfig(block_size=4))
        data = random_batch(rng, g, 200, p_missing=0.15)
        prev = None
        for _ in range(20):
            acc, theta = run_em(c, data, 1e-6)
            if prev is not None:
                assert acc.log_likelihood >= prev - 1e-6
            prev = acc.log_likelihood
            apply_theta(c, theta)


class TestTiedParameters:
    def test_tied_flows_sum_per_step_flows(self):
        shared = dict(seed=3, seq_len=6, hidden_dim=4, vocab_size=5)
        tied_g = build_hmm(StructureConfig(kind="hmm", tied=True, **shared))
        untied_g = build_hmm(StructureConfig(kind="hmm", tied=False, **shared))
        tc = compile_circuit(tied_g, CompileConfig(block_size=4))
        uc = compile_circuit(untied_g, CompileConfig(block_size=4))
        rng = np.random.default_rng(8)
        toks = rng.integers(0, 5, size=(40, 6))
        _, tb = forward(tc, toks)
        backward(tc, tb)
        _, ub = forward(uc, toks)
        backward(uc, ub)
        # the tied transition accumulator equals the sum over the untied
        # circuit's per-step transition accumulators
        t_flows = np.zeros(tied_g.params.size)
        live = tc.slot_phys >= 0
        t_flows[live] = tb.f_params[tc.slot_phys[live]]
        u_flows = np.zeros(untied_g.params.size)
        ulive = uc.slot_phys >= 0
        u_flows[ulive] = ub.f_params[uc.slot_phys[ulive]]
        tied_trans = sorted(tied_g.tying.items())
        groups = {}
        for slot, grp in tied_trans:
            groups.setdefault(grp, []).append(slot)
        # same-seed construction means slot i of the tied graph and the
        # untied graph describe the same edge
        for grp, slots in groups.items():
            want = u_flows[slots].sum()
            got = t_flows[slots[0]]
            assert abs(got - want) <= 1e-9 * max(abs(want), 1.0)

    def test_write_back_round_trip(self):
        g, s = indicator_mixture()
        c = compile_circuit(g)
        _, theta = run_em(c, np.array([[1], [1], [0]]), 1e-3)
        apply_theta(c, theta)
        write_back_params(c, g)
        slots = g.nodes[s].slots
        np.testing.assert_allclose(g.params[slots], theta[c.slot_phys[slots]])
