"""The reference implementations themselves, checked on hand-worked cases
and against each other."""
import math

import numpy as np

from pcirc.graph import CircuitGraph
from pcirc.oracle import (
    MISSING,
    brute_partition,
    fd_param_gradient,
    hmm_forward_reference,
    naive_flows,
    naive_forward,
    naive_slot_flows,
)

from circuitgen import random_batch, random_circuit


def one_var_mixture():
    """0.3 * Cat(0.2, 0.8) + 0.7 * Cat(0.6, 0.4) over a single variable."""
    g = CircuitGraph(1)
    a = g.add_input(0, [0.2, 0.8])
    b = g.add_input(0, [0.6, 0.4])
    g.add_sum([a, b], [0.3, 0.7])
    return g


class TestNaiveForward:
    def test_mixture_value(self):
        g = one_var_mixture()
        logs = naive_forward(g, np.array([0]))
        assert math.isclose(logs[g.root], math.log(0.3 * 0.2 + 0.7 * 0.6))

    def test_product_multiplies(self):
        g = CircuitGraph(2)
        a = g.add_input(0, [0.2, 0.8])
        b = g.add_input(1, [0.9, 0.1])
        g.add_product([a, b])
        logs = naive_forward(g, np.array([1, 0]))
        assert math.isclose(logs[g.root], math.log(0.8 * 0.9))

    def test_missing_marginalizes(self):
        g = one_var_mixture()
        logs = naive_forward(g, np.array([MISSING]))
        assert abs(logs[g.root]) < 1e-12

    def test_zero_probability_gives_neg_inf(self):
        g = CircuitGraph(1)
        a = g.add_input(0, [0.0, 1.0])
        g.add_sum([a], [1.0])
        logs = naive_forward(g, np.array([0]))
        assert logs[g.root] == -np.inf

    def test_exhaustive_sum_is_one(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            g = random_circuit(rng, max_vars=4, max_cats=3)
            cats = g.var_categories()
            total = -np.inf
            grids = np.stack(
                [a.ravel() for a in np.meshgrid(*[np.arange(c) for c in cats])],
                axis=1,
            )
            for row in grids:
                total = np.logaddexp(total, naive_forward(g, row)[g.root])
            assert abs(total) < 1e-9, f"seed {seed}"


class TestNaiveFlows:
    def test_mixture_flows(self):
        g = one_var_mixture()
        flows, edge_flows = naive_flows(g, np.array([0]))
        p = 0.3 * 0.2 + 0.7 * 0.6
        assert flows[g.root] == 1.0
        assert math.isclose(edge_flows[(g.root, 0)], 0.3 * 0.2 / p)
        assert math.isclose(edge_flows[(g.root, 1)], 0.7 * 0.6 / p)
        assert math.isclose(flows[0], 0.3 * 0.2 / p)
        assert math.isclose(flows[1], 0.7 * 0.6 / p)

    def test_edge_flows_sum_to_node_flow(self):
        for seed in range(15):
            rng = np.random.default_rng(100 + seed)
            g = random_circuit(rng)
            x = random_batch(rng, g, 1)[0]
            flows, edge_flows = naive_flows(g, x)
            if naive_forward(g, x)[g.root] == -np.inf:
                continue
            for nid, node in enumerate(g.nodes):
                if hasattr(node, "slots"):
                    total = sum(
                        edge_flows[(nid, i)] for i in range(node.children.size)
                    )
                    assert abs(total - flows[nid]) < 1e-9

    def test_matches_fd_gradient(self):
        """flow(edge) must equal theta * d log p / d theta."""
        checked = 0
        for seed in range(12):
            rng = np.random.default_rng(200 + seed)
            g = random_circuit(rng)
            x = random_batch(rng, g, 1)[0]
            if naive_forward(g, x)[g.root] < math.log(1e-30):
                continue
            slot_acc = naive_slot_flows(g, x)
            slots = [
                s
                for node in g.nodes
                if hasattr(node, "slots")
                for s in node.slots.tolist()
            ]
            rng.shuffle(slots)
            for slot in slots[:4]:
                theta = g.params[slot]
                if theta < 1e-3:
                    continue
                grad = fd_param_gradient(g, x, slot)
                expect = theta * grad
                got = slot_acc[slot]
                assert abs(got - expect) <= 1e-5 * max(1.0, abs(expect))
                checked += 1
        assert checked > 10

    def test_missing_input_flow_spreads_over_pmf(self):
        g = one_var_mixture()
        acc = naive_slot_flows(g, np.array([MISSING]))
        np.testing.assert_allclose(acc[0:2], 0.3 * np.array([0.2, 0.8]))
        np.testing.assert_allclose(acc[2:4], 0.7 * np.array([0.6, 0.4]))


class TestBrutePartition:
    def test_worked_example(self):
        assert brute_partition([2, 2, 3, 7], 2) == 16

    def test_single_group_is_max_times_count(self):
        assert brute_partition([2, 2, 3, 7], 1) == 7 * 4

    def test_enough_groups_gives_exact_sum(self):
        nchs = [2, 2, 3, 7]
        assert brute_partition(nchs, 3) == sum(nchs)
        assert brute_partition(nchs, 10) == sum(nchs)

    def test_uniform_input(self):
        assert brute_partition([5, 5, 5], 2) == 15


class TestHmmReference:
    def test_single_step(self):
        pi = np.array([0.4, 0.6])
        E = np.array([[0.1, 0.9], [0.8, 0.2]])
        A = np.eye(2)
        ll = hmm_forward_reference(pi, A, E, np.array([[0]]))
        assert math.isclose(ll[0], math.log(0.4 * 0.1 + 0.6 * 0.8))

    def test_two_steps_by_hand(self):
        pi = np.array([1.0, 0.0])
        A = np.array([[0.3, 0.7], [0.5, 0.5]])
        E = np.array([[0.2, 0.8], [0.6, 0.4]])
        # alpha_1 = pi * E[:,0] = [0.2, 0]
        # alpha_2 = (alpha_1 @ A) * E[:,1] = [0.06*0.8, 0.14*0.4]
        expect = math.log(0.06 * 0.8 + 0.14 * 0.4)
        ll = hmm_forward_reference(pi, A, E, np.array([[0, 1]]))
        assert math.isclose(ll[0], expect)

    def test_all_missing_normalizes(self):
        rng = np.random.default_rng(0)
        pi = rng.dirichlet(np.ones(3))
        A = rng.dirichlet(np.ones(3), size=3)
        E = rng.dirichlet(np.ones(5), size=3)
        toks = np.full((2, 6), MISSING)
        ll = hmm_forward_reference(pi, A, E, toks)
        np.testing.assert_allclose(ll, 0.0, atol=1e-12)

    def test_marginal_consistency(self):
        rng = np.random.default_rng(1)
        pi = rng.dirichlet(np.ones(2))
        A = rng.dirichlet(np.ones(2), size=2)
        E = rng.dirichlet(np.ones(3), size=2)
        toks = np.array([[0, 1, 2, 0]])
        masked = toks.copy()
        masked[0, 2] = MISSING
        # marginal = logsumexp over the masked position
        parts = []
        for v in range(3):
            t = toks.copy()
            t[0, 2] = v
            parts.append(hmm_forward_reference(pi, A, E, t)[0])
        expect = np.logaddexp.reduce(parts)
        got = hmm_forward_reference(pi, A, E, masked)[0]
        assert math.isclose(got, expect, rel_tol=1e-12)
