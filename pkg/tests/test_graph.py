"""Structural contracts of the circuit graph."""
import numpy as np
import pytest

from pcirc.errors import CircuitValidationError
from pcirc.graph import CircuitGraph, InputNode, ProductNode, SumNode

from circuitgen import random_circuit


def two_var_mixture():
    g = CircuitGraph(2)
    a0 = g.add_input(0, [0.2, 0.8])
    a1 = g.add_input(0, [0.5, 0.5])
    b0 = g.add_input(1, [0.9, 0.1])
    b1 = g.add_input(1, [0.3, 0.7])
    p0 = g.add_product([a0, b0])
    p1 = g.add_product([a1, b1])
    g.add_sum([p0, p1], [0.6, 0.4])
    return g


class TestConstruction:
    def test_mixture_is_valid(self):
        g = two_var_mixture()
        report = g.validate()
        assert report.ok, str(report)

    def test_scope(self):
        g = two_var_mixture()
        assert g.scope(0) == {0}
        assert g.scope(4) == {0, 1}
        assert g.scope(g.root) == {0, 1}

    def test_edge_count(self):
        g = two_var_mixture()
        assert g.num_edges == 6

    def test_root_defaults_to_last_node(self):
        g = two_var_mixture()
        assert g.root == 6

    def test_param_slots_are_contiguous(self):
        g = two_var_mixture()
        # four pmfs of two categories plus two sum weights
        assert g.num_param_slots == 10
        np.testing.assert_allclose(g.params[8:10], [0.6, 0.4])

    def test_bad_pmf_rejected(self):
        g = CircuitGraph(1)
        with pytest.raises(CircuitValidationError):
            g.add_input(0, [0.5, 0.6])
        with pytest.raises(CircuitValidationError):
            g.add_input(0, [-0.1, 1.1])

    def test_bad_sum_weights_rejected(self):
        g = CircuitGraph(1)
        i = g.add_input(0, [0.5, 0.5])
        with pytest.raises(CircuitValidationError):
            g.add_sum([i], [0.9])

    def test_child_id_out_of_range(self):
        g = CircuitGraph(1)
        with pytest.raises(CircuitValidationError):
            g.add_product([3])

    def test_var_out_of_range(self):
        g = CircuitGraph(2)
        with pytest.raises(CircuitValidationError):
            g.add_input(2, [0.5, 0.5])

    def test_frozen_graph_rejects_structure_changes(self):
        g = two_var_mixture()
        g.freeze()
        with pytest.raises(CircuitValidationError):
            g.add_input(0, [0.5, 0.5])

    def test_slot_sharing(self):
        g = CircuitGraph(2)
        a = g.add_input(0, [0.25, 0.75])
        b = g.add_input(1, pmf=None, slot=g.nodes[a].slot, num_categories=2)
        assert g.nodes[b].slot == g.nodes[a].slot
        assert g.num_param_slots == 2

    def test_tie_groups(self):
        g = two_var_mixture()
        grp = g.tie([0, 2])
        assert g.tying == {0: grp, 2: grp}


class TestValidation:
    def test_smoothness_violation(self):
        g = CircuitGraph(2)
        i0 = g.add_input(0, [0.5, 0.5])
        i1 = g.add_input(1, [0.5, 0.5])
        g.add_sum([i0, i1], [0.5, 0.5])
        codes = {v.code for v in g.validate().violations}
        assert "smoothness" in codes

    def test_decomposability_violation(self):
        g = CircuitGraph(2)
        i0 = g.add_input(0, [0.5, 0.5])
        i1 = g.add_input(0, [0.5, 0.5])
        g.add_product([i0, i1])
        codes = {v.code for v in g.validate().violations}
        assert "decomposability" in codes

    def test_alternation_violation(self):
        g = CircuitGraph(1)
        i = g.add_input(0, [0.5, 0.5])
        s0 = g.add_sum([i], [1.0])
        g.add_sum([s0], [1.0])
        codes = {v.code for v in g.validate().violations}
        assert "alternation" in codes

    def test_orphan_node_is_flagged(self):
        g = two_var_mixture()
        g.add_input(0, [0.5, 0.5])
        g.set_root(6)
        codes = {v.code for v in g.validate().violations}
        assert "multi_root" in codes

    def test_root_with_parents_is_flagged(self):
        g = two_var_mixture()
        g.set_root(0)
        codes = {v.code for v in g.validate().violations}
        assert "root_has_parents" in codes

    def test_partial_root_scope_is_flagged(self):
        g = CircuitGraph(2)
        i = g.add_input(0, [0.5, 0.5])
        g.add_sum([i], [1.0])
        codes = {v.code for v in g.validate().violations}
        assert "root_scope" in codes

    def test_cycle_detected(self):
        nodes = [
            InputNode(0, 0, 2, 0),
            ProductNode(1, np.array([0, 2])),
            SumNode(2, np.array([1]), np.array([2])),
        ]
        g = CircuitGraph.from_parts(1, nodes, np.array([0.5, 0.5, 1.0]), root=2)
        codes = {v.code for v in g.validate().violations}
        assert "cycle" in codes
        with pytest.raises(CircuitValidationError):
            g.topological_order()

    def test_category_mismatch_flagged(self):
        g = CircuitGraph(1)
        i0 = g.add_input(0, [0.5, 0.5])
        i1 = g.add_input(0, [0.2, 0.3, 0.5])
        s0 = g.add_sum([i0], [1.0])
        s1 = g.add_sum([i1], [1.0])
        p = g.add_product([s0])
        q = g.add_product([s1])
        g.add_sum([p, q], [0.5, 0.5])
        codes = {v.code for v in g.validate().violations}
        assert "var_categories" in codes

    def test_simplex_violation_from_raw_parts(self):
        nodes = [
            InputNode(0, 0, 2, 0),
            SumNode(1, np.array([0]), np.array([2])),
        ]
        g = CircuitGraph.from_parts(1, nodes, np.array([0.5, 0.5, 0.7]), root=1)
        codes = {v.code for v in g.validate().violations}
        assert "simplex" in codes

    def test_validate_is_pure(self):
        g = two_var_mixture()
        r1 = g.validate()
        r2 = g.validate()
        assert r1.ok and r2.ok


class TestRandomCircuits:
    def test_generated_circuits_are_valid(self):
        for seed in range(40):
            rng = np.random.default_rng(seed)
            g = random_circuit(rng)
            report = g.validate()
            assert report.ok, f"seed {seed}: {report}"

    def test_generated_circuits_reuse_nodes(self):
        hit = False
        for seed in range(10):
            rng = np.random.default_rng(seed)
            g = random_circuit(rng)
            if (g.parent_counts() > 1).any():
                hit = True
        assert hit, "generator never produced shared nodes"
