"""Structure generators: validity, determinism, and family-specific shape."""
import math

import numpy as np
import pytest

from pcirc.errors import CircuitValidationError, FormatError
from pcirc.graph import InputNode, ProductNode, SumNode
from pcirc.modelfile import dumps_model
from pcirc.oracle import hmm_forward_reference, naive_forward
from pcirc.structures import (
    StructureConfig,
    build_hmm,
    build_pd,
    build_ratspn,
    build_structure,
    hmm_parameters,
    parse_structure_config,
)


class TestHmm:
    def test_degenerate_is_a_single_categorical(self):
        cfg = StructureConfig(kind="hmm", seq_len=1, hidden_dim=1, vocab_size=4, seed=3)
        g = build_hmm(cfg)
        assert g.validate().ok
        _, _, E = hmm_parameters(cfg)
        for v in range(4):
            got = naive_forward(g, np.array([v]))[g.root]
            assert math.isclose(got, math.log(E[0, v]))

    @pytest.mark.parametrize("tied", [True, False])
    def test_matches_alpha_recursion(self, tied):
        cfg = StructureConfig(
            kind="hmm", seq_len=7, hidden_dim=4, vocab_size=5, tied=tied, seed=11
        )
        g = build_hmm(cfg)
        assert g.validate().ok
        pi, A, E = hmm_parameters(cfg)
        rng = np.random.default_rng(42)
        toks = rng.integers(0, 5, size=(20, 7))
        ref = hmm_forward_reference(pi, A, E, toks)
        got = np.array([naive_forward(g, t)[g.root] for t in toks])
        np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-12)

    def test_tied_slot_count_independent_of_length(self):
        for T in (2, 5, 9):
            cfg = StructureConfig(
                kind="hmm", seq_len=T, hidden_dim=3, vocab_size=4, tied=True
            )
            g = build_hmm(cfg)
            # transitions K*K, emissions K*V, root K
            assert g.num_param_slots == 9 + 12 + 3

    def test_untied_slot_count_grows_with_length(self):
        cfg = StructureConfig(
            kind="hmm", seq_len=5, hidden_dim=3, vocab_size=4, tied=False
        )
        g = build_hmm(cfg)
        assert g.num_param_slots == 4 * 9 + 5 * 12 + 3

    def test_large_hidden_dim_accepted(self):
        cfg = StructureConfig(
            kind="hmm", seq_len=2, hidden_dim=4096, vocab_size=4, tied=True
        )
        g = build_hmm(cfg)
        assert g.num_edges > 4096 * 4096

    def test_config_validation(self):
        with pytest.raises(CircuitValidationError):
            build_hmm(StructureConfig(kind="hmm", seq_len=0, vocab_size=3))
        with pytest.raises(CircuitValidationError):
            build_hmm(StructureConfig(kind="hmm", seq_len=2, vocab_size=1))
        with pytest.raises(CircuitValidationError):
            build_hmm(
                StructureConfig(kind="hmm", seq_len=2, vocab_size=3, num_vars=5)
            )


class TestPd:
    def test_trivial_shape_two(self):
        g = build_pd(StructureConfig(kind="pd", shape=(2,), hidden_dim=1))
        assert g.validate().ok
        root = g.nodes[g.root]
        assert isinstance(root, SumNode) and root.children.size == 1
        prod = g.nodes[root.children[0]]
        assert isinstance(prod, ProductNode) and prod.children.size == 2
        assert all(isinstance(g.nodes[c], InputNode) for c in prod.children)

    @pytest.mark.parametrize("shape", [(4, 4), (4, 3), (2, 2, 3), (5,)])
    def test_valid_on_assorted_shapes(self, shape):
        g = build_pd(StructureConfig(kind="pd", shape=shape, hidden_dim=2, seed=5))
        report = g.validate()
        assert report.ok, str(report)
        assert g.scope(g.root) == set(range(int(np.prod(shape))))

    def test_regions_are_shared(self):
        g = build_pd(StructureConfig(kind="pd", shape=(4, 4), hidden_dim=2))
        assert (g.parent_counts() > 1).any()

    def test_paper_scale_config_accepted(self):
        cfg = StructureConfig(kind="pd", shape=(16, 16, 3), hidden_dim=8, seed=0)
        g = build_pd(cfg)
        assert g.validate().ok
        assert g.num_vars == 768


class TestRatspn:
    def test_trivial_two_vars(self):
        g = build_ratspn(
            StructureConfig(kind="ratspn", num_vars=2, depth=1, num_sums_per_region=1)
        )
        assert g.validate().ok
        root = g.nodes[g.root]
        assert isinstance(root, SumNode) and root.children.size == 1
        prod = g.nodes[root.children[0]]
        assert isinstance(prod, ProductNode) and prod.children.size == 2
        for c in prod.children:
            mix = g.nodes[c]
            assert isinstance(mix, SumNode)
            assert all(isinstance(g.nodes[i], InputNode) for i in mix.children)

    def test_deterministic(self):
        cfg = StructureConfig(
            kind="ratspn", num_vars=8, depth=3, num_sums_per_region=4, seed=77
        )
        assert dumps_model(build_ratspn(cfg)) == dumps_model(build_ratspn(cfg))

    def test_different_seeds_differ(self):
        base = StructureConfig(kind="ratspn", num_vars=8, depth=2, num_sums_per_region=2)
        a = dumps_model(build_structure(base, seed=1))
        b = dumps_model(build_structure(base, seed=2))
        assert a != b

    def test_depth_too_large_rejected(self):
        with pytest.raises(CircuitValidationError):
            build_ratspn(StructureConfig(kind="ratspn", num_vars=4, depth=3))

    def test_uneven_split_valid(self):
        g = build_ratspn(
            StructureConfig(kind="ratspn", num_vars=7, depth=2, num_sums_per_region=3)
        )
        assert g.validate().ok
        assert g.scope(g.root) == set(range(7))


class TestConfigParsing:
    def test_full_round_trip(self):
        text = (
            "# hmm config\n"
            "kind = hmm\n"
            "seq_len=16\n"
            "hidden_dim=8\n"
            "vocab_size=10\n"
            "tied=true\n"
            "seed=123\n"
        )
        cfg = parse_structure_config(text)
        assert cfg == StructureConfig(
            kind="hmm", seq_len=16, hidden_dim=8, vocab_size=10, tied=True, seed=123
        )

    def test_shape_parsing(self):
        cfg = parse_structure_config("kind=pd\nshape=16,16,3\nhidden_dim=2\n")
        assert cfg.shape == (16, 16, 3)

    @pytest.mark.parametrize(
        "text",
        [
            "shape=2,2\n",  # kind missing
            "kind=mystery\n",
            "kind=hmm\nseq_len=abc\n",
            "kind=hmm\nwhatever=1\n",
            "kind=hmm seq_len=2\n",  # not key=value
            "kind=hmm\ntied=perhaps\n",
        ],
    )
    def test_rejects_malformed(self, text):
        with pytest.raises(FormatError):
            parse_structure_config(text)

    def test_seed_override(self):
        cfg = parse_structure_config("kind=ratspn\nnum_vars=4\ndepth=1\nseed=5\n")
        a = dumps_model(build_structure(cfg))
        b = dumps_model(build_structure(cfg, seed=6))
        assert a != b
