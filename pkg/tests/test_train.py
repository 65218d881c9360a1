"""Training loop behavior: both EM modes, determinism, and threading."""
import numpy as np
import pytest

from pcirc.compiler import CompileConfig, compile_circuit
from pcirc.errors import UsageError
from pcirc.train import TrainConfig, TrainResult, train

from circuitgen import random_batch, random_circuit


def make_case(seed=5, samples=80):
    rng = np.random.default_rng(seed)
    g = random_circuit(rng, max_vars=5, max_nodes=120)
    c = compile_circuit(g, CompileConfig(block_size=2))
    data = random_batch(rng, g, samples, p_missing=0.1)
    return c, data


class TestConfig:
    def test_defaults_valid(self):
        cfg = TrainConfig()
        assert cfg.mode == "full"

    def test_rejects_bad_fields(self):
        for kwargs in (
            dict(epochs=0),
            dict(batch_size=0),
            dict(mode="sgd"),
            dict(step_size=0.0),
            dict(step_size=1.5),
            dict(pseudocount=-1.0),
            dict(threads=0),
        ):
            with pytest.raises(UsageError):
                TrainConfig(**kwargs)


class TestFullMode:
    def test_ll_improves(self):
        c, data = make_case()
        res = train(c, data, TrainConfig(epochs=6, pseudocount=1e-6, threads=1))
        assert len(res.epoch_log_likelihood) == 6
        assert res.epoch_log_likelihood[-1] > res.epoch_log_likelihood[0]

    def test_monotone_within_tolerance(self):
        c, data = make_case(seed=9)
        res = train(c, data, TrainConfig(epochs=8, pseudocount=1e-6, threads=1))
        ll = res.epoch_log_likelihood
        assert all(b >= a - 1e-6 for a, b in zip(ll, ll[1:]))

    def test_batch_size_clipped_with_note(self):
        c, data = make_case(samples=10)
        res = train(c, data, TrainConfig(batch_size=4096, threads=1))
        assert any("clipped" in n for n in res.notes)

    def test_batching_does_not_change_result(self):
        c1, data = make_case(seed=12)
        c2, _ = make_case(seed=12)
        t1 = train(c1, data, TrainConfig(epochs=2, batch_size=7, threads=1))
        t2 = train(c2, data, TrainConfig(epochs=2, batch_size=80, threads=1))
        np.testing.assert_allclose(c1.theta, c2.theta, rtol=1e-12)
        np.testing.assert_allclose(
            t1.epoch_log_likelihood, t2.epoch_log_likelihood, rtol=1e-12
        )


class TestMiniMode:
    def test_parameters_stay_on_simplex(self):
        c, data = make_case(seed=3)
        train(
            c,
            data,
            TrainConfig(
                mode="mini", epochs=3, batch_size=16, step_size=0.05,
                pseudocount=1e-6, threads=1,
            ),
        )
        sums = np.add.reduceat(c.theta[c.group_idx], c.group_off[:-1])
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)

    def test_shuffle_is_seeded(self):
        cfg = dict(mode="mini", epochs=2, batch_size=16, step_size=0.1, threads=1)
        c1, data = make_case(seed=7)
        c2, _ = make_case(seed=7)
        c3, _ = make_case(seed=7)
        train(c1, data, TrainConfig(seed=1, **cfg))
        train(c2, data, TrainConfig(seed=1, **cfg))
        train(c3, data, TrainConfig(seed=2, **cfg))
        np.testing.assert_array_equal(c1.theta, c2.theta)
        assert not np.array_equal(c1.theta, c3.theta)


class TestThreads:
    def test_threaded_result_matches_serial(self):
        c1, data = make_case(seed=15, samples=120)
        c2, _ = make_case(seed=15, samples=120)
        r1 = train(c1, data, TrainConfig(epochs=3, pseudocount=1e-6, threads=1))
        r2 = train(c2, data, TrainConfig(epochs=3, pseudocount=1e-6, threads=4))
        np.testing.assert_allclose(c1.theta, c2.theta, rtol=1e-13)
        np.testing.assert_allclose(
            r1.epoch_log_likelihood, r2.epoch_log_likelihood, rtol=1e-13
        )


class TestResult:
    def test_log_lines_shape(self):
        res = TrainResult(
            epoch_log_likelihood=[-3.25, -3.0], epoch_seconds=[0.5, 0.25]
        )
        lines = res.log_lines()
        assert lines[0] == "epoch=1 ll=-3.2500000000 seconds=0.500"
        assert lines[1].startswith("epoch=2 ll=-3.0000000000")

    def test_empty_data_rejected(self):
        c, _ = make_case()
        with pytest.raises(UsageError):
            train(c, np.zeros((0, 5), dtype=np.int64))
