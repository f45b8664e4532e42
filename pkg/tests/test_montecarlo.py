import math

import numpy as np
import pytest
import scipy.stats

import oracles
from otoc_markov import montecarlo as mc
from otoc_markov.gates import W_G, CanonicalGate, kernel_from_gate
from otoc_markov.propagator import Protocol, evolve
from otoc_markov.series import o_infinity


class TestBuildW:
    @pytest.mark.parametrize("a", [(0.5, 0.3, 0.1), (1, 1, 0.2), (0.9, 0.9, 0.4)])
    def test_matches_matrix_exponential(self, a):
        assert np.abs(mc.build_w(CanonicalGate(*a)) - oracles.canonical_unitary(*a)).max() < 1e-12

    def test_identity(self):
        assert np.abs(mc.build_w(CanonicalGate(0, 0, 0)) - np.eye(4)).max() < 1e-15

    def test_swap_up_to_phase(self):
        w = mc.build_w(CanonicalGate(1, 1, 1))
        swap = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]])
        phase = w[0, 0]
        assert abs(abs(phase) - 1) < 1e-15
        assert np.abs(w / phase - swap).max() < 1e-15


class TestHaar:
    def test_unitary(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            v = mc.sample_haar_u2(rng)
            assert np.abs(v @ v.conj().T - np.eye(2)).max() < 1e-12

    def test_second_moment(self):
        rng = np.random.default_rng(1)
        samples = np.array([np.abs(mc.sample_haar_u2(rng)) ** 2 for _ in range(100_000)])
        mean = samples.mean(axis=0)
        err = samples.std(axis=0) / math.sqrt(len(samples))
        assert np.all(np.abs(mean - 0.5) < 3 * err)

    def test_left_invariance(self):
        rng = np.random.default_rng(2)
        fixed = oracles.canonical_unitary(0.3, 0.2, 0.1)[:2, :2]
        fixed, _ = np.linalg.qr(fixed)
        a = [np.angle(mc.sample_haar_u2(rng)[0, 0]) for _ in range(5000)]
        b = [np.angle((fixed @ mc.sample_haar_u2(rng))[0, 0]) for _ in range(5000)]
        assert scipy.stats.ks_2samp(a, b).pvalue > 1e-3


class TestTransferMatrix:
    def test_orthogonal_with_fixed_identity(self):
        rng = np.random.default_rng(3)
        u = mc.build_w(W_G) @ np.kron(mc.sample_haar_u2(rng), mc.sample_haar_u2(rng))
        r = mc.pauli_transfer_matrix(u)
        assert np.abs(r @ r.T - np.eye(16)).max() < 1e-12
        assert r[0, 0] == pytest.approx(1.0, abs=1e-15)
        assert np.abs(r[0, 1:]).max() < 1e-15 and np.abs(r[1:, 0]).max() < 1e-15


class TestRealization:
    def test_horizon_zero(self):
        s = mc.run_realization(Protocol.brick_wall(6), W_G, "diffx_difft", 3, 0, seed=1)
        expected = np.zeros(6)
        expected[2] = 4 / 3
        assert np.array_equal(s.values[0], expected)

    def test_deterministic_by_seed(self):
        proto = Protocol.brick_wall(6)
        a = mc.run_realization(proto, W_G, "homx_difft", 1, 8, seed=5)
        b = mc.run_realization(proto, W_G, "homx_difft", 1, 8, seed=5)
        c = mc.run_realization(proto, W_G, "homx_difft", 1, 8, seed=6)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    @pytest.mark.parametrize("scenario,expected", [
        ("diffx_difft", lambda step, tick, site: (step, site)),
        ("diffx_homt", lambda step, tick, site: (0, site)),
        ("homx_difft", lambda step, tick, site: (tick, 0)),
        ("homx_homt", lambda step, tick, site: (0, 0)),
    ])
    def test_key_projection(self, monkeypatch, scenario, expected):
        seen = []
        real = mc._site_unitary

        def spy(seed, tkey, skey):
            seen.append((tkey, skey))
            return real(seed, tkey, skey)

        monkeypatch.setattr(mc, "_site_unitary", spy)
        proto = Protocol.brick_wall(4, "obc")
        mc.run_realization(proto, W_G, scenario, 1, 4, seed=0)
        want = set()
        step = 0
        for tick in range(4):
            for p, q in proto.layers[tick % 2]:
                want.add(expected(step, tick, p))
                want.add(expected(step, tick, q))
                step += 1
        assert set(seen) == want

    def test_per_step_option(self, monkeypatch):
        seen = []
        real = mc._site_unitary
        monkeypatch.setattr(mc, "_site_unitary", lambda s, t, x: seen.append((t, x)) or real(s, t, x))
        mc.run_realization(Protocol.brick_wall(4, "obc"), W_G, "homx_difft", 1, 2, seed=0,
                           homx_per_step=True)
        assert {t for t, _ in seen} == {0, 1, 2}

    def test_norm_drift_detected(self, monkeypatch):
        real = mc.pauli_transfer_matrix
        monkeypatch.setattr(mc, "pauli_transfer_matrix", lambda u: 1.01 * real(u))
        with pytest.raises(mc.NormDriftError):
            mc.run_realization(Protocol.brick_wall(4), W_G, "diffx_difft", 1, 2, seed=0)

    def test_causality(self):
        s = mc.run_realization(Protocol.brick_wall(10, "obc"), W_G, "diffx_difft", 1, 3, seed=2)
        assert np.all(s.values[3, 4:] == 0.0)
        assert s.values[3, 3] > 0

    def test_budget(self):
        with pytest.raises(ValueError):
            mc.run_realization(Protocol.brick_wall(16), W_G, "diffx_difft", 1, 1, seed=0)

    def test_averaged_protocol_rejected(self):
        with pytest.raises(ValueError):
            mc.run_realization(Protocol.rnn_averaged(4), W_G, "diffx_difft", 1, 1, seed=0)

    def test_long_time_value(self):
        s = mc.run_realization(Protocol.brick_wall(4), W_G, "diffx_difft", 1, 400, seed=0)
        # a single realization fluctuates around O_inf, with fluctuations shrinking in 4^n
        assert np.abs(s.values[-50:].mean(axis=0) - o_infinity(4)).max() < 0.05


class TestEnsemble:
    @pytest.mark.parametrize("bc", ["obc", "pbc"])
    def test_mean_matches_markov(self, bc):
        n, ticks = 4, 10
        proto = Protocol.brick_wall(n, bc)
        mean, err = mc.run_ensemble(proto, W_G, "diffx_difft", 1, ticks, range(200))
        markov = evolve(proto, kernel_from_gate(W_G), 1, ticks).values
        live = err > 0
        z = np.abs(mean - markov)[live] / err[live]
        assert z.max() < 3.5
        assert np.abs(mean - markov)[~live].max() < 1e-12

    def test_letter_independent_average(self):
        n, ticks = 4, 6
        proto = Protocol.brick_wall(n, "pbc")
        mean, err = mc.run_ensemble(proto, W_G, "diffx_difft", 2, ticks, range(200), letter="Z")
        markov = evolve(proto, kernel_from_gate(W_G), 2, ticks).values
        live = err > 0
        assert (np.abs(mean - markov)[live] / err[live]).max() < 3.5

    def test_needs_two_seeds(self):
        with pytest.raises(ValueError):
            mc.run_ensemble(Protocol.brick_wall(4), W_G, "diffx_difft", 1, 2, [0])


def test_scenario_parse():
    assert mc.RandomnessScenario.parse("hom.x/diff.t") is mc.RandomnessScenario.HOMX_DIFFT
    assert mc.RandomnessScenario.parse("DIFF.X/HOM.T") is mc.RandomnessScenario.DIFFX_HOMT
    assert len(mc.RandomnessScenario) == 4
