import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from otoc_markov.gates import (
    W_G,
    CanonicalGate,
    GateClass,
    KernelScalars,
    classify_gate,
    derive_uv,
    haar_u4_scalars,
    kernel_from_gate,
    kernel_from_scalars,
    lambda2_spbc_dual,
    parse_gate,
)

unit = st.floats(0.0, 1.0, allow_nan=False)


@st.composite
def gates(draw):
    a = sorted((draw(unit), draw(unit), draw(unit)), reverse=True)
    return CanonicalGate(*a)


class TestCanonicalGate:
    def test_rejects_unordered(self):
        with pytest.raises(ValueError):
            CanonicalGate(0.2, 0.5, 0.1)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            CanonicalGate(1.2, 0.5, 0.1)
        with pytest.raises(ValueError):
            CanonicalGate(0.5, 0.3, -0.1)

    def test_snaps_near_one(self):
        g = CanonicalGate(1 - 1e-16, 1 - 5e-16, 0.2)
        assert g.ax == 1.0 and g.ay == 1.0
        assert classify_gate(g) is GateClass.DUAL_UNITARY


class TestDeriveUV:
    def test_identity_parameters(self):
        assert derive_uv(CanonicalGate(0, 0, 0)) == (3.0, 3.0)

    def test_swap_parameters(self):
        u, v = derive_uv(CanonicalGate(1, 1, 1))
        assert u == pytest.approx(-3.0, abs=1e-15) and v == pytest.approx(3.0, abs=1e-15)

    def test_xy_parameters(self):
        u, v = derive_uv(CanonicalGate(1, 1, 0))
        assert u == pytest.approx(-1.0, abs=1e-15) and v == pytest.approx(-1.0, abs=1e-15)


class TestKernel:
    def test_identity_gate_gives_identity_kernel(self):
        k = kernel_from_gate(CanonicalGate(0, 0, 0))
        assert np.array_equal(k.m, np.eye(4))
        assert k.is_identity

    def test_swap_gate_gives_permutation(self):
        k = kernel_from_gate(CanonicalGate(1, 1, 1))
        perm = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]])
        assert np.array_equal(k.m, perm)
        assert k.is_swap

    def test_u4_scalars(self):
        s = haar_u4_scalars()
        assert (s.u, s.v) == (0.0, -0.6)
        assert s.cplus == pytest.approx(0.8, abs=1e-15)
        assert s.cminus == pytest.approx(0.8, abs=1e-15)
        assert s.d == pytest.approx(-0.6, abs=1e-15)
        assert s.corner == pytest.approx(-0.6, abs=1e-15)

    @pytest.mark.parametrize("a", [(0.5, 0.3, 0.1), (1, 1, 0.2), (0.9, 0.4, 0.4), (0.3, 0.0, 0.0)])
    def test_matches_twirled_unitary(self, a):
        expected = oracles.twirled_kernel(oracles.canonical_unitary(*a))
        assert np.abs(kernel_from_gate(CanonicalGate(*a)).m - expected).max() < 1e-12

    def test_kernel_from_scalars_matches_formula(self):
        k = kernel_from_scalars(KernelScalars(0.4, -1.1))
        assert np.abs(k.m - oracles.kernel_formula(0.4, -1.1)).max() < 1e-15

    def test_scalars_validated(self):
        with pytest.raises(ValueError):
            KernelScalars(3.5, 0.0)

    def test_kernel_read_only(self):
        k = kernel_from_gate(W_G)
        with pytest.raises(ValueError):
            k.m[0, 0] = 2.0


class TestClassify:
    def test_dual_unitary(self):
        assert classify_gate(CanonicalGate(1, 1, 0.2)) is GateClass.DUAL_UNITARY

    def test_generic(self):
        assert classify_gate(W_G) is GateClass.GENERIC

    def test_swap(self):
        assert classify_gate(CanonicalGate(1, 1, 1)) is GateClass.SWAP

    def test_haar_effective(self):
        assert classify_gate(haar_u4_scalars()) is GateClass.HAAR_U4_EFFECTIVE

    def test_dual_unitary_grid(self):
        grid = np.linspace(0, 1, 21)
        for ax in grid:
            for ay in grid[grid <= ax]:
                for az in grid[grid <= ay][::4]:
                    g = CanonicalGate(ax, ay, az)
                    dual = abs(kernel_from_gate(g).scalars.cminus - 1) < 1e-12
                    assert dual == (ax == 1.0 and ay == 1.0)


class TestLambda2SpbcDual:
    def test_xy(self):
        assert lambda2_spbc_dual(0.0) == pytest.approx(1 / 3, abs=1e-15)

    def test_half(self):
        assert lambda2_spbc_dual(0.5) == pytest.approx(2 / 3, abs=1e-15)

    def test_fifth(self):
        assert lambda2_spbc_dual(0.2) == pytest.approx((2 - math.cos(0.2 * math.pi)) / 3, abs=1e-15)
        assert lambda2_spbc_dual(0.2) == pytest.approx(0.39697, abs=1e-4)

    def test_rejects_swap(self):
        with pytest.raises(ValueError):
            lambda2_spbc_dual(1.0)


class TestParseGate:
    def test_keywords(self):
        assert parse_gate("swap").is_swap
        assert parse_gate("XY").gate.as_tuple() == (1.0, 1.0, 0.0)
        assert parse_gate("wg").gate == W_G
        assert parse_gate("u4").scalars == haar_u4_scalars()

    def test_triple(self):
        assert parse_gate("0.5, 0.3, 0.1").gate == W_G

    @pytest.mark.parametrize("bad", ["0.1,0.2", "a,b,c", "", "0.1,0.5,0.2"])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            parse_gate(bad)


@given(gates())
def test_scalar_identities(g):
    s = kernel_from_gate(g).scalars
    assert s.cplus + s.cminus == pytest.approx((9 - s.v) / 6, abs=1e-14)
    assert s.cplus - s.cminus == pytest.approx(s.u / 3, abs=1e-14)


@given(gates())
def test_fixed_point_row_and_column(g):
    m = kernel_from_gate(g).m
    assert np.array_equal(m[0], [1, 0, 0, 0])
    assert np.array_equal(m[:, 0], [1, 0, 0, 0])


@given(gates())
def test_kernel_matches_formula(g):
    s = kernel_from_gate(g).scalars
    assert np.abs(kernel_from_gate(g).m - oracles.kernel_formula(s.u, s.v)).max() < 1e-15
