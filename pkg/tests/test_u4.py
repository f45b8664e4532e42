import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from otoc_markov import u4
from otoc_markov.gates import haar_u4_scalars, kernel_from_scalars
from otoc_markov.propagator import Protocol, evolve

U4 = kernel_from_scalars(haar_u4_scalars(), label="u4")


def enumerate_walls_obc(n, i, tau, q):
    """O(i, j, tau) for all j by expanding every wall trajectory separately.

    State: inclusive up-domain [lo, hi].  In each row a wall moves only if the
    gate of that row straddles it; it then steps out (weight q^2/(q^2+1)) or
    in (weight 1/(q^2+1)).  Empty domains die, the full chain freezes.
    """
    q = Fraction(q)
    out_w, in_w = q * q / (q * q + 1), 1 / (q * q + 1)
    result = [Fraction(0)] * n

    def straddles(site_in, site_out, row):
        if not 1 <= site_out <= n:
            return False
        a = min(site_in, site_out)
        return abs(site_in - site_out) == 1 and (a % 2 == 1) == (row % 2 == 1)

    def walk(lo, hi, row, w):
        if row > tau:
            for j in range(lo, hi + 1):
                result[j - 1] += w
            return
        if lo == 1 and hi == n:
            walk(lo, hi, row + 1, w)
            return
        left = [(lo, 1)]
        if straddles(lo, lo - 1, row):
            left = [(lo - 1, out_w), (lo + 1, in_w)]
        right = [(hi, 1)]
        if straddles(hi, hi + 1, row):
            right = [(hi + 1, out_w), (hi - 1, in_w)]
        for nlo, wl in left:
            for nhi, wr in right:
                if nlo > nhi:
                    continue
                walk(nlo, nhi, row + 1, w * wl * wr)

    walk(i, i, 1, q * q)
    return [v / (q * q - 1) for v in result]


class TestDomainWallDP:
    def test_out_of_cone_zero(self):
        table = u4.dw_otoc_table(10, 1, 4, 2, "obc")
        assert np.all(table[2, 3:] == 0)
        assert u4.dw_otoc(10, 1, 8, 5) == 0

    @pytest.mark.parametrize("n,tau,i", [(4, 3, 1), (6, 5, 2), (6, 6, 3)])
    def test_path_enumeration(self, n, tau, i):
        exact = u4.dw_otoc_table(n, i, tau, 2, "obc", exact=True)[tau]
        assert exact == enumerate_walls_obc(n, i, tau, 2)

    @pytest.mark.parametrize("bc", ["obc", "pbc"])
    @pytest.mark.parametrize("n,i", [(6, 1), (8, 1), (8, 4)])
    def test_matches_markov_chain(self, bc, n, i):
        table = u4.dw_otoc_table(n, i, 2 * n, 2, bc)
        series = evolve(Protocol.brick_wall(n, bc), U4, i, 2 * n).values
        assert np.abs(table - series).max() < 1e-10

    @pytest.mark.parametrize("bc", ["obc", "pbc"])
    def test_qutrit_chain(self, bc):
        table = u4.dw_otoc_table(6, 2, 12, 3, bc)
        ref = oracles.qudit_bw_otoc(6, 2, 12, 3, bc == "pbc")
        assert np.abs(table - ref).max() < 1e-12

    def test_exact_equals_float(self):
        exact = u4.dw_otoc_table(8, 3, 12, 3, "pbc", exact=True)
        approx = u4.dw_otoc_table(8, 3, 12, 3, "pbc")
        assert np.abs(np.array(exact, dtype=float) - approx).max() < 1e-12

    def test_relaxes_to_o_infinity(self):
        n, q = 6, 2
        table = u4.dw_otoc_table(n, 1, 200, q, "pbc")
        assert table[-1] == pytest.approx(np.full(n, 1 + 1 / (q ** (2 * n) - 1)), abs=1e-12)

    def test_rejects_bad_q(self):
        with pytest.raises(ValueError):
            u4.dw_otoc(6, 1, 2, 3, q=1)


class TestInfiniteChain:
    def test_outside_cone(self):
        assert u4.otoc_u4_infinite(9, 5) == 0

    def test_long_time_limit(self):
        assert u4.otoc_u4_infinite(2, 400) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("i", [21, 22])
    def test_matches_dp_before_boundaries(self, i):
        n, taus = 44, 14
        table = u4.dw_otoc_table(n, i, taus, 2, "obc", exact=True)
        for tau in range(1, taus + 1):
            for j in range(1, n + 1):
                dj = u4.delta_j_from_sites(i, j, tau)
                assert u4.otoc_u4_infinite(dj, tau, 2, exact=True) == table[tau][j - 1]

    def test_deviation_matches_direct(self):
        for tau in (5, 12, 30):
            for dj in (0, 1, 3):
                direct = u4.otoc_u4_infinite(dj, tau, 2, exact=True) - 1
                assert u4.otoc_u4_infinite_deviation(dj, tau, 2, exact=True) == direct

    def test_delta_parity(self):
        for tau in range(1, 9):
            for j in range(1, 20):
                assert u4.delta_j_from_sites(7, j, tau) % 2 == (tau - 1) % 2


class TestRate:
    def test_qubit_value(self):
        assert u4.u4_asymptotic_rate(2) == pytest.approx(2 * math.log(5 / 4), abs=1e-15)
        assert u4.u4_asymptotic_rate(2) == pytest.approx(-2 * math.log(haar_u4_scalars().cminus), abs=1e-15)

    def test_monotone_and_large_q(self):
        rates = [u4.u4_asymptotic_rate(q) for q in range(2, 40)]
        assert all(a < b for a, b in zip(rates, rates[1:]))
        q = 1e4
        assert u4.u4_asymptotic_rate(q) - 2 * math.log(q / 2) == pytest.approx(0, abs=1e-7)

    def test_rejects_small_q(self):
        with pytest.raises(ValueError):
            u4.u4_asymptotic_rate(1)


class TestClosedForms:
    def test_obc_out_of_cone(self):
        assert u4.obc_closed_form(8, 6, 3) == 0

    @pytest.mark.parametrize("q,n,taus", [(2, 8, 10), (3, 6, 8)])
    def test_obc_matches_dp(self, q, n, taus):
        table = u4.dw_otoc_table(n, 1, taus, q, "obc")
        for tau in range(taus + 1):
            for j in range(1, n + 1):
                val = u4.obc_closed_form(n, j, tau, q, check=False)
                assert val == pytest.approx(table[tau, j - 1], abs=1e-9)

    def test_pbc_out_of_cone(self):
        assert u4.pbc_recursion(8, 5, 2) == 0

    def test_pbc_matches_markov(self):
        n = 8
        series = evolve(Protocol.brick_wall(n, "pbc"), U4, 1, 14).values
        for tau in range(15):
            for j in range(1, n + 1):
                assert u4.pbc_recursion(n, j, tau, 2, check=False) == pytest.approx(
                    series[tau, j - 1], abs=1e-10)

    def test_pbc_matches_dp(self):
        table = u4.dw_otoc_table(6, 1, 8, 2, "pbc")
        for tau in range(9):
            for j in range(1, 7):
                assert u4.pbc_recursion(6, j, tau, 2) == pytest.approx(table[tau, j - 1], abs=1e-9)

    def test_disagreement_raises(self, monkeypatch):
        monkeypatch.setattr(u4, "_H", lambda t, n: 0)
        with pytest.raises(u4.FormulaInterpretationError):
            for tau in range(4, 12):
                u4.obc_closed_form(6, 2, tau, 2)

    @pytest.mark.parametrize("k", range(1, 7))
    @pytest.mark.parametrize("n", [2, 4, 6])
    def test_first_return_memo_vs_literal(self, k, n):
        assert u4.first_return_counts(k, n) == u4.first_return_counts_literal(k, n)


class TestBinomialCdf:
    def test_edges(self):
        assert u4.binom_cdf(5, -1, 0.3) == 0
        assert u4.binom_cdf(5, 5, 0.3) == 1
        assert u4.binom_cdf(5, 1.5, Fraction(1, 5), exact=True) == Fraction(4, 5) ** 5 + 5 * Fraction(1, 5) * Fraction(4, 5) ** 4

    @given(st.integers(1, 30), st.integers(-2, 30), st.floats(0.01, 0.49))
    def test_monotone_in_a(self, n, a, p):
        assert u4.binom_cdf(n, a, p) <= u4.binom_cdf(n, a + 1, p) + 1e-15

    @given(st.integers(1, 30), st.integers(0, 30), st.floats(0.01, 0.49))
    def test_monotone_in_n(self, n, a, p):
        # more trials make reaching at most a successes less likely
        assert u4.binom_cdf(n + 1, a, p) <= u4.binom_cdf(n, a, p) + 1e-15
