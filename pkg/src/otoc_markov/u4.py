"""Exact OTOC for brick-wall circuits of Haar-random two-qudit gates.

After averaging, every gate carries an Ising spin (up: the gate output is a
uniformly random non-identity operator, down: identity).  A single operator
on site ``i`` produces one up-domain whose two walls perform random walks
with one factor ``K = q / (q^2 + 1)`` per wall and row; the readout weighs a
domain covering ``m`` qudits with ``(q^2)^(m/2)``.  We store the weight as
``w_hat = w * q^(2m)`` so each wall step multiplies by ``K q = q^2/(q^2+1)``
(outward) or ``K / q = 1/(q^2+1)`` (inward) and every number stays O(1):

    O(i, j, tau) = (1 / (q^2 - 1)) * sum over domains covering j of w_hat

which equals ``q^2/(q^4-1) * sum K^int (q^2)^width`` with the first-row
interaction absorbed into the prefactor.  A domain that covers the whole
chain is frozen.  Time ``tau`` counts rows (brick-wall layers); one period
is two rows.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .propagator import Boundary, Protocol

__all__ = [
    "FormulaInterpretationError",
    "dw_otoc",
    "dw_otoc_table",
    "binom_cdf",
    "delta_j_from_sites",
    "otoc_u4_infinite",
    "otoc_u4_infinite_deviation",
    "u4_asymptotic_rate",
    "obc_closed_form",
    "pbc_recursion",
    "first_return_counts",
    "first_return_counts_literal",
]


class FormulaInterpretationError(ArithmeticError):
    """A closed form disagrees with the domain-wall dynamic program."""


def _row_partners(protocol):
    n = protocol.n
    rows = []
    for layer in protocol.layers:
        partner = [0] * (n + 2)
        for a, b in layer:
            partner[a] = b
            partner[b] = a
        rows.append(partner)
    return rows


def _wrap(s, n):
    return (s - 1) % n + 1


def _step(states, partner, n, pbc, grow, shrink):
    """One row of wall moves.  ``states`` maps (L, m) -> weight."""
    out = {}

    def add(key, w):
        out[key] = out.get(key, 0) + w

    for (L, m), w in states.items():
        if m == n:
            add((L, m), w)
            continue
        R = _wrap(L + m - 1, n) if pbc else L + m - 1
        left_out = _wrap(L - 1, n) if pbc else L - 1
        right_out = _wrap(R + 1, n) if pbc else R + 1
        moves = []
        if left_out >= 1 and partner[L] == left_out:
            moves.append("L")
        if right_out <= n and partner[R] == right_out and not (m == n - 1 and moves):
            moves.append("R")
        options = [((L, m), w)]
        for side in moves:
            nxt = []
            for (l0, m0), w0 in options:
                if side == "L":
                    nxt.append(((_wrap(l0 - 1, n) if pbc else l0 - 1, m0 + 1), w0 * grow))
                    nxt.append(((_wrap(l0 + 1, n) if pbc else l0 + 1, m0 - 1), w0 * shrink))
                else:
                    nxt.append(((l0, m0 + 1), w0 * grow))
                    nxt.append(((l0, m0 - 1), w0 * shrink))
            options = nxt
        for (l1, m1), w1 in options:
            if m1 <= 0:
                continue
            if m1 >= n:
                add((1, n), w1)
            else:
                add((l1, m1), w1)
    return out


def _covered(L, m, j, n, pbc):
    off = (j - L) % n if pbc else j - L
    return 0 <= off < m


def _weights(q, exact):
    if exact:
        q = Fraction(q)
        return q * q / (q * q + 1), 1 / (q * q + 1), q * q, 1 / (q * q - 1)
    q = float(q)
    return q * q / (q * q + 1), 1.0 / (q * q + 1), q * q, 1.0 / (q * q - 1)


def _check_args(n, i, q, boundary):
    if q < 2 or int(q) != q:
        raise ValueError(f"q must be an integer >= 2, got {q}")
    if not 1 <= i <= n:
        raise ValueError(f"site i={i} out of range 1..{n}")
    return Protocol.brick_wall(n, Boundary(boundary))


def dw_otoc_table(n: int, i: int, tau_max: int, q: int = 2, boundary="obc",
                  exact: bool = False):
    """O(i, j, tau) for all j = 1..n and tau = 0..tau_max.

    Returns a ``(tau_max + 1, n)`` float array, or a nested list of
    :class:`~fractions.Fraction` when ``exact``.
    """
    protocol = _check_args(n, i, q, boundary)
    pbc = protocol.boundary is Boundary.PBC
    rows = _row_partners(protocol)
    grow, shrink, w0, pref = _weights(q, exact)
    states = {(i, 1): w0}
    table = []
    for tau in range(tau_max + 1):
        if tau > 0:
            states = _step(states, rows[(tau - 1) % len(rows)], n, pbc, grow, shrink)
        row = [0 * w0] * n
        for (L, m), w in states.items():
            for j in range(1, n + 1):
                if _covered(L, m, j, n, pbc):
                    row[j - 1] += w
        table.append([v * pref for v in row])
    if exact:
        return table
    return np.array(table, dtype=float)


def dw_otoc(n: int, i: int, j: int, tau: int, q: int = 2, boundary="obc",
            exact: bool = False):
    """Domain-wall evaluation of O(i, j, tau) for a Haar brick-wall circuit.

    Outside the causal cone the result is exactly zero.
    """
    if not 1 <= j <= n:
        raise ValueError(f"site j={j} out of range 1..{n}")
    if tau < 0:
        raise ValueError("tau must be >= 0")
    return dw_otoc_table(n, i, tau, q, boundary, exact)[tau][j - 1]


# -- infinite system -------------------------------------------------------

def binom_cdf(n: int, a, p, exact: bool = False):
    """``g(n, a, p) = sum_{k<=a} C(n, k) (1-p)^(n-k) p^k`` with ``a`` floored."""
    a = math.floor(a)
    one = Fraction(1) if exact else 1.0
    if a < 0:
        return 0 * one
    if a >= n:
        return one
    if exact:
        p = Fraction(p)
        return sum(math.comb(n, k) * (1 - p) ** (n - k) * p**k for k in range(a + 1))
    # rounding can push the float sum a few ulps past 1
    return min(1.0, sum(math.comb(n, k) * (1 - p) ** (n - k) * p**k for k in range(a + 1)))


def _binom_sf(n, a, p, exact):
    """``1 - g(n, a, p)`` summed directly over the upper tail."""
    a = math.floor(a)
    one = Fraction(1) if exact else 1.0
    if a < 0:
        return one
    if a >= n:
        return 0 * one
    if exact:
        p = Fraction(p)
    return sum(math.comb(n, k) * (1 - p) ** (n - k) * p**k for k in range(a + 1, n + 1))


def _zeta_p(q, exact):
    if exact:
        q = Fraction(q)
    else:
        q = float(q)
    return q**4 / (q**4 - 1), 1 / (q * q + 1)


def delta_j_from_sites(i: int, j: int, tau: int) -> int:
    """Gate-lattice distance entering :func:`otoc_u4_infinite`.

    Row ``tau`` of the brick wall couples (odd, odd + 1) when ``tau`` is odd and
    (even, even + 1) otherwise.  The distance is measured between the centres
    of the row-``tau`` gate holding ``j`` and the row-1 gate holding ``i``, in
    units of sites; it always has the parity of ``tau - 1``.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    a0 = i if i % 2 == 1 else i - 1
    if tau % 2 == 1:
        a = j if j % 2 == 1 else j - 1
    else:
        a = j if j % 2 == 0 else j - 1
    return abs(a - a0)


def otoc_u4_infinite(delta_j: int, tau: int, q: int = 2, exact: bool = False):
    if tau < 1:
        raise ValueError("tau must be >= 1")
    dj = abs(delta_j)
    zeta, p = _zeta_p(q, exact)
    g = binom_cdf
    t = tau - 1
    first = g(t, (tau - dj - 1) / 2, p, exact) * g(t, (tau + dj - 1) / 2, p, exact)
    second = g(t, (tau - dj - 3) / 2, p, exact) * g(t, (tau + dj - 3) / 2, p, exact)
    return zeta * first + (1 - zeta) * second


def otoc_u4_infinite_deviation(delta_j: int, tau: int, q: int = 2, exact: bool = False):
    """``O - 1`` of :func:`otoc_u4_infinite` without cancellation.

    Writing ``g = 1 - h`` gives
    ``O - 1 = -zeta (h1 + h2 - h1 h2) - (1 - zeta) (h3 + h4 - h3 h4)``.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    dj = abs(delta_j)
    zeta, p = _zeta_p(q, exact)
    t = tau - 1
    h1 = _binom_sf(t, (tau - dj - 1) / 2, p, exact)
    h2 = _binom_sf(t, (tau + dj - 1) / 2, p, exact)
    h3 = _binom_sf(t, (tau - dj - 3) / 2, p, exact)
    h4 = _binom_sf(t, (tau + dj - 3) / 2, p, exact)
    return -zeta * (h1 + h2 - h1 * h2) - (1 - zeta) * (h3 + h4 - h3 * h4)


def u4_asymptotic_rate(q) -> float:
    """Late-time relaxation rate per period, ``2 ln((1 + q^2) / (2 q))``."""
    if q < 2:
        raise ValueError(f"q must be >= 2, got {q}")
    return 2.0 * math.log((1.0 + q * q) / (2.0 * q))


# -- finite OBC closed form ----------------------------------------------

def _C(n, k):
    if k != int(k):
        return 0
    k = int(k)
    if n < 0 or k < 0 or k > n:
        return 0
    return math.comb(n, k)


def _p_first(k, u):
    """Walks 0 -> u in ``k`` steps that stay strictly positive afterwards."""
    if k <= 0 or u <= 0 or (k - u) % 2:
        return 0
    return Fraction(u, k) * _C(k, (k - u) // 2)


def _delta_paths(k, jj, n):
    """Walks n -> jj in ``k`` steps that never touch 0."""
    if k < 0 or (k - n + jj) % 2:
        return 0
    return _C(k, (k - n + jj) // 2) - _C(k, (k - n - jj) // 2)


@lru_cache(maxsize=None)
def first_return_counts(k: int, n: int) -> int:
    """Excursions n -> n of length ``2k`` that avoid 0 and first return at the end.

    Memoized first-passage decomposition ``F(k) = A(k) - sum F(r) A(k-r)``
    with ``A(r)`` the unconstrained-return count.
    """
    if k <= 0:
        return 0
    total = _delta_paths(2 * k, n, n)
    for r in range(1, k):
        total -= first_return_counts(r, n) * _delta_paths(2 * (k - r), n, n)
    return total


def _compositions(k):
    if k == 0:
        yield ()
        return
    for first in range(1, k + 1):
        for rest in _compositions(k - first):
            yield (first,) + rest


def first_return_counts_literal(k: int, n: int) -> int:
    """Same count via the signed sum over all ``2^(k-1)`` compositions of ``k``."""
    total = 0
    for comp in _compositions(k):
        term = 1
        for r in comp:
            term *= -_delta_paths(2 * r, n, n)
        total -= term
    return total


def _H(t, n):
    """First passage of the wall at ``n`` at walk time ``t``."""
    if t <= 0 or t % 2 or t < n:
        return 0
    total = _p_first(t, n)
    for jj in range(n // 2, t // 2):
        total -= _p_first(2 * jj, n) * first_return_counts((t - 2 * jj) // 2, n)
    return total


def _closed_form_prefactors(q):
    q = Fraction(q)
    return q * q / (q**4 - 1), q / (q * q + 1)


def _verify(value, n, j, tau, q, boundary, tol):
    ref = dw_otoc(n, 1, j, tau, q, boundary, exact=True)
    if abs(float(value - ref)) > tol * max(1.0, abs(float(ref))):
        raise FormulaInterpretationError(
            f"{boundary} closed form {float(value)!r} != domain-wall value {float(ref)!r} "
            f"at n={n}, j={j}, tau={tau}, q={q}")


def obc_closed_form(n: int, j: int, tau: int, q: int = 2, *, check: bool = True,
                    tol: float = 1e-9) -> float:
    """O(1, j, tau) for an open chain from the first-passage path counts.

    The sum splits into domains that have filled the whole chain at some row
    ``tau0 <= tau`` and domains that never did.  With ``check`` the result is
    compared against :func:`dw_otoc`.
    """
    if n % 2 or n < 2:
        raise ValueError(f"closed form needs even n, got {n}")
    if not 1 <= j <= n or tau < 0:
        raise ValueError("invalid (j, tau)")
    if tau == 0:
        return 4.0 / 3.0 if j == 1 and q == 2 else float(Fraction(q * q, q * q - 1)) * (j == 1)
    pref, K = _closed_form_prefactors(q)
    qq = Fraction(q)
    full = sum(K ** (t0 - 1) * _H(t0 + 1, n) for t0 in range(1, tau + 1))
    value = pref * qq**n * full
    partial = 0
    for u in range(max(j, 1), n):
        paths = _p_first(tau + 1, u)
        paths -= sum(_H(t0, n) * _delta_paths(tau + 1 - t0, u, n) for t0 in range(1, tau + 1))
        partial += qq**u * paths
    value += pref * K ** (tau - 1) * partial
    if check:
        _verify(value, n, j, tau, q, "obc", tol)
    return float(value)


# -- finite PBC recursion --------------------------------------------------

def _N(t, u0, v0, u1, v1):
    """Non-intersecting wall pairs (u0, v0) -> (u1, v1) over ``t - 1`` rows."""
    s = t - 1
    return _C(s, u1 - u0) * _C(s, v1 - v0) - _C(s, v1 - u0) * _C(s, u1 - v0)


def _make_nhat(n):
    h = n // 2

    @lru_cache(maxsize=None)
    def nhat(tc, u1):
        if tc < h or u1 < 0 or u1 > tc - h:
            return 0
        if tc == h:
            return 1
        total = _N(tc, 0, 1, u1, u1 + h)
        for t0 in range(h, tc):
            for up in range(0, t0 - h + 1):
                total -= nhat(t0, up) * _N(tc - t0 + 1, up, up + h, u1, u1 + h)
        return total

    return nhat


def pbc_recursion(n: int, j: int, tau: int, q: int = 2, *, check: bool = True,
                  tol: float = 1e-9) -> float:
    """O(1, j, tau) on a ring from the recursive count of wall pairs.

    Walls are tracked in sheared coordinates (each row a wall either stays or
    advances by one), left wall ``u`` and right wall ``v`` with the domain
    spanning ``v - u`` gates; ``nhat`` counts pairs that reach the full
    width ``n/2`` for the first time.
    """
    if n % 2 or n < 4:
        raise ValueError(f"recursion needs even n >= 4, got {n}")
    if not 1 <= j <= n or tau < 0:
        raise ValueError("invalid (j, tau)")
    if tau == 0:
        return float(Fraction(q * q, q * q - 1)) * (j == 1)
    h = n // 2
    pref, K = _closed_form_prefactors(q)
    qq = Fraction(q)
    nhat = _make_nhat(n)
    full = 0
    for tc in range(h, tau):
        for u in range(0, tc - h + 1):
            full += K ** (2 * tc - 2) * nhat(tc, u)
    value = qq**n * pref * full
    partial = 0
    for u in range(0, tau):
        vb = _vb(u, tau, j, n)
        for v in range(vb, u + h + 1):
            paths = _N(tau, 0, 1, u, v)
            for t0 in range(h, tau):
                for up in range(0, t0 - h + 1):
                    paths -= nhat(t0, up) * _N(tau - t0 + 1, up, up + h, u, v)
            partial += qq ** (2 * (v - u)) * paths
    value += pref * K ** (2 * tau - 2) * partial
    if check:
        _verify(value, n, j, tau, q, "pbc", tol)
    return float(value)


def _vb(u, tau, j, n):
    # smallest right wall v whose domain covers site j
    left_site = 2 * u - tau + 2
    off = (j - left_site) % n
    return u + (off + 2) // 2
