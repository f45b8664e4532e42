"""Matrix-free propagation of the averaged OTOC vector.

The vector has ``2**n`` components indexed by bit strings, with bit ``j-1``
of the integer index storing ``s_j``.  O(i, j, t) is the component at index
``2**(j-1)``.  Sites are 1-based throughout the public API.

Time is counted in integer ticks: one brick-wall layer is one tick (two
ticks per period); staircase, custom and averaged protocols advance one
period per tick unless gate-resolved sampling is requested.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from ._kernels import (apply_pair_inplace, axpy_inplace, popcount_weighted_sum,
                       shift_nonzero_inplace)
from .gates import GateKernel
from .series import OtocSeries, o_infinity

__all__ = [
    "Kind",
    "Boundary",
    "Protocol",
    "PhiVector",
    "ResourceGuardError",
    "max_qubits",
    "initial_phi",
    "stationary_phi",
    "initial_deviation",
    "apply_pair_kernel",
    "apply_layer",
    "apply_period",
    "apply_averaged_step",
    "apply_tick",
    "read_otoc",
    "read_all",
    "inverse_map",
    "remove_fixed_component",
    "evolve",
]

DEFAULT_MAX_N = 28


class ResourceGuardError(RuntimeError):
    pass


def max_qubits() -> int:
    return int(os.environ.get("OTOC_MAX_N", DEFAULT_MAX_N))


class Kind(str, enum.Enum):
    BW = "bw"
    S = "s"
    CUSTOM = "custom"
    RNN = "rnn"
    ALL_TO_ALL = "all"


class Boundary(str, enum.Enum):
    OBC = "obc"
    PBC = "pbc"


def _nn_pairs(n, boundary):
    pairs = [(k, k + 1) for k in range(1, n)]
    if boundary is Boundary.PBC and n > 2:
        pairs.append((n, 1))
    return pairs


def _canon(pair):
    a, b = pair
    return (min(a, b), max(a, b))


@dataclass(frozen=True)
class Protocol:
    """Gate ordering of one period plus boundary condition.

    For deterministic kinds ``layers`` lists the gates of one period grouped
    into ticks; gates inside a layer are applied in the listed order.  For
    the averaged kinds ``layers`` holds a single layer with every pair that
    the uniform average runs over.
    """

    kind: Kind
    boundary: Boundary
    n: int
    layers: tuple = field(repr=False)

    @classmethod
    def brick_wall(cls, n, boundary=Boundary.PBC):
        boundary = Boundary(boundary)
        if n < 2:
            raise ValueError("need n >= 2")
        if boundary is Boundary.PBC and n % 2:
            raise ValueError(f"brick-wall PBC needs even n, got {n}")
        pairs = _nn_pairs(n, boundary)
        odd = tuple(p for p in pairs if p[0] % 2 == 1)
        even = tuple(p for p in pairs if p[0] % 2 == 0)
        return cls(Kind.BW, boundary, n, (odd, even))

    @classmethod
    def staircase(cls, n, boundary=Boundary.PBC):
        boundary = Boundary(boundary)
        if n < 2:
            raise ValueError("need n >= 2")
        return cls(Kind.S, boundary, n, (tuple(_nn_pairs(n, boundary)),))

    @classmethod
    def custom(cls, n, order, boundary=Boundary.OBC):
        """Sequential period applying the nearest-neighbour pairs in ``order``."""
        boundary = Boundary(boundary)
        order = tuple((int(a), int(b)) for a, b in order)
        want = sorted(_canon(p) for p in _nn_pairs(n, boundary))
        if sorted(_canon(p) for p in order) != want:
            raise ValueError("custom order must apply every nearest-neighbour pair exactly once")
        return cls(Kind.CUSTOM, boundary, n, (order,))

    @classmethod
    def random_permutation(cls, n, rng, boundary=Boundary.OBC):
        pairs = _nn_pairs(n, Boundary(boundary))
        perm = rng.permutation(len(pairs))
        return cls.custom(n, [pairs[k] for k in perm], boundary)

    @classmethod
    def rnn_averaged(cls, n, boundary=Boundary.PBC):
        boundary = Boundary(boundary)
        return cls(Kind.RNN, boundary, n, (tuple(_nn_pairs(n, boundary)),))

    @classmethod
    def all_to_all_averaged(cls, n):
        pairs = tuple(combinations(range(1, n + 1), 2))
        return cls(Kind.ALL_TO_ALL, Boundary.OBC, n, (pairs,))

    @classmethod
    def build(cls, kind, n, boundary="pbc"):
        kind = Kind(kind)
        if kind is Kind.BW:
            return cls.brick_wall(n, boundary)
        if kind is Kind.S:
            return cls.staircase(n, boundary)
        if kind is Kind.RNN:
            return cls.rnn_averaged(n, boundary)
        if kind is Kind.ALL_TO_ALL:
            return cls.all_to_all_averaged(n)
        raise ValueError("custom protocols need an explicit order; use Protocol.custom")

    @property
    def deterministic(self) -> bool:
        return self.kind in (Kind.BW, Kind.S, Kind.CUSTOM)

    @property
    def ticks_per_period(self) -> int:
        return len(self.layers) if self.deterministic else 1

    @property
    def pairs(self) -> tuple:
        return tuple(p for layer in self.layers for p in layer)

    @property
    def steps_per_unit(self) -> int:
        """``L``: elementary steps per unit of time."""
        return len(self.pairs)

    def describe(self) -> dict:
        out = {"kind": self.kind.value, "boundary": self.boundary.value, "n": self.n}
        if self.kind is Kind.CUSTOM:
            out["order"] = [list(p) for p in self.layers[0]]
        return out


@dataclass
class PhiVector:
    n: int
    data: np.ndarray
    tick: int = 0

    def copy(self) -> "PhiVector":
        return PhiVector(self.n, self.data.copy(), self.tick)


def _guard(n, limit=None):
    limit = max_qubits() if limit is None else limit
    if n > limit:
        raise ResourceGuardError(
            f"n={n} exceeds the configured maximum of {limit} qubits "
            f"({8 * 2**n / 2**30:.1f} GiB per vector); raise OTOC_MAX_N to override")


def _check_site(n, i, name="i"):
    if not 1 <= i <= n:
        raise ValueError(f"site {name}={i} out of range 1..{n}")


def initial_phi(n: int, i: int) -> PhiVector:
    """``e_0 + (4/3) e_{2^(i-1)}``: a single Pauli matrix on site ``i``."""
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    _check_site(n, i)
    _guard(n)
    data = np.zeros(2**n)
    data[0] = 1.0
    data[1 << (i - 1)] = 4.0 / 3.0
    return PhiVector(n, data)


def stationary_phi(n: int) -> PhiVector:
    """The non-trivial fixed point: ``1`` at index 0 and ``O_inf`` elsewhere."""
    _guard(n)
    data = np.full(2**n, o_infinity(n))
    data[0] = 1.0
    return PhiVector(n, data)


def initial_deviation(n: int, i: int) -> PhiVector:
    """``initial_phi - stationary_phi``; evolves under the same linear map."""
    phi = initial_phi(n, i)
    oinf = o_infinity(n)
    phi.data[1:] -= oinf
    phi.data[0] = 0.0
    return phi


def apply_pair_kernel(phi: PhiVector, kernel: GateKernel, p: int, q: int) -> PhiVector:
    """Apply one elementary step on sites ``(p, q)`` in place and return ``phi``."""
    if p == q:
        raise ValueError("pair sites must differ")
    _check_site(phi.n, p, "p")
    _check_site(phi.n, q, "q")
    apply_pair_inplace(phi.data, kernel.m, p - 1, q - 1)
    return phi


def apply_layer(phi: PhiVector, layer, kernel: GateKernel) -> PhiVector:
    m = kernel.m
    data = phi.data
    for p, q in layer:
        apply_pair_inplace(data, m, p - 1, q - 1)
    return phi


def apply_period(phi: PhiVector, protocol: Protocol, kernel: GateKernel) -> PhiVector:
    if not protocol.deterministic:
        raise ValueError(f"apply_period needs a deterministic protocol, got {protocol.kind.value}")
    for layer in protocol.layers:
        apply_layer(phi, layer, kernel)
    phi.tick += protocol.ticks_per_period
    return phi


def apply_averaged_step(phi: PhiVector, protocol: Protocol, kernel: GateKernel,
                        _scratch=None) -> PhiVector:
    """One step of the uniformly averaged elementary map ``(1/L) sum M_ij``.

    Pairs are accumulated in a fixed order, so the result is reproducible.
    """
    if protocol.deterministic:
        raise ValueError("apply_averaged_step needs an averaged protocol")
    pairs = protocol.pairs
    src = phi.data
    if _scratch is None:
        acc, tmp = np.zeros_like(src), np.empty_like(src)
    else:
        acc, tmp = _scratch
        acc[:] = 0.0
    for p, q in pairs:
        tmp[:] = src
        apply_pair_inplace(tmp, kernel.m, p - 1, q - 1)
        axpy_inplace(acc, tmp, 1.0)
    # dividing once keeps fixed vectors such as e_0 bit-exact
    np.divide(acc, len(pairs), out=src)
    return phi


def apply_tick(phi: PhiVector, protocol: Protocol, kernel: GateKernel, _scratch=None) -> PhiVector:
    """Advance by one tick: one layer, or one unit of time for averaged kinds."""
    if protocol.deterministic:
        layer = protocol.layers[phi.tick % len(protocol.layers)]
        apply_layer(phi, layer, kernel)
    else:
        if _scratch is None:
            _scratch = (np.empty_like(phi.data), np.empty_like(phi.data))
        for _ in range(protocol.steps_per_unit):
            apply_averaged_step(phi, protocol, kernel, _scratch)
    phi.tick += 1
    return phi


def read_otoc(phi: PhiVector, j: int) -> float:
    _check_site(phi.n, j, "j")
    return float(phi.data[1 << (j - 1)])


def read_all(phi: PhiVector) -> np.ndarray:
    """O(i, j) for j = 1..n."""
    return phi.data[1 << np.arange(phi.n)].copy()


def inverse_map(phi: PhiVector) -> np.ndarray:
    """Apply ``[[1, -3/4], [0, 3/4]]`` at every site.

    The image holds sums of squared Pauli coefficients and is therefore
    nonnegative for a physical OTOC vector.
    """
    n = phi.n
    x = phi.data.reshape((2,) * n)
    inv = np.array([[1.0, -0.75], [0.0, 0.75]])
    for axis in range(n):
        x = np.moveaxis(np.tensordot(inv, x, axes=([1], [axis])), 0, axis)
    return x.reshape(-1)


def remove_fixed_component(data: np.ndarray) -> np.ndarray:
    """Project ``data`` in place onto the decaying subspace of every kernel.

    The eigenvalue-1 space is spanned by ``e_0`` and the vector of ones; its
    left eigenvectors are ``e_0`` and ``l_s = (-3/4)^popcount(s)`` for
    ``s != 0``, so the projection zeroes component 0 and subtracts the
    constant ``(l . x) / (l . 1)`` from all other components.  Rounding
    errors committed while the deviation vector is O(1) would otherwise sit
    in this non-decaying direction forever.
    """
    n = data.shape[0].bit_length() - 1
    weights = (-0.75) ** np.arange(n + 1)
    weights[0] = 0.0
    denom = 0.25**n - 1.0
    beta = popcount_weighted_sum(data, weights) / denom
    shift_nonzero_inplace(data, beta)
    return data


def _gate_resolved_layers(protocol):
    return tuple((p,) for layer in protocol.layers for p in layer)


def evolve(protocol: Protocol, kernel: GateKernel, i: int, horizon_ticks: int, *,
           deviation: bool = False, gate_resolved: bool = False,
           max_n: int | None = None) -> OtocSeries:
    """Record O(i, j, tick) for all j at every tick up to ``horizon_ticks``.

    With ``deviation=True`` the vector ``Phi - Phi_inf`` is propagated
    instead of ``Phi`` and re-projected onto the decaying subspace after
    every tick, so ``O - O_inf`` keeps its relative precision down to the
    underflow threshold.  ``gate_resolved`` (deterministic kinds only)
    samples after every gate instead of after every layer.
    """
    if horizon_ticks < 0:
        raise ValueError("horizon must be >= 0")
    n = protocol.n
    _guard(n, max_n)
    _check_site(n, i)
    if gate_resolved:
        if not protocol.deterministic:
            raise ValueError("gate-resolved sampling only applies to deterministic protocols")
        protocol = Protocol(protocol.kind, protocol.boundary, n, _gate_resolved_layers(protocol))
    phi = initial_deviation(n, i) if deviation else initial_phi(n, i)
    if deviation:
        remove_fixed_component(phi.data)
    oinf = o_infinity(n)
    idx = 1 << np.arange(n)
    out = np.empty((horizon_ticks + 1, n))
    out[0] = phi.data[idx]
    scratch = None if protocol.deterministic else (np.empty_like(phi.data), np.empty_like(phi.data))
    for t in range(1, horizon_ticks + 1):
        apply_tick(phi, protocol, kernel, scratch)
        if deviation:
            remove_fixed_component(phi.data)
        out[t] = phi.data[idx]
    if deviation:
        dev = out
        values = out + oinf
    else:
        values = out
        dev = out - oinf
    meta = {
        "protocol": protocol.describe(),
        "kernel": kernel.describe(),
        "i": i,
        "mode": "deviation" if deviation else "direct",
        "sampling": "per_gate" if gate_resolved else (
            "per_layer" if protocol.kind is Kind.BW else "end_of_period"),
    }
    return OtocSeries(i, n, np.arange(horizon_ticks + 1), values, dev,
                      protocol.ticks_per_period, meta)
