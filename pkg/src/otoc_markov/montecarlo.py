"""Single circuit realizations in the Pauli basis.

The evolved operator is stored through its real coefficients ``a_sigma`` on
all ``4^n`` Pauli strings (base-4 digit ``k`` holds the letter on site
``k + 1``; letters 1, X, Y, Z are 0..3).  Each elementary step conjugates the
operator with ``U = W (V_p x V_q)``, which acts on the two touched digits
through a 16x16 orthogonal Pauli transfer matrix.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from ._kernels import apply_ptm_inplace
from .gates import CanonicalGate
from .propagator import Protocol
from .series import OtocSeries, o_infinity

__all__ = [
    "RandomnessScenario",
    "MAX_QUBITS",
    "NormDriftError",
    "PAULIS",
    "build_w",
    "sample_haar_u2",
    "pauli_transfer_matrix",
    "initial_coefficients",
    "otoc_from_coefficients",
    "run_realization",
    "run_ensemble",
]

MAX_QUBITS = 14
NORM_TOL = 1e-8

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
_LETTERS = {"X": 1, "Y": 2, "Z": 3}

#: two-site Paulis, index ``l_p + 4 l_q`` -> sigma_{l_p} (x) sigma_{l_q}
PAULIS = np.array([np.kron(b, a) for b in (_I2, _X, _Y, _Z) for a in (_I2, _X, _Y, _Z)])


class NormDriftError(ArithmeticError):
    pass


class RandomnessScenario(str, enum.Enum):
    DIFFX_DIFFT = "diffx_difft"
    DIFFX_HOMT = "diffx_homt"
    HOMX_DIFFT = "homx_difft"
    HOMX_HOMT = "homx_homt"

    @property
    def space_varies(self) -> bool:
        return self in (RandomnessScenario.DIFFX_DIFFT, RandomnessScenario.DIFFX_HOMT)

    @property
    def time_varies(self) -> bool:
        return self in (RandomnessScenario.DIFFX_DIFFT, RandomnessScenario.HOMX_DIFFT)

    @classmethod
    def parse(cls, text: str) -> "RandomnessScenario":
        key = text.strip().lower().replace(".", "").replace("/", "_").replace("-", "_")
        return cls(key)


def build_w(gate: CanonicalGate) -> np.ndarray:
    """``exp[i pi/4 (ax XX + ay YY + az ZZ)]`` as a product of commuting factors."""
    out = np.eye(4, dtype=complex)
    for a, p in zip(gate.as_tuple(), (_X, _Y, _Z)):
        theta = math.pi * a / 4.0
        out = out @ (math.cos(theta) * np.eye(4) + 1j * math.sin(theta) * np.kron(p, p))
    return out


def sample_haar_u2(rng: np.random.Generator) -> np.ndarray:
    """Haar-random 2x2 unitary: QR of a complex Gaussian with phase-fixed ``R``."""
    z = (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))) / math.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def pauli_transfer_matrix(u: np.ndarray) -> np.ndarray:
    """``R[a, b] = Tr(P_a U P_b U^dag) / 4`` so that ``U O U^dag`` maps ``a -> R a``."""
    conj = np.einsum("ij,bjk,lk->bil", u, PAULIS, u.conj())
    return np.einsum("aji,bij->ab", PAULIS, conj).real / 4.0


def initial_coefficients(n: int, i: int, letter: str = "X") -> np.ndarray:
    if not 1 <= i <= n:
        raise ValueError(f"site i={i} out of range 1..{n}")
    coeffs = np.zeros(4**n)
    coeffs[_LETTERS[letter.upper()] * 4 ** (i - 1)] = 1.0
    return coeffs


def otoc_from_coefficients(coeffs: np.ndarray, n: int) -> np.ndarray:
    """O(j) for every j: ``(4/3)`` times the weight on strings non-identity at ``j``."""
    sq = coeffs * coeffs
    total = sq.sum()
    out = np.empty(n)
    for j in range(1, n + 1):
        idle = sq.reshape(4 ** (n - j), 4, 4 ** (j - 1))[:, 0, :].sum()
        out[j - 1] = 4.0 / 3.0 * (total - idle)
    return out


def _site_unitary(seed, tkey, skey):
    rng = np.random.default_rng(np.random.SeedSequence([seed, tkey, skey]))
    return sample_haar_u2(rng)


def run_realization(protocol: Protocol, gate: CanonicalGate, scenario, i: int,
                    horizon_ticks: int, seed: int, *, letter: str = "X",
                    homx_per_step: bool = False) -> OtocSeries:
    """OTOC of one sampled circuit at every tick.

    Single-site unitaries come from streams keyed by ``(seed, time, site)``;
    a scenario that is homogeneous in space or time projects the matching
    key to 0.  The time key is the elementary-step counter, except for the
    space-homogeneous, time-varying scenario where it is the tick (one draw
    per layer) unless ``homx_per_step`` is set.
    """
    scenario = RandomnessScenario(scenario)
    n = protocol.n
    if not protocol.deterministic:
        raise ValueError("realizations need a deterministic protocol")
    if n > MAX_QUBITS:
        raise ValueError(f"n={n} exceeds the coefficient budget of {MAX_QUBITS} qubits")
    if horizon_ticks < 0:
        raise ValueError("horizon must be >= 0")
    w = build_w(gate)
    coeffs = initial_coefficients(n, i, letter)
    out = np.empty((horizon_ticks + 1, n))
    out[0] = otoc_from_coefficients(coeffs, n)
    nlayers = len(protocol.layers)
    step = 0
    cache = {}
    for tick in range(horizon_ticks):
        layer = protocol.layers[tick % nlayers]
        for p, q in layer:
            if scenario.time_varies:
                if scenario is RandomnessScenario.HOMX_DIFFT and not homx_per_step:
                    tkey = tick
                else:
                    tkey = step
            else:
                tkey = 0
            vs = []
            for site in (p, q):
                skey = site if scenario.space_varies else 0
                key = (tkey, skey)
                if key not in cache:
                    cache[key] = _site_unitary(seed, tkey, skey)
                vs.append(cache[key])
            u = w @ np.kron(vs[1], vs[0])
            apply_ptm_inplace(coeffs, pauli_transfer_matrix(u), p - 1, q - 1)
            step += 1
        if scenario.time_varies:
            cache.clear()
        norm = float(np.dot(coeffs, coeffs))
        if abs(norm - 1.0) > NORM_TOL:
            raise NormDriftError(f"coefficient norm drifted to {norm!r} at tick {tick + 1}")
        out[tick + 1] = otoc_from_coefficients(coeffs, n)
    oinf = o_infinity(n)
    meta = {"protocol": protocol.describe(), "gate": str(gate), "scenario": scenario.value,
            "seed": seed, "letter": letter.upper(), "homx_per_step": homx_per_step}
    return OtocSeries(i, n, np.arange(horizon_ticks + 1), out, out - oinf,
                      protocol.ticks_per_period, meta)


def run_ensemble(protocol: Protocol, gate: CanonicalGate, scenario, i: int,
                 horizon_ticks: int, seeds, **kw):
    """Mean and standard error of O over realizations, each ``(ticks, n)``."""
    acc = None
    acc2 = None
    count = 0
    for seed in seeds:
        s = run_realization(protocol, gate, scenario, i, horizon_ticks, seed, **kw)
        if acc is None:
            acc = np.zeros_like(s.values)
            acc2 = np.zeros_like(s.values)
        acc += s.values
        acc2 += s.values**2
        count += 1
    if count < 2:
        raise ValueError("need at least two seeds")
    mean = acc / count
    var = np.maximum(acc2 / count - mean**2, 0.0) * count / (count - 1)
    return mean, np.sqrt(var / count)
