"""Two-qubit gate parameters and the averaged OTOC transfer kernel.

A fixed two-qubit gate is described by its canonical parameters
``0 <= az <= ay <= ax <= 1``.  After averaging over independent single-qubit
Haar unitaries, only two trigonometric scalars ``u`` and ``v`` survive, and
one elementary step acts on two bits of the OTOC vector through a 4x4 real
matrix.  Local two-bit states are indexed ``s_p + 2 * s_q``, i.e. 0 = (0, 0),
1 = (1, 0), 2 = (0, 1), 3 = (1, 1) for the ordered pair ``(p, q)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "CanonicalGate",
    "KernelScalars",
    "GateKernel",
    "GateClass",
    "derive_uv",
    "kernel_from_gate",
    "kernel_from_scalars",
    "classify_gate",
    "lambda2_spbc_dual",
    "haar_u4_scalars",
    "parse_gate",
    "W_G",
]

_SNAP = 1e-15
_DUAL_TOL = 1e-12


@dataclass(frozen=True)
class CanonicalGate:
    ax: float
    ay: float
    az: float

    def __post_init__(self):
        vals = []
        for name in ("ax", "ay", "az"):
            a = float(getattr(self, name))
            if not math.isfinite(a):
                raise ValueError(f"{name}={a} is not finite")
            # snap so that dual-unitary detection is robust to parsing noise
            if abs(a - 1.0) < _SNAP:
                a = 1.0
            elif abs(a) < _SNAP:
                a = 0.0
            object.__setattr__(self, name, a)
            vals.append(a)
        ax, ay, az = vals
        if not (0.0 <= az <= ay <= ax <= 1.0):
            raise ValueError(
                f"canonical parameters must satisfy 0 <= az <= ay <= ax <= 1, "
                f"got ({ax}, {ay}, {az})")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.ax, self.ay, self.az)

    def __str__(self):
        return f"{self.ax:g},{self.ay:g},{self.az:g}"


#: the generic gate used throughout the numerical experiments
W_G = CanonicalGate(0.5, 0.3, 0.1)


@dataclass(frozen=True)
class KernelScalars:
    """The scalars ``u, v`` and the kernel entries derived from them."""

    u: float
    v: float
    cplus: float = field(init=False)
    cminus: float = field(init=False)
    d: float = field(init=False)

    def __post_init__(self):
        u, v = float(self.u), float(self.v)
        if not (-3.0 - 1e-12 <= u <= 3.0 + 1e-12 and -3.0 - 1e-12 <= v <= 3.0 + 1e-12):
            raise ValueError(f"u={u}, v={v} outside [-3, 3]")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "cplus", (9.0 + 2.0 * u - v) / 12.0)
        object.__setattr__(self, "cminus", (9.0 - 2.0 * u - v) / 12.0)
        object.__setattr__(self, "d", (v - 3.0) / 6.0)

    @property
    def corner(self) -> float:
        """The (3, 3) entry ``(2d + v) / 3``."""
        return (2.0 * self.d + self.v) / 3.0


def haar_u4_scalars() -> KernelScalars:
    """Effective scalars of a Haar-random two-qubit gate (u = 0, v = -3/5)."""
    return KernelScalars(0.0, -0.6)


def derive_uv(gate: CanonicalGate) -> tuple[float, float]:
    cx, cy, cz = (math.cos(math.pi * a) for a in gate.as_tuple())
    return cx + cy + cz, cx * cy + cx * cz + cy * cz


class GateClass(str, enum.Enum):
    GENERIC = "generic"
    DUAL_UNITARY = "dual_unitary"
    SWAP = "swap"
    HAAR_U4_EFFECTIVE = "haar_u4_effective"


@dataclass(frozen=True, eq=False)
class GateKernel:
    """4x4 averaged transfer kernel of one elementary step.

    ``gate`` is ``None`` for kernels built directly from scalars (e.g. the
    Haar-U(4) effective kernel) or from an arbitrary matrix in tests.
    """

    m: np.ndarray
    scalars: KernelScalars | None = None
    gate: CanonicalGate | None = None
    label: str = ""

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"kernel must be 4x4, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @cached_property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.m, np.eye(4)))

    @cached_property
    def is_swap(self) -> bool:
        return bool(np.array_equal(self.m, _SWAP_M))

    def describe(self) -> str:
        if self.label:
            return self.label
        if self.gate is not None:
            return str(self.gate)
        if self.scalars is not None:
            return f"u={self.scalars.u:g},v={self.scalars.v:g}"
        return "custom"


_SWAP_M = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=float)


def kernel_from_scalars(scalars: KernelScalars, gate: CanonicalGate | None = None,
                        label: str = "") -> GateKernel:
    s = scalars
    d = s.d
    m = np.array([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, s.cplus, s.cminus, d],
        [0.0, s.cminus, s.cplus, d],
        [0.0, -4.0 * d / 3.0, -4.0 * d / 3.0, s.corner],
    ])
    return GateKernel(m, scalars=s, gate=gate, label=label)


def kernel_from_gate(gate: CanonicalGate) -> GateKernel:
    return kernel_from_scalars(KernelScalars(*derive_uv(gate)), gate=gate)


def classify_gate(gate: CanonicalGate | KernelScalars) -> GateClass:
    """Classify a gate; a bare :class:`KernelScalars` is checked against the
    Haar-U(4) effective values first."""
    if isinstance(gate, KernelScalars):
        h = haar_u4_scalars()
        if abs(gate.u - h.u) < _DUAL_TOL and abs(gate.v - h.v) < _DUAL_TOL:
            return GateClass.HAAR_U4_EFFECTIVE
        scalars = gate
        is_swap = abs(scalars.u + 3.0) < _DUAL_TOL and abs(scalars.v - 3.0) < _DUAL_TOL
    else:
        scalars = KernelScalars(*derive_uv(gate))
        is_swap = gate.as_tuple() == (1.0, 1.0, 1.0)
    if is_swap:
        return GateClass.SWAP
    if abs(scalars.cminus - 1.0) < _DUAL_TOL:
        return GateClass.DUAL_UNITARY
    return GateClass.GENERIC


def lambda2_spbc_dual(az: float) -> float:
    """|lambda_2| of the staircase PBC circuit for a dual-unitary gate (1, 1, az).

    Equals ``1 - c_+`` with ``c_+ = (1 + cos(pi az)) / 3``.
    """
    az = float(az)
    if not 0.0 <= az < 1.0:
        raise ValueError(f"az must lie in [0, 1); az=1 is the SWAP gate (got {az})")
    return (2.0 - math.cos(math.pi * az)) / 3.0


_KEYWORDS = {
    "swap": (1.0, 1.0, 1.0),
    "xy": (1.0, 1.0, 0.0),
    "wg": W_G.as_tuple(),
}


def parse_gate(text: str) -> GateKernel:
    """Parse ``"ax,ay,az"`` or one of the keywords ``swap``, ``xy``, ``u4``."""
    t = text.strip().lower()
    if t == "u4":
        return kernel_from_scalars(haar_u4_scalars(), label="u4")
    if t in _KEYWORDS:
        return kernel_from_gate(CanonicalGate(*_KEYWORDS[t]))
    parts = [p for p in t.replace(" ", "").split(",") if p]
    if len(parts) != 3:
        raise ValueError(f"cannot parse gate {text!r}: expected 'ax,ay,az' or swap/xy/u4")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ValueError(f"cannot parse gate {text!r}: non-numeric parameter") from None
    return kernel_from_gate(CanonicalGate(*vals))
