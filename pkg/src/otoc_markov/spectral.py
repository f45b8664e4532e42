"""Subleading eigenvalue of the one-period OTOC transfer matrix.

Every kernel fixes ``e_0`` and the all-ones vector.  The matching left
eigenvectors are known in closed form (see
:func:`~otoc_markov.propagator.remove_fixed_component`), so both solvers work
on the invariant complement ``{x : x_0 = 0, l . x = 0}`` where ``|lambda_2|``
is the spectral radius.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .gates import GateKernel
from .propagator import PhiVector, Protocol, _guard, apply_tick, remove_fixed_component

__all__ = [
    "SpectralResult",
    "NumericalIntegrityError",
    "period_matrix",
    "lambda2_dense",
    "lambda2_matrix_free",
    "DENSE_MAX_N",
]

DENSE_MAX_N = 10
GAPLESS_TOL = 1e-12
REAL_TOL = 1e-10


class NumericalIntegrityError(ArithmeticError):
    pass


@dataclass
class SpectralResult:
    lambda2_abs: float
    method: str
    n: int
    protocol: dict
    gate: str
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True
    gapless: bool = False
    oscillating: bool = False
    eigenvalue: complex | None = None
    notes: list = field(default_factory=list)

    @property
    def rate(self) -> float:
        """``-ln |lambda_2|``, the relaxation rate per period."""
        if self.lambda2_abs <= 0.0:
            return math.inf
        return -math.log(self.lambda2_abs)

    def to_dict(self) -> dict:
        out = asdict(self)
        ev = out.pop("eigenvalue")
        out["eigenvalue"] = None if ev is None else [ev.real, ev.imag]
        out["rate"] = self.rate
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _apply_period(protocol, kernel, x, scratch=None):
    phi = PhiVector(protocol.n, x)
    for _ in range(protocol.ticks_per_period):
        apply_tick(phi, protocol, kernel, scratch)
    return phi.data


def _scratch(protocol):
    if protocol.deterministic:
        return None
    size = 2**protocol.n
    return (np.empty(size), np.empty(size))


def period_matrix(protocol: Protocol, kernel: GateKernel) -> np.ndarray:
    """Dense one-period matrix, built column by column with the production kernels."""
    n = protocol.n
    if n > DENSE_MAX_N:
        raise ValueError(f"dense matrix limited to n <= {DENSE_MAX_N}, got {n}")
    dim = 2**n
    out = np.empty((dim, dim))
    scratch = _scratch(protocol)
    for c in range(dim):
        col = np.zeros(dim)
        col[c] = 1.0
        out[:, c] = _apply_period(protocol, kernel, col, scratch)
    return out


def _left_fixed(n):
    pop = np.array([bin(s).count("1") for s in range(2**n)])
    ell = (-0.75) ** pop
    ell[0] = 0.0
    e0 = np.zeros(2**n)
    e0[0] = 1.0
    return np.vstack([e0, ell])


def _meta(protocol, kernel):
    return protocol.describe(), kernel.describe()


def lambda2_dense(protocol: Protocol, kernel: GateKernel) -> SpectralResult:
    """Largest modulus on the complement of the eigenvalue-1 space.

    For the averaged protocols the spectrum must be real; an imaginary part
    above 1e-10 raises :class:`NumericalIntegrityError`.
    """
    m = period_matrix(protocol, kernel)
    basis = scipy.linalg.null_space(_left_fixed(protocol.n))
    reduced = basis.T @ m @ basis
    ev = np.linalg.eigvals(reduced)
    order = np.argsort(-np.abs(ev), kind="stable")
    ev = ev[order]
    top = complex(ev[0])
    if not protocol.deterministic:
        worst = float(np.max(np.abs(ev.imag)))
        if worst > REAL_TOL:
            raise NumericalIntegrityError(
                f"averaged protocol has complex eigenvalue (|Im| = {worst:.3e})")
    proto, gate = _meta(protocol, kernel)
    lam = float(abs(top))
    res = SpectralResult(lam, "dense", protocol.n, proto, gate, eigenvalue=top)
    res.gapless = lam > 1.0 - GAPLESS_TOL
    return res


def _arnoldi(protocol, kernel, v0, tol, scratch):
    dim = 2**protocol.n

    def matvec(x):
        y = _apply_period(protocol, kernel, np.array(x, dtype=float).ravel(), scratch)
        return remove_fixed_component(y)

    op = spla.LinearOperator((dim, dim), matvec=matvec, dtype=float)
    # wide Krylov space: translation sectors produce clusters of nearly equal modulus
    k = min(12, dim - 4)
    ncv = min(dim - 2, max(4 * k, 48))
    try:
        vals, vecs = spla.eigs(op, k=k, which="LM", v0=v0, tol=tol, ncv=ncv, maxiter=5000)
    except spla.ArpackNoConvergence as exc:
        if len(exc.eigenvalues) == 0:
            raise NumericalIntegrityError("Arnoldi iteration did not converge") from None
        vals, vecs = exc.eigenvalues, exc.eigenvectors
    best = int(np.argmax(np.abs(vals)))
    lam = complex(vals[best])
    vec = vecs[:, best]
    mv = matvec(vec.real) + 1j * matvec(vec.imag)
    residual = float(np.linalg.norm(mv - lam * vec) / np.linalg.norm(vec))
    return lam, residual, op


def lambda2_matrix_free(protocol: Protocol, kernel: GateKernel, *, max_iters: int = 2000,
                        tol: float = 1e-10, window: int = 10, seed: int = 0,
                        refine: bool = True, max_n: int | None = None) -> SpectralResult:
    """``|lambda_2|`` from the growth ratio of successive differences.

    Starting from a random vector ``x`` the sequence ``D_k = M^k (M x - x)``
    is iterated; ``||D_{k+1}|| / ||D_k||`` converges to ``|lambda_2|``.  It
    is declared converged once it moves by less than ``tol`` over ``window``
    consecutive iterations.  A complex or sign-alternating pair makes the
    ratio oscillate; the two-step ratio is then used and the result flagged.
    If neither settles within ``max_iters`` and ``refine`` is set, Arnoldi
    iteration on the same projected operator, seeded with the last
    difference vector, finishes the job.
    """
    n = protocol.n
    _guard(n, max_n)
    proto, gate = _meta(protocol, kernel)
    scratch = _scratch(protocol)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(2**n)
    d = _apply_period(protocol, kernel, x.copy(), scratch) - x
    remove_fixed_component(d)
    norm = float(np.linalg.norm(d))
    if norm == 0.0:
        # M x = x for a generic x: the period map is the identity
        return SpectralResult(1.0, "difference_ratio", n, proto, gate, gapless=True)
    d /= norm
    ratios = []
    two_step = []
    result = None
    for it in range(1, max_iters + 1):
        d = _apply_period(protocol, kernel, d, scratch)
        remove_fixed_component(d)
        r = float(np.linalg.norm(d))
        if r == 0.0:
            result = SpectralResult(0.0, "difference_ratio", n, proto, gate, it)
            break
        d /= r
        ratios.append(r)
        if len(ratios) >= 2:
            two_step.append(math.sqrt(ratios[-1] * ratios[-2]))
        if len(ratios) > window:
            tail = np.array(ratios[-window - 1:])
            spread = float(np.max(np.abs(np.diff(tail))))
            if spread < tol:
                result = SpectralResult(r, "difference_ratio", n, proto, gate, it, spread)
                break
            if len(two_step) > window:
                tail2 = np.array(two_step[-window - 1:])
                spread2 = float(np.max(np.abs(np.diff(tail2))))
                if spread2 < tol:
                    result = SpectralResult(two_step[-1], "difference_ratio", n, proto, gate,
                                            it, spread2, oscillating=True)
                    break
    if result is None:
        last = two_step[-1] if two_step else ratios[-1]
        spread = float(np.max(np.abs(np.diff(two_step[-window - 1:])))) if len(two_step) > 1 else 1.0
        if refine and 2**n > 8:
            lam, residual, _ = _arnoldi(protocol, kernel, d, tol, scratch)
            result = SpectralResult(abs(lam), "difference_ratio+arnoldi", n, proto, gate,
                                    max_iters, residual, eigenvalue=lam)
            result.notes.append(f"difference ratio unsettled at {last:.12f} (spread {spread:.2e})")
        else:
            result = SpectralResult(last, "difference_ratio", n, proto, gate, max_iters, spread,
                                    converged=False, oscillating=True)
    result.gapless = result.lambda2_abs > 1.0 - GAPLESS_TOL
    return result


def lambda2_arnoldi(protocol: Protocol, kernel: GateKernel, *, tol: float = 1e-12,
                    seed: int = 0, max_n: int | None = None) -> SpectralResult:
    """Arnoldi iteration on the projected period map, without the power phase."""
    n = protocol.n
    _guard(n, max_n)
    proto, gate = _meta(protocol, kernel)
    scratch = _scratch(protocol)
    v0 = np.random.default_rng(seed).standard_normal(2**n)
    remove_fixed_component(v0)
    lam, residual, _ = _arnoldi(protocol, kernel, v0, tol, scratch)
    res = SpectralResult(abs(lam), "arnoldi", n, proto, gate, 0, residual, eigenvalue=lam)
    res.gapless = res.lambda2_abs > 1.0 - GAPLESS_TOL
    return res


__all__.append("lambda2_arnoldi")
