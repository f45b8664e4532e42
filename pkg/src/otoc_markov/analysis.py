"""Observables built on OTOC series: asymptotic value, relaxation rates,
exact light-cone values, transition and spike times, phantom reports."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .gates import CanonicalGate, GateClass, GateKernel, KernelScalars, derive_uv
from .propagator import Boundary, Kind
from .series import UNDERFLOW, OtocSeries, o_infinity, o_infinity_exact

__all__ = [
    "o_infinity",
    "o_infinity_exact",
    "o_infinity_bruteforce",
    "RateSeries",
    "rate_series",
    "lightcone_value",
    "lightcone_boundary",
    "arrival_tick",
    "predict_transition_time",
    "predict_spike_times",
    "PhantomReport",
    "WindowTooShortError",
    "phantom_report",
    "fit_rate",
    "time_shift",
    "hinge_fit",
    "series_to_csv",
    "FIT_FLOOR",
]

#: deviations below this are left out of rate fits
FIT_FLOOR = 1e-250
BRUTEFORCE_MAX_N = 8
# a spike distorts whole-period samples up to one period away
SPIKE_MARGIN = 1.0
WINDOW_MARGIN = 2
MIN_WINDOW_POINTS = 5


def o_infinity_bruteforce(n: int) -> Fraction:
    """Long-time OTOC from counting Pauli strings that commute with ``X`` on site 1.

    Each non-identity string contributes ``+1`` if it commutes and ``-1`` if
    it anticommutes; the average is ``1 - sum / (4^n - 1)``.
    """
    if not 1 <= n <= BRUTEFORCE_MAX_N:
        raise ValueError(f"enumeration limited to 1 <= n <= {BRUTEFORCE_MAX_N}, got {n}")
    total = 0
    count = 0
    # letters: 0 = 1, 1 = X, 2 = Y, 3 = Z; X anticommutes with Y and Z only
    for string in itertools.product(range(4), repeat=n):
        if not any(string):
            continue
        count += 1
        total += -1 if string[0] in (2, 3) else 1
    return 1 - Fraction(total, count)


# -- rates -----------------------------------------------------------------

@dataclass
class RateSeries:
    """Per-period rates ``r(t) = ln D(t) - ln D(t + 1)`` with ``D = |O - O_inf|``.

    ``rates[k]`` belongs to the interval ``[times[k], times[k] + 1]``; it is
    NaN where either endpoint underflowed or where ``O - O_inf`` changes sign.
    """

    times: np.ndarray
    rates: np.ndarray
    sign_change: np.ndarray
    j: int
    meta: dict = field(default_factory=dict)

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.rates)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "j", "rate", "sign_change"])
        for t, r, s in zip(self.times, self.rates, self.sign_change):
            w.writerow([f"{t:g}", self.j, repr(float(r)), int(s)])
        return buf.getvalue()


def _period_view(series: OtocSeries):
    s = series.at_periods() if series.ticks_per_period != 1 else series
    return s.ticks.astype(float), s


def rate_series(series: OtocSeries, j: int) -> RateSeries:
    times, s = _period_view(series)
    dev = s.deviation[:, j - 1]
    if len(dev) < 2:
        raise ValueError("need at least two samples")
    mag = np.abs(dev)
    with np.errstate(divide="ignore", invalid="ignore"):
        logd = np.where(mag > UNDERFLOW, np.log(np.where(mag > 0, mag, 1.0)), np.nan)
    rates = logd[:-1] - logd[1:]
    flip = np.sign(dev[:-1]) * np.sign(dev[1:]) < 0
    rates[flip] = np.nan
    if np.count_nonzero(np.isfinite(rates)) < 1:
        raise ValueError(f"no finite rate for j={j}: |O - O_inf| underflows everywhere")
    return RateSeries(times[:-1], rates, flip, j, {"i": series.i, "n": series.n,
                                                   "units": "per period"})


# -- light cone ------------------------------------------------------------

def _scalars(gate) -> KernelScalars:
    if isinstance(gate, KernelScalars):
        return gate
    if isinstance(gate, GateKernel):
        if gate.scalars is None:
            raise ValueError("kernel carries no scalars")
        return gate.scalars
    if isinstance(gate, CanonicalGate):
        return KernelScalars(*derive_uv(gate))
    raise TypeError(f"cannot take kernel scalars from {type(gate).__name__}")


def _edges(i, tau):
    # odd i: the first gate is (i, i+1), so the fast edge moves right
    if i % 2 == 1:
        return i + tau, i - tau + 1
    return i - tau, i + tau - 1


def lightcone_boundary(n: int, i: int, tau: int, boundary="pbc") -> list[tuple[int, str]]:
    """Boundary sites of the brick-wall cone after ``tau`` ticks (layers).

    Returns ``(j, branch)`` pairs where ``branch`` is ``"fast"`` for the edge
    carrying ``c_-^tau`` and ``"slow"`` for the edge carrying
    ``c_+ c_-^(tau-1)``.  Only points where the closed form is exact are
    listed: an edge must not have reached an open end, and on a ring the two
    edges must not have met.
    """
    boundary = Boundary(boundary)
    if tau < 1:
        return []
    fast, slow = _edges(i, tau)
    if boundary is Boundary.PBC:
        if 2 * tau > n:
            return []
        return [((fast - 1) % n + 1, "fast"), ((slow - 1) % n + 1, "slow")]
    out = []
    if 1 <= fast <= n:
        out.append((fast, "fast"))
    if 1 <= slow <= n:
        out.append((slow, "slow"))
    return out


def lightcone_value(gate, i: int, j: int, tau: int, n: int | None = None,
                    boundary="pbc") -> float:
    """Exact OTOC on the edge of the brick-wall light cone, ``tau`` in ticks.

    ``(4/3) c_-^tau`` on the edge that moves with the first gate and
    ``(4/3) c_+ c_-^(tau-1)`` on the other edge.  Without ``n`` an infinite
    chain is assumed.
    """
    s = _scalars(gate)
    if n is None:
        fast, slow = _edges(i, tau)
        pts = [(fast, "fast"), (slow, "slow")] if tau >= 1 else []
    else:
        pts = lightcone_boundary(n, i, tau, boundary)
    for jj, branch in pts:
        if jj == j:
            if branch == "fast":
                return 4.0 / 3.0 * s.cminus**tau
            return 4.0 / 3.0 * s.cplus * s.cminus ** (tau - 1)
    raise ValueError(f"(j={j}, tau={tau}) is not on the exact light-cone boundary from i={i}")


def arrival_tick(n: int, i: int, j: int, boundary="pbc") -> int:
    """First brick-wall tick at which site ``j`` lies inside the cone of ``i``."""
    boundary = Boundary(boundary)
    if j == i:
        return 0
    odd = i % 2 == 1
    if boundary is Boundary.PBC:
        right = (j - i) % n
        left = (i - j) % n
    else:
        right = j - i if j > i else None
        left = i - j if j < i else None
    cands = []
    if right is not None:
        cands.append(right if odd else right + 1)
    if left is not None:
        cands.append(left + 1 if odd else left)
    return min(cands)


# -- transition and spikes -------------------------------------------------

_TC_CLASSES = (GateClass.DUAL_UNITARY, GateClass.GENERIC, GateClass.HAAR_U4_EFFECTIVE)


def _mirror(n, i, j):
    """Map (i, j) to the odd-i frame; the ring reflection keeps the layering."""
    if i % 2 == 1:
        return (j - i) % n
    return (i - j) % n


def predict_transition_time(n: int, i: int, j: int, protocol="bw", boundary="pbc",
                            gate_class=GateClass.DUAL_UNITARY) -> float | None:
    """Period at which the relaxation rate jumps, or ``None`` without a prediction.

    Covers brick-wall rings.  With ``d`` the clockwise distance from ``i`` to
    ``j`` (counter-clockwise for even ``i``): ``(n + 1)/2 - d/2`` for odd
    ``d`` and ``d/2 + n/2`` for even ``d``.
    """
    if Kind(protocol) is not Kind.BW or Boundary(boundary) is not Boundary.PBC:
        return None
    if GateClass(gate_class) not in _TC_CLASSES:
        return None
    if n % 2 or not (1 <= i <= n and 1 <= j <= n) or j == i:
        return None
    d = _mirror(n, i, j)
    if d % 2:
        return (n + 1) / 2 - d / 2
    return d / 2 + n / 2


def predict_spike_times(n: int, i: int, j: int, boundary="pbc", horizon_ticks: int = 0) -> list[int]:
    """Ticks at which a light-cone edge returns to site ``j`` (brick wall).

    Rings: the fast edge arrives at ``d + k n`` (k >= 0) and the slow edge at
    ``k n - (d - 1)`` (k >= 1).  For even ``d`` the slow family falls on odd
    ticks, so it is invisible in series sampled at whole periods.  Open chains (i = 1 frame): the reflected
    fast edge returns at ``2 k n - (d - 1)``.  Ticks up to ``horizon_ticks``.
    """
    boundary = Boundary(boundary)
    if j == i:
        return []
    out = set()
    if boundary is Boundary.PBC:
        d = _mirror(n, i, j)
        k = 0
        while d + k * n <= horizon_ticks:
            out.add(d + k * n)
            k += 1
        k = 1
        while k * n - (d - 1) <= horizon_ticks:
            out.add(k * n - (d - 1))
            k += 1
    else:
        d = abs(j - i)
        k = 1
        while 2 * k * n - (d - 1) <= horizon_ticks:
            out.add(2 * k * n - (d - 1))
            k += 1
    return sorted(out)


# -- fits and phantom report ----------------------------------------------

class WindowTooShortError(ValueError):
    pass


def fit_rate(times, logd):
    """Least-squares rate ``-slope`` of ``ln D`` and the RMS residual."""
    times = np.asarray(times, dtype=float)
    logd = np.asarray(logd, dtype=float)
    coef, res, *_ = np.polyfit(times, logd, 1, full=True)
    rms = math.sqrt(float(res[0]) / len(times)) if len(res) else 0.0
    return -float(coef[0]), rms


@dataclass
class PhantomReport:
    j: int
    early_rate: float | None
    late_rate: float | None
    early_window: tuple | None
    late_window: tuple | None
    t_c_observed: float | None
    t_c_predicted: float | None
    references: dict
    early_match: str | None = None
    late_match: str | None = None
    early_residual: float | None = None
    late_residual: float | None = None
    arrival: float | None = None
    no_relaxation: bool = False
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _ref_rate(ref):
    if hasattr(ref, "rate"):
        return float(ref.rate)
    return -math.log(float(ref))


def _nearest(rate, refs):
    if rate is None or not refs:
        return None
    return min(refs, key=lambda name: abs(refs[name] - rate))


def _observed_transition(times, logd, lo, hi):
    """First prominent kink of ``ln D`` in ``[lo, hi]``.

    Kink strength is ``|ln D(t+1) - 2 ln D(t) + ln D(t-1)|``.  The first time
    reaching half of the largest strength in the range is returned, so later
    wrap-around spikes of similar height cannot win by a small margin.
    """
    second = np.full(len(logd), np.nan)
    second[1:-1] = np.abs(logd[2:] - 2 * logd[1:-1] + logd[:-2])
    mask = (times >= lo) & (times <= hi) & np.isfinite(second)
    idx = np.nonzero(mask)[0]
    if len(idx) == 0:
        return None
    top = np.max(second[idx])
    if not top > 0:
        return None
    first = idx[np.nonzero(second[idx] >= 0.5 * top)[0][0]]
    return float(times[first])


def phantom_report(series: OtocSeries, j: int, lambda2_refs: dict, t_c: float | None,
                   spike_ticks=(), horizon: float | None = None) -> PhantomReport:
    """Fit the early and late relaxation rates around the transition ``t_c``.

    Early window ``[arrival + 2, t_c - 2]``, late window ``[t_c + 2, horizon]``
    (periods); points within one period of a spike and deviations below
    :data:`FIT_FLOOR` are dropped.  ``arrival`` is the first period with
    ``|O| > 1e-10``.  ``lambda2_refs`` maps a label to ``|lambda_2|`` or to a
    :class:`~otoc_markov.spectral.SpectralResult`; each fitted rate is paired
    with the nearest reference rate.
    """
    times, s = _period_view(series)
    vals = s.values[:, j - 1]
    mag = np.abs(s.deviation[:, j - 1])
    refs = {name: _ref_rate(r) for name, r in lambda2_refs.items()}
    tpp = series.ticks_per_period
    spikes = [t / tpp for t in spike_ticks]
    flags = []

    reached = np.nonzero(np.abs(vals) > 1e-10)[0]
    if len(reached) == 0:
        return PhantomReport(j, None, None, None, None, None, t_c, refs, no_relaxation=True,
                             flags=["site never reached"])
    arrival = float(times[reached[0]])
    with np.errstate(divide="ignore"):
        logd = np.where(mag > FIT_FLOOR, np.log(np.where(mag > 0, mag, 1.0)), np.nan)
    usable = np.isfinite(logd)
    last = float(times[usable].max()) if usable.any() else arrival
    if horizon is None:
        horizon = last
    horizon = min(horizon, last)

    after = usable & (times >= arrival)
    span = logd[after]
    # relaxation means the floor of ln D keeps sinking: a periodic pattern
    # (SWAP) has the same minimum in both halves of the record
    half = len(span) // 2
    if len(span) < 4 or float(np.min(span[half:])) >= float(np.min(span[:half])) - 1e-9:
        return PhantomReport(j, None, None, None, None, None, t_c, refs, arrival=arrival,
                             no_relaxation=True, flags=["no exponential relaxation"])

    t_obs = _observed_transition(times, logd, arrival + WINDOW_MARGIN, horizon)
    t_split = t_c if t_c is not None else t_obs
    if t_split is None:
        raise WindowTooShortError("no transition time available to split the windows")

    def window(lo, hi):
        keep = usable & (times >= lo) & (times <= hi)
        for sp in spikes:
            keep &= np.abs(times - sp) > SPIKE_MARGIN
        return keep

    early = window(arrival + WINDOW_MARGIN, t_split - WINDOW_MARGIN)
    late = window(t_split + WINDOW_MARGIN, horizon)
    for name, keep in (("early", early), ("late", late)):
        if np.count_nonzero(keep) < MIN_WINDOW_POINTS:
            raise WindowTooShortError(
                f"{name} window has {np.count_nonzero(keep)} points, need {MIN_WINDOW_POINTS}")
    er, eres = fit_rate(times[early], logd[early])
    lr, lres = fit_rate(times[late], logd[late])
    for name, keep in (("early", early), ("late", late)):
        d = np.diff(logd[keep])
        if np.any(d > 0):
            flags.append(f"{name} window not monotone")
    return PhantomReport(
        j, er, lr,
        (float(times[early].min()), float(times[early].max())),
        (float(times[late].min()), float(times[late].max())),
        t_obs, t_c, refs, _nearest(er, refs), _nearest(lr, refs), eres, lres, arrival,
        flags=flags)


def hinge_fit(times, logd):
    """Continuous two-segment least-squares fit of ``ln D`` against time.

    Every interior sample is tried as the hinge; returns
    ``(hinge_time, early_rate, late_rate)`` for the smallest residual, with
    rates as negative slopes.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(logd, dtype=float)
    if len(t) < 4:
        raise WindowTooShortError("hinge fit needs at least four points")
    best = None
    for k in range(1, len(t) - 1):
        b = t[k]
        design = np.column_stack([np.ones_like(t), np.minimum(t - b, 0.0), np.maximum(t - b, 0.0)])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        sse = float(np.sum((design @ coef - y) ** 2))
        if best is None or sse < best[0]:
            best = (sse, float(b), -float(coef[1]), -float(coef[2]))
    return best[1], best[2], best[3]


# -- protocol equivalence --------------------------------------------------

def _half_period_grid(series: OtocSeries, j: int):
    tpp = series.ticks_per_period
    if tpp not in (1, 2):
        raise ValueError("time_shift needs one or two ticks per period")
    step = 2 // tpp
    return {int(t) * step: v for t, v in zip(series.ticks, series.values[:, j - 1])}


def time_shift(reference: OtocSeries, other: OtocSeries, j: int, max_shift: float = 20,
               tol: float = 1e-12) -> float | None:
    """Shift ``dt`` (periods, possibly half-integer) with
    ``O_other(t) = O_reference(t + dt)`` on every common sample.

    At least one compared value must be nonzero; returns ``None`` if no
    shift in ``[-max_shift, max_shift]`` fits within ``tol``.
    """
    a = _half_period_grid(reference, j)
    b = _half_period_grid(other, j)
    best = None
    for h in range(-int(2 * max_shift), int(2 * max_shift) + 1):
        common = [(b[t], a[t + h]) for t in b if t + h in a]
        if len(common) < 2 or not any(abs(x) > 0 for x, _ in common):
            continue
        err = max(abs(x - y) for x, y in common)
        if err <= tol * max(1.0, max(abs(y) for _, y in common)):
            if best is None or abs(h) < abs(best):
                best = h
    return None if best is None else best / 2


# -- output ----------------------------------------------------------------

def series_to_csv(series: OtocSeries, js=None, per_period: bool = False,
                  with_deviation: bool = False) -> str:
    """CSV with columns ``t, j, otoc`` (plus ``deviation``); ``t`` in periods."""
    js = range(1, series.n + 1) if js is None else js
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "j", "otoc"] + (["deviation"] if with_deviation else []))
    tpp = series.ticks_per_period
    for k, tick in enumerate(series.ticks):
        if per_period and tick % tpp:
            continue
        t = tick / tpp
        for j in js:
            row = [f"{t:g}", j, repr(float(series.values[k, j - 1]))]
            if with_deviation:
                row.append(repr(float(series.deviation[k, j - 1])))
            w.writerow(row)
    return buf.getvalue()
