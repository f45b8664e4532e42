"""Command-line front end: ``otoc-markov <subcommand> [flags]``.

Every subcommand writes into ``--out`` (default ``./otoc_out``).  CSV files
start with ``#`` comment lines carrying the configuration and version, JSON
files carry them under ``"config"`` and ``"version"``.  Flags may also come
from a TOML file given with ``--config``; flags on the command line win.

Exit codes: 0 success, 2 configuration error, 3 resource guard,
4 numerical-integrity failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import subprocess
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import tomli

from . import analysis, montecarlo, spectral, u4
from ._kernels import set_threads
from .gates import (CanonicalGate, GateClass, classify_gate, kernel_from_gate, lambda2_spbc_dual,
                    parse_gate)
from .propagator import Boundary, Kind, Protocol, ResourceGuardError, evolve
from .series import o_infinity

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RESOURCE = 3
EXIT_NUMERIC = 4

THREADS_ENV = "OTOC_THREADS"


class ConfigError(ValueError):
    pass


# -- provenance ------------------------------------------------------------

def version_string() -> str:
    """``git describe`` of the source tree, or the installed package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:
        return "unknown"


class Writer:
    """Serialized output sink stamping every file with config and version."""

    def __init__(self, outdir, config: dict):
        self.outdir = Path(outdir)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.version = version_string()
        self.written = []

    def csv(self, name: str, body: str) -> Path:
        head = (f"# config: {json.dumps(self.config, sort_keys=True)}\n"
                f"# version: {self.version}\n")
        return self._write(name, head + body)

    def json(self, name: str, payload: dict) -> Path:
        doc = {"config": self.config, "version": self.version, **payload}
        return self._write(name, json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")

    def _write(self, name, text):
        path = self.outdir / name
        path.write_text(text)
        self.written.append(str(path))
        return path


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


# -- argument handling -----------------------------------------------------

def parse_sites(text, n: int) -> list[int]:
    """``"7"``, ``"3,5,9"``, ``"2:6"`` (inclusive) or ``"all"``."""
    if text is None or str(text).strip().lower() == "all":
        return list(range(1, n + 1))
    if isinstance(text, int):
        out = [text]
    else:
        out = []
        for part in str(text).split(","):
            part = part.strip()
            if ":" in part:
                lo, hi = part.split(":")
                out.extend(range(int(lo), int(hi) + 1))
            elif part:
                out.append(int(part))
    bad = [j for j in out if not 1 <= j <= n]
    if bad:
        raise ConfigError(f"sites {bad} outside 1..{n}")
    return out


def parse_seeds(text) -> list[int]:
    """``"0:199"`` (inclusive range), ``"1,2,3"`` or a single integer."""
    if isinstance(text, int):
        return [text]
    if isinstance(text, list):
        return [int(s) for s in text]
    text = str(text).strip()
    if ":" in text:
        lo, hi = text.split(":")
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",") if s.strip()]


def _common(p, gate_default="wg", proto_default="bw", bc_default="pbc"):
    p.add_argument("--gate", default=gate_default,
                   help="canonical parameters 'ax,ay,az' or one of wg, xy, swap, u4")
    p.add_argument("--proto", default=proto_default, choices=[k.value for k in Kind if k is not Kind.CUSTOM],
                   help="bw (brick wall), s (staircase), rnn, all (all-to-all)")
    p.add_argument("--bc", default=bc_default, choices=[b.value for b in Boundary])
    p.add_argument("--n", type=int, required=False, default=None)
    p.add_argument("--i", type=int, default=1, help="site of the initial Pauli operator")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otoc-markov", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="TOML file whose keys mirror the flags")
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--out", default=None, help="output directory (default ./otoc_out)")
    shared.add_argument("--threads", type=int, default=None,
                        help=f"kernel threads (default from ${THREADS_ENV})")
    shared.add_argument("--workers", type=int, default=None, help="process pool size for scans")
    shared.add_argument("--max-n", type=int, default=None, dest="max_n",
                        help="largest allowed n for 2^n vectors (default $OTOC_MAX_N or 28)")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("relax", parents=[shared], help="OTOC relaxation series with phantom-rate analysis")
    _common(p)
    p.add_argument("--j", default=None, help="site(s): 7, 3,5 or 2:6; default all")
    p.add_argument("--horizon", type=float, default=None, help="periods (default 3n)")
    p.add_argument("--ref-n", type=int, default=None, dest="ref_n",
                   help="system size for the lambda_2 references (default n)")
    p.add_argument("--refs", default=None,
                   help="comma list of proto:bc references, e.g. bw:pbc,bw:obc (default own)")

    p = sub.add_parser("lightcone", parents=[shared], help="full (j, t) grid and exact cone-edge values")
    _common(p)
    p.add_argument("--horizon", type=float, default=None, help="periods (default n/2)")

    p = sub.add_parser("spectrum", parents=[shared], help="subleading eigenvalue of the period map")
    _common(p)
    p.add_argument("--method", default="auto", choices=["auto", "dense", "matrix-free", "arnoldi"])
    p.add_argument("--tol", type=float, default=1e-10)

    p = sub.add_parser("u4", parents=[shared], help="exact Haar-U(4) OTOC by domain-wall counting")
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--i", type=int, default=1)
    p.add_argument("--j", default=None, help="site(s); default all")
    p.add_argument("--bc", default="obc", choices=[b.value for b in Boundary])
    p.add_argument("--tau", type=int, default=None, help="rows of gates (default 2n)")
    p.add_argument("--exact", action="store_true", help="rational arithmetic")

    p = sub.add_parser("selfavg", parents=[shared], help="single circuit realizations against the averaged dynamics")
    _common(p, gate_default=None)
    p.add_argument("--az", type=float, default=None, help="shorthand for --gate 1,1,az")
    p.add_argument("--scenario", default="diffx_difft",
                   help="diffx_difft, diffx_homt, homx_difft, homx_homt")
    p.add_argument("--j", default=None, help="site(s); default all")
    p.add_argument("--horizon", type=float, default=None, help="periods (default n)")
    p.add_argument("--seeds", default="0", help="0:199, 1,2,3 or a single seed")
    p.add_argument("--letter", default="X", choices=["X", "Y", "Z"])
    p.add_argument("--homx-per-step", action="store_true", dest="homx_per_step",
                   help="fresh draw per gate, not per layer, for homx_difft")
    return parser


def _load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from None
    return {k.replace("-", "_"): v for k, v in data.items()}


def parse_config(argv) -> dict:
    """Merge TOML defaults and command-line flags into one flat dict."""
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    file_cfg = _load_toml(known.config) if known.config else {}
    if file_cfg:
        sub_name = file_cfg.pop("subcommand", None)
        if sub_name is not None and not any(a == sub_name for a in argv):
            argv = [*argv, sub_name]
        chosen = _subcommand_of(argv, parser)
        subparser = _subparsers(parser)[chosen]
        allowed = {a.dest for a in subparser._actions}
        unknown = set(file_cfg) - allowed
        if unknown:
            raise ConfigError(f"unknown keys in {known.config}: {sorted(unknown)}")
        subparser.set_defaults(**{k: v for k, v in file_cfg.items() if k in allowed})
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        if not exc.code:
            raise
        raise ConfigError("invalid command line") from None
    cfg = {k: v for k, v in vars(ns).items() if k != "config"}
    if cfg.get("out") is None:
        cfg["out"] = "otoc_out"
    return cfg


def _subparsers(parser):
    for act in parser._actions:
        if isinstance(act, argparse._SubParsersAction):
            return act.choices
    raise RuntimeError("no subcommands registered")


def _subcommand_of(argv, parser):
    names = _subparsers(parser)
    for a in argv:
        if a in names:
            return a
    raise ConfigError("no subcommand given")


# -- validation helpers ----------------------------------------------------

def _need_n(cfg):
    if cfg.get("n") is None:
        raise ConfigError("--n is required")
    if cfg["n"] < 2:
        raise ConfigError("--n must be at least 2")
    return int(cfg["n"])


def _kernel(cfg):
    try:
        return parse_gate(str(cfg["gate"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _protocol(kind, n, bc):
    try:
        return Protocol.build(kind, n, bc)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _check_i(cfg, n):
    if not 1 <= cfg["i"] <= n:
        raise ConfigError(f"--i {cfg['i']} outside 1..{n}")


def _spectrum(protocol, kernel, method="auto", tol=1e-10, max_n=None):
    if method == "dense" or (method == "auto" and protocol.n <= 8):
        return spectral.lambda2_dense(protocol, kernel)
    if method == "arnoldi":
        return spectral.lambda2_arnoldi(protocol, kernel, max_n=max_n)
    return spectral.lambda2_matrix_free(protocol, kernel, tol=tol, max_n=max_n)


# -- subcommands -----------------------------------------------------------

def cmd_relax(cfg, out: Writer):
    n = _need_n(cfg)
    _check_i(cfg, n)
    kernel = _kernel(cfg)
    protocol = _protocol(cfg["proto"], n, cfg["bc"])
    sites = parse_sites(cfg.get("j"), n)
    horizon = cfg.get("horizon") or 3 * n
    ticks = int(round(horizon * protocol.ticks_per_period))
    degenerate = kernel.is_swap or kernel.is_identity
    if degenerate:
        warnings.warn(f"gate {kernel.describe()} does not relax; rates are not defined", stacklevel=2)

    series = evolve(protocol, kernel, cfg["i"], ticks, deviation=not degenerate,
                    max_n=cfg.get("max_n"))
    out.csv("otoc.csv", analysis.series_to_csv(series, sites, with_deviation=True))

    ref_n = cfg.get("ref_n") or n
    ref_specs = cfg.get("refs") or f"{cfg['proto']}:{cfg['bc']}"
    refs = {}
    ref_rows = {}
    for item in str(ref_specs).split(","):
        kind, _, bc = item.strip().partition(":")
        bc = bc or cfg["bc"]
        rn = ref_n if not (kind == "bw" and bc == "pbc" and ref_n % 2) else ref_n - 1
        res = _spectrum(_protocol(kind, rn, bc), kernel, max_n=cfg.get("max_n"))
        label = f"{kind}-{bc}-n{rn}"
        refs[label] = res
        ref_rows[label] = res.to_dict()
    gclass = classify_gate(kernel.scalars) if kernel.scalars is not None else None
    if gclass is GateClass.DUAL_UNITARY and kernel.gate is not None:
        lam = lambda2_spbc_dual(kernel.gate.az)
        refs["s-pbc-dual-analytic"] = lam
        ref_rows["s-pbc-dual-analytic"] = {"lambda2_abs": lam, "rate": -math.log(lam)}

    rates_csv = []
    reports = {}
    for j in sites:
        rs = analysis.rate_series(series, j)
        body = rs.to_csv()
        rates_csv.append(body if not rates_csv else body.split("\n", 1)[1])
        if degenerate:
            reports[str(j)] = {"degenerate": True, "gate": kernel.describe()}
            continue
        t_c = None
        spikes = []
        if protocol.kind is Kind.BW and j != cfg["i"]:
            if protocol.boundary is Boundary.PBC:
                t_c = analysis.predict_transition_time(n, cfg["i"], j, "bw", "pbc", gclass)
            spikes = analysis.predict_spike_times(n, cfg["i"], j, cfg["bc"], ticks)
        try:
            rep = analysis.phantom_report(series, j, refs, t_c, spikes)
            reports[str(j)] = rep.to_dict()
        except analysis.WindowTooShortError as exc:
            reports[str(j)] = {"error": str(exc), "t_c_predicted": t_c}
        reports[str(j)]["spike_ticks"] = spikes
    out.csv("rates.csv", "".join(rates_csv))
    out.json("report.json", {"references": ref_rows, "reports": reports,
                             "degenerate": degenerate})


def cmd_lightcone(cfg, out: Writer):
    n = _need_n(cfg)
    _check_i(cfg, n)
    if cfg["proto"] != "bw":
        raise ConfigError("the light-cone edge values are defined for the brick-wall protocol")
    kernel = _kernel(cfg)
    protocol = _protocol("bw", n, cfg["bc"])
    horizon = cfg.get("horizon") or n / 2
    ticks = int(round(horizon * 2))
    series = evolve(protocol, kernel, cfg["i"], ticks, max_n=cfg.get("max_n"))
    out.csv("grid.csv", analysis.series_to_csv(series))
    lines = ["tick,j,edge,simulated,predicted,abs_error"]
    for tau in range(1, ticks + 1):
        for j, edge in analysis.lightcone_boundary(n, cfg["i"], tau, cfg["bc"]):
            sim = float(series.values[tau, j - 1])
            pred = analysis.lightcone_value(kernel, cfg["i"], j, tau, n, cfg["bc"])
            lines.append(f"{tau},{j},{edge},{sim!r},{pred!r},{abs(sim - pred)!r}")
    out.csv("boundary.csv", "\n".join(lines) + "\n")


def cmd_spectrum(cfg, out: Writer):
    n = _need_n(cfg)
    kernel = _kernel(cfg)
    protocol = _protocol(cfg["proto"], n, cfg["bc"])
    if cfg["method"] == "dense" and n > spectral.DENSE_MAX_N:
        raise ConfigError(f"dense method limited to n <= {spectral.DENSE_MAX_N}")
    res = _spectrum(protocol, kernel, cfg["method"], cfg["tol"], cfg.get("max_n"))
    payload = {"result": res.to_dict()}
    if (protocol.kind is Kind.S and protocol.boundary is Boundary.PBC and kernel.gate is not None
            and kernel.scalars is not None
            and classify_gate(kernel.scalars) is GateClass.DUAL_UNITARY):
        payload["dual_unitary_prediction"] = lambda2_spbc_dual(kernel.gate.az)
    out.json("spectrum.json", payload)
    print(f"|lambda_2| = {res.lambda2_abs:.12f}  rate = {res.rate:.12f}  ({res.method})")


def cmd_u4(cfg, out: Writer):
    n = _need_n(cfg)
    _check_i(cfg, n)
    q = int(cfg["q"])
    if q < 2:
        raise ConfigError("--q must be at least 2")
    tau_max = cfg.get("tau") or 2 * n
    sites = parse_sites(cfg.get("j"), n)
    try:
        table = u4.dw_otoc_table(n, cfg["i"], tau_max, q, cfg["bc"], exact=cfg.get("exact", False))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    oinf = 1.0 + 1.0 / (q**(2 * n) - 1)
    # one row per method; t = tau / 2 in periods
    lines = ["tau,t,j,q,value,method"]
    for tau in range(tau_max + 1):
        for j in sites:
            val = float(table[tau][j - 1])
            lines.append(f"{tau},{tau / 2:g},{j},{q},{val!r},dw_{cfg['bc']}")
            if tau >= 1:
                dj = u4.delta_j_from_sites(cfg["i"], j, tau)
                inf = float(u4.otoc_u4_infinite(dj, tau, q))
                lines.append(f"{tau},{tau / 2:g},{j},{q},{inf!r},infinite")
    out.csv("u4.csv", "\n".join(lines) + "\n")
    out.json("u4.json", {"asymptotic_rate": u4.u4_asymptotic_rate(q), "o_infinity": oinf})


def _realization(args):
    protocol, gate, scenario, i, ticks, seed, letter, per_step = args
    return montecarlo.run_realization(protocol, gate, scenario, i, ticks, seed,
                                      letter=letter, homx_per_step=per_step).values


def cmd_selfavg(cfg, out: Writer):
    n = _need_n(cfg)
    _check_i(cfg, n)
    if cfg.get("az") is not None:
        gate = CanonicalGate(1.0, 1.0, float(cfg["az"]))
    elif cfg.get("gate"):
        kernel = _kernel(cfg)
        if kernel.gate is None:
            raise ConfigError("realizations need a concrete gate, not effective scalars")
        gate = kernel.gate
    else:
        raise ConfigError("give --az or --gate")
    if n > montecarlo.MAX_QUBITS:
        raise ResourceGuardError(f"n={n} exceeds the {montecarlo.MAX_QUBITS}-qubit coefficient budget")
    try:
        scenario = montecarlo.RandomnessScenario.parse(cfg["scenario"])
    except ValueError:
        raise ConfigError(f"unknown scenario {cfg['scenario']!r}") from None
    protocol = _protocol(cfg["proto"], n, cfg["bc"])
    if not protocol.deterministic:
        raise ConfigError("realizations need the bw or s protocol")
    seeds = parse_seeds(cfg["seeds"])
    if not seeds:
        raise ConfigError("no seeds given")
    sites = parse_sites(cfg.get("j"), n)
    horizon = cfg.get("horizon") or n
    ticks = int(round(horizon * protocol.ticks_per_period))
    jobs = [(protocol, gate, scenario, cfg["i"], ticks, s, cfg["letter"], cfg["homx_per_step"])
            for s in seeds]
    workers = cfg.get("workers") or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            runs = list(pool.map(_realization, jobs))
    else:
        runs = [_realization(job) for job in jobs]
    stack = np.stack(runs)
    mean = stack.mean(axis=0)
    stderr = stack.std(axis=0, ddof=1) / math.sqrt(len(runs)) if len(runs) > 1 else np.zeros_like(mean)
    markov = evolve(protocol, kernel_from_gate(gate), cfg["i"], ticks, max_n=cfg.get("max_n"))
    oinf = o_infinity(n)
    lines = ["t,j,otoc,stderr,markov,log_abs_deviation"]
    tpp = protocol.ticks_per_period
    for k in range(ticks + 1):
        for j in sites:
            dev = abs(mean[k, j - 1] - oinf)
            logd = math.log(dev) if dev > 0 else float("-inf")
            lines.append(f"{k / tpp:g},{j},{float(mean[k, j - 1])!r},{float(stderr[k, j - 1])!r},"
                         f"{float(markov.values[k, j - 1])!r},{logd!r}")
    out.csv("selfavg.csv", "\n".join(lines) + "\n")
    rows = ["t,j,seed,scenario,otoc"]
    for seed, run_values in zip(seeds, runs):
        for k in range(ticks + 1):
            for j in sites:
                rows.append(f"{k / tpp:g},{j},{seed},{scenario.value},{float(run_values[k, j - 1])!r}")
    out.csv("realizations.csv", "\n".join(rows) + "\n")
    summary = {}
    for j in sites:
        entry = {}
        if protocol.kind is Kind.BW and protocol.boundary is Boundary.PBC and j != cfg["i"]:
            entry["t_c_predicted"] = analysis.predict_transition_time(
                n, cfg["i"], j, "bw", "pbc", classify_gate(gate))
        sel = slice(0, ticks + 1, tpp)
        dev = np.abs(mean[sel, j - 1] - oinf)
        times = np.arange(len(dev), dtype=float)
        ok = dev > analysis.FIT_FLOOR
        if np.count_nonzero(ok) >= 4:
            hinge, early, late = analysis.hinge_fit(times[ok], np.log(dev[ok]))
            entry.update(hinge=hinge, early_rate=early, late_rate=late)
        summary[str(j)] = entry
    out.json("selfavg.json", {"seeds": len(seeds), "scenario": scenario.value,
                              "summary": summary})


COMMANDS = {
    "relax": cmd_relax,
    "lightcone": cmd_lightcone,
    "spectrum": cmd_spectrum,
    "u4": cmd_u4,
    "selfavg": cmd_selfavg,
}


def run(cfg: dict) -> int:
    threads = cfg.get("threads") or os.environ.get(THREADS_ENV)
    if threads:
        set_threads(int(threads))
    writer = Writer(cfg["out"], cfg)
    COMMANDS[cfg["subcommand"]](cfg, writer)
    for path in writer.written:
        print(path)
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        cfg = parse_config(argv)
        return run(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceGuardError as exc:
        print(f"resource guard: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (spectral.NumericalIntegrityError, montecarlo.NormDriftError,
            u4.FormulaInterpretationError) as exc:
        print(f"numerical integrity failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
