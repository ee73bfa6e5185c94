"""Command-line entry point: one subcommand per engine, CSV or text on output.

Exit status: 0 on success, 1 on input errors (bad flags, unreadable or
invalid graphs, inadmissible requests), 2 when a computation finishes but a
requested quantity is not resolved within its error bound.
"""

from __future__ import annotations

import argparse
import math
import sys
import traceback
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import alpha_engine as ae
from . import bm_sim
from . import discrete_walk as dw
from . import faber_krahn as fk
from . import spectral as sp
from .artifacts import CsvTable
from .graph_model import GraphError, MetricGraph, as_equilateral, load_graph, named_graph

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_UNRESOLVED = 2

SUBCOMMANDS = ("spectral", "mercer", "cn", "walk", "alpha", "mc", "prob", "compare",
               "certify-small", "certify-large", "scan")


class InputError(Exception):
    """Invalid command-line input."""


class Unresolved(Exception):
    """A result was produced but does not meet its resolution requirement."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


@dataclass
class RunConfig:
    """Resolved options of one invocation.

    Times are absolute.  Without ``times`` the grid is geometric over
    ``[tmin, tmax]`` with ``per_decade`` points per decade.
    """

    subcommand: str
    graph: str
    output: str | None = None
    tmin: float = 1e-3
    tmax: float = 1e2
    per_decade: int = 20
    times: list[float] | None = None
    convention: ae.Convention = ae.SELECTED_CONVENTION
    seed: int = 0
    n_max: int = 200
    mesh: float | None = None
    modes: int | None = None
    time_step: float | None = None
    samples: int = 100_000
    exact: bool = False
    start: str | None = None
    other: str | None = None
    form: str = "rearranged"
    methods: tuple[str, ...] = ("MERCER", "PROBABILISTIC")
    ell: float | None = None
    csv: str | None = None

    def validate(self) -> None:
        if self.subcommand not in SUBCOMMANDS:
            raise InputError(f"unknown subcommand {self.subcommand!r}")
        if self.times is None and not (0 < self.tmin < self.tmax):
            raise InputError("need 0 < tmin < tmax")
        if self.times is not None and any(not (t > 0 and math.isfinite(t)) for t in self.times):
            raise InputError("times must be positive and finite")
        if self.per_decade < 1 or self.n_max < 1 or self.samples < 1:
            raise InputError("per-decade, nmax and samples must be positive")
        if self.mesh is not None and not self.mesh > 0:
            raise InputError("mesh size must be positive")
        if self.form not in ("pre", "rearranged"):
            raise InputError("form must be 'pre' or 'rearranged'")
        bad = [m for m in self.methods if m not in ("MERCER", "PROBABILISTIC", "CN", "MONTE_CARLO")]
        if bad:
            raise InputError(f"unknown methods {bad}")

    def t_grid(self) -> np.ndarray:
        if self.times is not None:
            return np.array(sorted(self.times), dtype=float)
        return ae.default_t_grid(1.0, self.tmin, self.tmax, self.per_decade)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--graph", required=True, help="graph file (JSON) or reference name, e.g. pitchfork")
    common.add_argument("--out", "-o", dest="output", help="output path (default: stdout)")
    common.add_argument("--tmin", type=float, default=1e-3, help="smallest time of the grid (default 1e-3)")
    common.add_argument("--tmax", type=float, default=1e2, help="largest time of the grid (default 1e2)")
    common.add_argument("--per-decade", type=int, default=20, help="grid points per decade (default 20)")
    common.add_argument("--t", dest="times", type=float, nargs="+", help="explicit times (overrides the grid)")
    common.add_argument("--convention", default=ae.SELECTED_CONVENTION.tag,
                        help=f"SCALE/LAW, e.g. FULL/TWO_SIDED (default {ae.SELECTED_CONVENTION.tag})")
    common.add_argument("--seed", type=int, default=0, help="Monte Carlo seed (default 0)")
    common.add_argument("--nmax", dest="n_max", type=int, default=200, help="walk/alpha truncation (default 200)")
    common.add_argument("--h", dest="mesh", type=float, help="finite-element mesh size (default min edge / 100)")
    common.add_argument("--K", dest="modes", type=int, help="number of eigenpairs (default min(200, unknowns))")

    parser = _Parser(prog="qgheat", description="Heat content of quantum graphs.")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    sub.add_parser("spectral", parents=[common], help="eigenvalues and overlaps")
    sub.add_parser("mercer", parents=[common], help="heat content from the eigen-expansion")
    p = sub.add_parser("cn", parents=[common], help="heat content by Crank-Nicolson")
    p.add_argument("--dt", dest="time_step", type=float, help="time step (default min edge^2 * 1e-3)")
    p = sub.add_parser("walk", parents=[common], help="return/hitting time law of the discrete walk")
    p.add_argument("--start", help="start vertex (default: the Dirichlet vertex)")
    p.add_argument("--exact", action="store_true", help="rational arithmetic")
    p = sub.add_parser("alpha", parents=[common], help="alpha table of the edge length of the graph")
    p.add_argument("--ell", type=float, help="edge length (default: from the graph)")
    p = sub.add_parser("mc", parents=[common], help="Monte Carlo heat content")
    p.add_argument("--dt", dest="time_step", type=float, help="time step (default min edge^2 / 1000)")
    p.add_argument("--samples", type=int, default=100_000, help="trajectories (default 1e5)")
    p = sub.add_parser("prob", parents=[common], help="heat content from the walk/alpha expansion")
    p.add_argument("--form", default="rearranged", choices=["pre", "rearranged"])
    p.add_argument("--exact", action="store_true", help="rational walk probabilities")
    p = sub.add_parser("compare", parents=[common], help="Q(graph) - Q(other) from return-time laws")
    p.add_argument("--other", help="second graph (default: the path with the same edges)")
    sub.add_parser("certify-small", parents=[common], help="small-time certificate")
    sub.add_parser("certify-large", parents=[common], help="large-time certificate")
    p = sub.add_parser("scan", parents=[common], help="sign scan and full text report")
    p.add_argument("--methods", default="MERCER,PROBABILISTIC",
                   help="comma list of MERCER, PROBABILISTIC, CN, MONTE_CARLO")
    p.add_argument("--csv", help="also write the scan table as CSV to this path")
    p.add_argument("--samples", type=int, default=100_000, help="Monte Carlo trajectories")
    p.add_argument("--dt", dest="time_step", type=float, help="Monte Carlo time step")
    return parser


def parse_config(argv) -> RunConfig:
    ns = vars(build_parser().parse_args(argv))
    try:
        conv = ae.Convention.parse(ns.pop("convention"))
    except (KeyError, ValueError) as exc:
        raise InputError(f"bad convention: {exc}") from None
    methods = ns.pop("methods", None)
    if methods is not None:
        ns["methods"] = tuple(m.strip().upper() for m in methods.split(",") if m.strip())
    cfg = RunConfig(convention=conv, **ns)
    cfg.validate()
    return cfg


def resolve_graph(name_or_path: str) -> MetricGraph:
    path = Path(name_or_path)
    if path.is_file():
        return load_graph(path)
    try:
        return named_graph(name_or_path)
    except KeyError:
        raise InputError(f"{name_or_path!r} is neither a readable file nor a known graph name") from None


def _emit(cfg: RunConfig, text: str) -> None:
    if cfg.output is None:
        sys.stdout.write(text)
    else:
        Path(cfg.output).write_text(text, encoding="utf-8")


def _table(cfg: RunConfig, g):
    eg = as_equilateral(g)
    grid = cfg.t_grid()
    if cfg.convention == ae.SELECTED_CONVENTION and cfg.times is None and cfg.n_max == 200:
        return fk.cached_alpha_table(eg.ell, cfg.convention, cfg.tmin / eg.ell**2, cfg.tmax / eg.ell**2,
                                     cfg.per_decade, cfg.n_max)
    return ae.build_alpha_table(eg.ell, cfg.convention, grid, cfg.n_max)


def _cmd_spectral(cfg, g):
    s = sp.spectral_data(g, cfg.mesh, cfg.modes)
    _emit(cfg, s.to_csv().dumps())


def _cmd_mercer(cfg, g):
    c = sp.mercer_curve(g, cfg.t_grid(), cfg.mesh, cfg.modes)
    _emit(cfg, c.to_csv().dumps())


def _cmd_cn(cfg, g):
    c = sp.cn_heat_content(g, cfg.mesh, cfg.time_step, cfg.t_grid())
    _emit(cfg, c.to_csv().dumps())


def _cmd_walk(cfg, g):
    chain = dw.build_chain(g)
    start = g.dirichlet_vertex if cfg.start is None else cfg.start
    if start not in chain.index:
        raise InputError(f"unknown start vertex {start!r}")
    d = dw.hitting_distribution(chain, start, cfg.n_max, exact=cfg.exact)
    _emit(cfg, d.to_csv().dumps())


def _cmd_alpha(cfg, g):
    ell = as_equilateral(g).ell if cfg.ell is None else cfg.ell
    if not ell > 0:
        raise InputError("ell must be positive")
    table = ae.build_alpha_table(ell, cfg.convention, cfg.t_grid(), cfg.n_max)
    _emit(cfg, table.to_csv().dumps())
    failed = [k for k, ok in table.check_invariants().items() if not ok]
    flagged = int(np.count_nonzero(table.flags))
    if flagged or failed:
        raise Unresolved(f"alpha table: {flagged} entries above tolerance; failed invariants {failed}")


def _cmd_mc(cfg, g):
    grid = cfg.t_grid()
    dt = min(g.lengths) ** 2 / 1000.0 if cfg.time_step is None else cfg.time_step
    sim = bm_sim.SimulationConfig(dt, float(grid.max()), cfg.samples, cfg.seed, cfg.convention.generator_scale)
    est = bm_sim.simulate_survival(g, sim, grid)
    _emit(cfg, est.to_csv().dumps())


def _cmd_prob(cfg, g):
    table = _table(cfg, g)
    curve = fk.probabilistic_curve(g, table, form=cfg.form, exact=cfg.exact)
    _emit(cfg, curve.to_csv().dumps())
    if not fk.truncation_budget_ok(g, table):
        raise Unresolved("walk truncation n_max too small for the smallest grid time")


def _cmd_compare(cfg, g):
    other = fk.comparison_path(g).base if cfg.other is None else resolve_graph(cfg.other)
    table = _table(cfg, g)
    N = table.n_max
    dists = (fk._walk(as_equilateral(g), N + 1, True), fk._walk(as_equilateral(other), N + 1, True))
    out = CsvTable(["t", "difference", "error", "sign"], meta={
        "graph": g.name, "other": other.name, "convention": table.convention.tag, "n_max": str(N)})
    unresolved = 0
    for t in table.t_grid:
        c = fk.compare_graphs(g, other, table, t, dists=dists)
        out.add_row([c.t, c.value, c.error, str(c.sign)])
        unresolved += c.sign == fk.INCONCLUSIVE
    _emit(cfg, out.dumps())
    if unresolved:
        raise Unresolved(f"{unresolved} of {len(table.t_grid)} grid points unresolved")


def _reject_path(g):
    if as_equilateral(g).base.is_path():
        raise InputError("the graph is a path; there is nothing to compare")


def _cmd_certify_small(cfg, g):
    _reject_path(g)
    table = _table(cfg, g)
    cert = fk.small_time_certificate(g, table)
    _emit(cfg, cert.to_csv().dumps())
    if cert.t0 is None:
        raise Unresolved("no grid time satisfies the certificate condition")
    if any(s == -1 for *_, s in cert.verification):
        raise Unresolved("a resolved difference below t0 is negative")


def _cmd_certify_large(cfg, g):
    _reject_path(g)
    eg = as_equilateral(g)
    s_p, s_g = fk.path_spectrum(eg, cfg.mesh)
    grid = cfg.t_grid()
    pc = sp.mercer_curve(fk.comparison_path(eg).base, grid, cfg.mesh)
    gc = sp.mercer_curve(g, grid, cfg.mesh)
    cert = fk.large_time_certificate(s_p, s_g, g.total_length, pc, gc)
    _emit(cfg, cert.to_csv().dumps())
    if not cert.verified:
        raise Unresolved("a Mercer difference beyond T0 is not resolved positive")


def _cmd_scan(cfg, g):
    _reject_path(g)
    eg = as_equilateral(g)
    grid = cfg.t_grid()
    table = _table(cfg, g) if "PROBABILISTIC" in cfg.methods else None
    mc = None
    if "MONTE_CARLO" in cfg.methods:
        dt = min(g.lengths) ** 2 / 1000.0 if cfg.time_step is None else cfg.time_step
        mc = bm_sim.SimulationConfig(dt, float(grid.max()), cfg.samples, cfg.seed, cfg.convention.generator_scale)
    scan = fk.crossover_scan(eg, grid, cfg.methods, table=table, mc_config=mc)
    spectra = fk.path_spectrum(eg, cfg.mesh)
    _emit(cfg, fk.report(eg, scan, cfg.convention, spectra))
    if cfg.csv:
        scan.to_csv().write(cfg.csv)
    if not scan.extremes_resolved():
        raise Unresolved("the sign at an end of the time range is not resolved")


_COMMANDS = {
    "spectral": _cmd_spectral,
    "mercer": _cmd_mercer,
    "cn": _cmd_cn,
    "walk": _cmd_walk,
    "alpha": _cmd_alpha,
    "mc": _cmd_mc,
    "prob": _cmd_prob,
    "compare": _cmd_compare,
    "certify-small": _cmd_certify_small,
    "certify-large": _cmd_certify_large,
    "scan": _cmd_scan,
}

# engine errors that mean "the request is inadmissible" rather than "unresolved"
_INPUT_ERRORS = (InputError, GraphError, OSError, bm_sim.SimulationError, KeyError, ValueError)
_UNRESOLVED_ERRORS = (Unresolved, ae.UnresolvedError, fk.CertificateUnresolved, sp.SpectralError)


def _origin(exc: BaseException) -> str:
    """Module in which ``exc`` was raised, for error attribution."""
    tb = exc.__traceback__
    name = "qgheat.cli"
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("qgheat"):
            name = mod
        tb = tb.tb_next
    return name


def run(argv=None) -> int:
    """Execute one invocation; returns the exit status."""
    argv = sys.argv[1:] if argv is None else list(argv)
    cmd = "qgheat"
    try:
        cfg = parse_config(argv)
        cmd = f"qgheat {cfg.subcommand}"
        g = resolve_graph(cfg.graph)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            _COMMANDS[cfg.subcommand](cfg, g)
    except _UNRESOLVED_ERRORS as exc:
        print(f"{cmd}: unresolved ({_origin(exc)}): {exc}", file=sys.stderr)
        return EXIT_UNRESOLVED
    except _INPUT_ERRORS as exc:
        print(f"{cmd}: error ({_origin(exc)}): {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - report with attribution, never a bare traceback
        print(f"{cmd}: internal error ({_origin(exc)}): {exc!r}", file=sys.stderr)
        traceback.print_exc(file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
