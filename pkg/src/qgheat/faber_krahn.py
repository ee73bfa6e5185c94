"""Probabilistic heat content, graph comparison and Faber-Krahn certificates.

The heat content of an equilateral graph with Dirichlet vertex ``v_D`` is

    Q_t = (deg(v_D)/2) * sum_{n>=0} alpha_n(t) P[tau >= n+1]
        = (deg(v_D)/2) * [alpha_0 E[tau] + sum_{n>=1} (alpha_n - alpha_{n-1}) E[(tau-n)^+]]

where ``tau`` is the return time of the symmetric walk to ``v_D``.  The
first ("pre") form and the second ("rearranged") form are related by
summation by parts.  Both are linear in the ``alpha`` table, so they share
one propagated error; they differ only in how the truncated tail is bounded.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from . import discrete_walk as dw
from .alpha_engine import (
    ALL_CONVENTIONS,
    SELECTED_CONVENTION,
    AlphaTable,
    Convention,
    UnresolvedError,
    build_alpha_table,
    default_t_grid,
    hierarchy_bound,
    hierarchy_ratio,
)
from .artifacts import CsvTable, fmt
from .curves import HeatContentCurve, Method
from .discrete_walk import Estimate
from .graph_model import EquilateralGraph, MetricGraph, as_equilateral, path_graph
from .spectral import SpectralData, cn_heat_content, mercer_curve, spectral_data


class CertificateError(ValueError):
    """A certificate precondition fails."""


class CertificateUnresolved(CertificateError):
    """The inputs are admissible but the numerics do not resolve the certificate."""


class ReductionWarning(UserWarning):
    """The small-time argument is stated for a Dirichlet vertex of degree one."""


INCONCLUSIVE = "INCONCLUSIVE"


@lru_cache(maxsize=32)
def cached_alpha_table(ell: float, conv: Convention = SELECTED_CONVENTION, t_min: float = 1e-3,
                       t_max: float = 1e2, per_decade: int = 200, n_max: int = 200) -> AlphaTable:
    """Default-grid table over ``[t_min ell^2, t_max ell^2]``, memoised per process."""
    return build_alpha_table(ell, conv, default_t_grid(ell, t_min, t_max, per_decade), n_max)


def _walk(g: EquilateralGraph, n_max: int, exact: bool) -> dw.HittingDistribution:
    v = g.dirichlet_vertex
    return dw.hitting_distribution(dw.build_chain(g), v, n_max, exact=exact)


# ---------------------------------------------------------------------------
# Heat content from the walk and the alpha table
# ---------------------------------------------------------------------------


@dataclass
class ProbabilisticTerms:
    """Walk-side ingredients: ``mu_n = P[tau >= n+1]`` and ``T_n = E[(tau-n)^+]``."""

    mu: np.ndarray
    tails: np.ndarray
    tail_errors: np.ndarray
    degree: int

    @classmethod
    def from_distribution(cls, dist: dw.HittingDistribution, degree: int) -> "ProbabilisticTerms":
        mu = np.array([float(x) for x in dist.survival])
        tails, errs = dw.tail_expectations(dist)
        return cls(mu, tails, errs, degree)


def _check_table(g: EquilateralGraph, table: AlphaTable) -> None:
    if not math.isclose(table.ell, g.ell, rel_tol=1e-12):
        raise ValueError(f"table built for ell={table.ell}, graph has ell={g.ell}")


def _heat_content_rows(terms: ProbabilisticTerms, table: AlphaTable, rows, form: str):
    """Values and error bounds for table rows ``rows``."""
    N = table.n_max
    if len(terms.mu) < N + 2:
        raise ValueError(f"walk truncated at {len(terms.mu) - 1}, need at least n_max + 1 = {N + 1}")
    ell = table.ell
    F = table.deficit[rows]
    err_a = table.truncation_error[rows]
    mu = terms.mu[: N + 1]
    T = terms.tails
    half_m = 0.5 * terms.degree
    # tail of the n-sum beyond N
    t_next = T[N + 1] + terms.tail_errors[N + 1]
    if form == "pre":
        alpha = ell * (1.0 - F)
        head = alpha @ mu
        tail_lo = alpha[:, N] * max(T[N + 1] - terms.tail_errors[N + 1], 0.0)
        tail_hi = ell * t_next
    elif form == "rearranged":
        gaps = ell * (F[:, :-1] - F[:, 1:])
        head = ell * (1.0 - F[:, 0]) * T[0] + gaps @ T[1 : N + 1]
        tail_lo = np.zeros(len(F))
        tail_hi = ell * F[:, N] * t_next
    else:
        raise ValueError(f"unknown form {form!r}")
    value = half_m * (head + 0.5 * (tail_lo + tail_hi))
    # both sums are linear in alpha (weights mu) and in mu (weights <= ell)
    walk_err = ell * terms.tail_errors[0]
    err = half_m * (err_a @ mu + walk_err + 0.5 * (tail_hi - tail_lo))
    return value, err


def probabilistic_heat_content(g, table: AlphaTable, dist: dw.HittingDistribution | None = None, t: float | None = None,
                               *, form: str = "rearranged") -> Estimate:
    """``Q_t`` at a grid point of ``table`` from the walk/alpha expansion."""
    g = as_equilateral(g)
    _check_table(g, table)
    if dist is None:
        dist = _walk(g, table.n_max + 1, exact=False)
    if dist.start != g.dirichlet_vertex or dist.target != g.dirichlet_vertex:
        raise ValueError("distribution must start and end at the Dirichlet vertex")
    terms = ProbabilisticTerms.from_distribution(dist, g.degree(g.dirichlet_vertex))
    i = table.index_of(t)
    v, e = _heat_content_rows(terms, table, [i], form)
    return Estimate(float(v[0]), float(e[0]))


def probabilistic_curve(g, table: AlphaTable | None = None, *, form: str = "rearranged", exact: bool = False,
                        dist: dw.HittingDistribution | None = None) -> HeatContentCurve:
    """``Q_t`` on every grid point of ``table`` (default: the cached default table)."""
    g = as_equilateral(g)
    if table is None:
        table = cached_alpha_table(g.ell)
    _check_table(g, table)
    if dist is None:
        dist = _walk(g, table.n_max + 1, exact)
    terms = ProbabilisticTerms.from_distribution(dist, g.degree(g.dirichlet_vertex))
    v, e = _heat_content_rows(terms, table, slice(None), form)
    return HeatContentCurve(table.t_grid, v, e, Method.PROBABILISTIC, g.base.name, g.total_length, {
        "convention": table.convention.tag, "n_max": str(table.n_max), "form": form, "h": fmt(table.h)})


def truncation_budget_ok(g, table: AlphaTable, tolerance: float = 1e-3) -> bool:
    """``(ell - alpha_{n_max}(t_min)) E[tau] < tolerance * ell``."""
    g = as_equilateral(g)
    e_tau = float(dw.return_time_identity(g, g.dirichlet_vertex))
    return table.ell * table.deficit[0, -1] * e_tau < tolerance * table.ell


# ---------------------------------------------------------------------------
# Comparison of two graphs with equal edge count and Dirichlet degree
# ---------------------------------------------------------------------------


@dataclass
class Comparison:
    t: float
    value: float
    error: float
    inner: list  # D_n = sum_{k<=n} (n-k)(P1[tau=k] - P2[tau=k]), n = 0..n_max

    @property
    def sign(self):
        if abs(self.value) > self.error:
            return 1 if self.value > 0 else -1
        return INCONCLUSIVE


def comparison_inner_sums(p1, p2, n_max: int) -> list:
    """``D_n`` for ``n = 0..n_max`` (exact when the inputs are fractions)."""
    diff = [a - b for a, b in zip(p1, p2)]
    out = []
    # D_n = D_{n-1} + sum_{k<=n-1} diff_k: running first and second sums
    first = 0 * diff[0]
    D = 0 * diff[0]
    for n in range(n_max + 1):
        out.append(D)
        first = first + diff[n] if n < len(diff) else first
        D = D + first
    return out


def compare_graphs(g1, g2, table: AlphaTable, t: float, *, exact: bool = True,
                   dists: tuple | None = None) -> Comparison:
    """``Q_t(g1) - Q_t(g2)`` from the difference of the return-time laws."""
    g1, g2 = as_equilateral(g1), as_equilateral(g2)
    if g1.n_edges != g2.n_edges:
        raise ValueError(f"edge counts differ: {g1.n_edges} vs {g2.n_edges}")
    m1, m2 = g1.degree(g1.dirichlet_vertex), g2.degree(g2.dirichlet_vertex)
    if m1 != m2:
        raise ValueError(f"Dirichlet degrees differ: {m1} vs {m2}")
    if not math.isclose(g1.ell, g2.ell, rel_tol=1e-12):
        raise ValueError("edge lengths differ")
    _check_table(g1, table)
    N = table.n_max
    d1, d2 = dists if dists is not None else (_walk(g1, N + 1, exact), _walk(g2, N + 1, exact))
    D = comparison_inner_sums(d1.pmf, d2.pmf, N)
    Df = np.array([float(x) for x in D])
    i = table.index_of(t)
    F = table.deficit[i]
    e = table.deficit_error[i]
    ell = table.ell
    gaps = ell * (F[:-1] - F[1:])
    value = 0.5 * m1 * float(gaps @ Df[1:])
    # tail: |D_n| <= T1_n + T2_n <= 2 E[tau] for all n; remaining gap mass is ell F_N
    t1, _ = dw.tail_expectations(d1)
    t2, _ = dw.tail_expectations(d2)
    tail = ell * F[N] * (t1[N] + t2[N])
    err = 0.5 * m1 * (ell * (e[:-1] + e[1:]) @ np.abs(Df[1:]) + tail)
    if not exact:
        err += 0.5 * m1 * float(np.abs(gaps).sum()) * 1e-13 * N
    return Comparison(float(table.t_grid[i]), value, float(err), D)


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------


def small_time_k0(g) -> int:
    """Twice the combinatorial distance from ``v_D`` to the nearest vertex of degree >= 3."""
    g = as_equilateral(g)
    dist = g.base.distances_from(g.dirichlet_vertex)
    branch = [d for v, d in dist.items() if g.degree(v) >= 3 and v != g.dirichlet_vertex]
    if not branch:
        raise CertificateError("no vertex of degree >= 3 away from the Dirichlet vertex")
    return 2 * min(branch)


def comparison_path(g) -> EquilateralGraph:
    """Path with the same edge count and edge length as ``g``."""
    g = as_equilateral(g)
    return as_equilateral(path_graph(g.total_length, g.n_edges))


@dataclass
class SmallTimeCertificate:
    k0: int
    C: Fraction
    t0: float | None
    N: int
    ell: float
    graph_name: str = ""
    threshold: float = field(init=False)
    rows: list = field(default_factory=list)  # (t, ratio_upper, route, certified)
    verification: list = field(default_factory=list)  # (t, diff, err, sign)

    def __post_init__(self):
        self.threshold = float(self.C) / (2 * self.N)

    @property
    def verified(self) -> bool:
        return all(sign != -1 for *_, sign in self.verification) and any(s == 1 for *_, s in self.verification)

    def to_csv(self) -> CsvTable:
        table = CsvTable(["t", "ratio_upper", "route", "certified", "difference", "difference_error", "sign"], meta={
            "graph": self.graph_name, "k0": str(self.k0), "C": fmt(self.C), "N": str(self.N), "ell": fmt(self.ell),
            "threshold": fmt(self.threshold), "t0": "none" if self.t0 is None else fmt(self.t0)})
        ver = {round(t, 15): (d, e, s) for t, d, e, s in self.verification}
        for t, r, route, ok in self.rows:
            d, e, s = ver.get(round(t, 15), (math.nan, math.nan, ""))
            table.add_row([t, r, route, ok, d, e, str(s)])
        return table


def small_time_certificate(g, table: AlphaTable | None = None, *, verify_points: int | None = None) -> SmallTimeCertificate:
    """Certificate for ``Q_t(path) > Q_t(g)`` on ``t <= t0``.

    With ``N`` edges and ``C = P_path[tau = k0] - P_g[tau = k0]`` the
    difference is positive whenever ``C/(2N)`` exceeds the hierarchy ratio
    ``(ell - alpha_{k0+1})/(alpha_{k0+1} - alpha_{k0})``.  The ratio's upper
    bound comes from the table where resolved and otherwise from the
    analytic bound ``P[Y<t]/(1 - P[Y<t])``.  ``t0`` is the largest grid time
    up to which every grid point is certified.
    """
    g = as_equilateral(g)
    if g.base.is_path():
        raise CertificateError("graph is a path")
    vD = g.dirichlet_vertex
    if g.degree(vD) != 1:
        warnings.warn(
            f"deg(v_D) = {g.degree(vD)}; the small-time argument assumes degree one "
            "(reduction by monotonicity in the degree is not applied)", ReductionWarning, stacklevel=2)
    k0 = small_time_k0(g)
    if table is None:
        table = cached_alpha_table(g.ell)
    _check_table(g, table)
    if k0 + 1 > table.n_max:
        raise ValueError("table n_max too small for k0 + 1")
    path = comparison_path(g)
    d_path = _walk(path, table.n_max + 1, exact=True)
    d_g = _walk(g, table.n_max + 1, exact=True)
    C = d_path.pmf[k0] - d_g.pmf[k0]
    N = g.n_edges
    cert = SmallTimeCertificate(k0, C, None, N, g.ell, g.base.name)
    if C <= 0:
        raise CertificateUnresolved(f"C = {C} is not positive")
    analytic = hierarchy_bound(table.t_grid, g.ell, table.convention)
    t0 = None
    for i, t in enumerate(table.t_grid):
        best, route = float(analytic[i]), "analytic"
        try:
            r = hierarchy_ratio(table, k0, t)
            if r.upper < best:
                best, route = float(r.upper), "table"
        except UnresolvedError:
            pass
        ok = best < cert.threshold
        cert.rows.append((float(t), best, route, ok))
        if ok and (t0 is not None or i == 0):
            t0 = float(t)
        elif not ok:
            break
    cert.t0 = t0
    if t0 is not None:
        ts = table.t_grid[table.t_grid <= t0]
        if verify_points is not None and len(ts) > verify_points:
            ts = ts[np.linspace(0, len(ts) - 1, verify_points).astype(int)]
        if path.degree(path.dirichlet_vertex) == g.degree(vD):
            for t in ts:
                c = compare_graphs(path, g, table, t, dists=(d_path, d_g))
                cert.verification.append((float(t), c.value, c.error, c.sign))
        else:
            # the difference formula needs equal Dirichlet degrees; fall back to two curves
            a = probabilistic_curve(path, table, dist=d_path)
            b = probabilistic_curve(g, table, dist=d_g)
            for t in ts:
                i = table.index_of(t)
                d, e = a.values[i] - b.values[i], a.errors[i] + b.errors[i]
                cert.verification.append((float(t), float(d), float(e), _signed(d, e)))
    return cert


@dataclass
class LargeTimeCertificate:
    T0: float
    gap_lower: float
    lambda1_path: float
    lambda1_graph: float
    o1_path_sq: float
    total_length: float
    verification: list = field(default_factory=list)  # (t, diff, err, sign)

    @property
    def verified(self) -> bool:
        return all(s == 1 for *_, s in self.verification)

    def to_csv(self) -> CsvTable:
        table = CsvTable(["t", "difference", "difference_error", "sign"], meta={
            "T0": fmt(self.T0), "gap_lower": fmt(self.gap_lower), "lambda1_path": fmt(self.lambda1_path),
            "lambda1_graph": fmt(self.lambda1_graph), "o1_path_sq": fmt(self.o1_path_sq),
            "total_length": fmt(self.total_length)})
        for row in self.verification:
            table.add_row([row[0], row[1], row[2], str(row[3])])
        return table


def large_time_certificate(s_path: SpectralData, s_g: SpectralData, total_length: float,
                           path_curve: HeatContentCurve | None = None,
                           graph_curve: HeatContentCurve | None = None) -> LargeTimeCertificate:
    """``T0`` beyond which ``Q_t(path) > Q_t(g)``.

    From ``Q_path >= exp(-t lambda_1(path)) o_1(path)^2`` and
    ``Q_g <= exp(-t lambda_1(g)) |Gamma|``: ``T0 = log(|Gamma|/o_1^2) / gap``
    with the gap bounded below (conforming elements bound ``lambda_1(path)``
    from above; ``lambda_1(g)`` is lowered by its error estimate) and
    ``o_1^2`` bounded below by its change under mesh doubling.
    """
    lam_g_lo, lam_g = s_g.lambda1_bounds()
    _, lam_p_hi = s_path.lambda1_bounds()
    gap = lam_g_lo - lam_p_hi
    if not gap > 0:
        raise CertificateUnresolved(
            f"eigenvalue gap not resolved: lambda_1(g) >= {lam_g_lo:.6g}, lambda_1(path) <= {lam_p_hi:.6g}; refine the mesh")
    o1 = float(s_path.overlaps_sq[0])
    o1_err = float(getattr(s_path, "o1_error", 0.0))
    o1_lo = o1 - o1_err
    T0 = max(math.log(total_length / o1_lo), 0.0) / gap
    cert = LargeTimeCertificate(T0, gap, lam_p_hi, lam_g, o1_lo, total_length)
    if path_curve is not None and graph_curve is not None:
        for i, t in enumerate(path_curve.t_grid):
            if t >= T0:
                d = path_curve.values[i] - graph_curve.values[i]
                e = path_curve.errors[i] + graph_curve.errors[i]
                cert.verification.append((float(t), float(d), float(e), 1 if d > e else (-1 if -d > e else INCONCLUSIVE)))
    return cert


def path_spectrum(g, h: float | None = None) -> tuple[SpectralData, SpectralData]:
    """Spectral data (with error estimates) of ``g`` and its comparison path."""
    g = as_equilateral(g)
    path = comparison_path(g)
    h = min(g.base.lengths) / 100.0 if h is None else h
    s_g = spectral_data(g.base, h)
    s_p = spectral_data(path.base, h)
    coarse = spectral_data(path.base, 2 * h, with_error=False)
    s_p.o1_error = 2.0 * abs(coarse.overlaps_sq[0] - s_p.overlaps_sq[0]) / 3.0
    return s_p, s_g


# ---------------------------------------------------------------------------
# Scans
# ---------------------------------------------------------------------------


@dataclass
class ScanRow:
    t: float
    differences: dict  # method -> (difference, error, sign)
    verdict: object
    reason: str


@dataclass
class ScanResult:
    graph_name: str
    rows: list
    small: SmallTimeCertificate | None = None
    large: LargeTimeCertificate | None = None

    def extremes_resolved(self) -> bool:
        return self.rows[0].verdict != INCONCLUSIVE and self.rows[-1].verdict != INCONCLUSIVE

    def to_csv(self) -> CsvTable:
        methods = sorted({m for r in self.rows for m in r.differences})
        cols = ["t"] + [f"{m}_{c}" for m in methods for c in ("diff", "err", "sign")] + ["verdict", "reason"]
        table = CsvTable(cols, meta={"graph": self.graph_name})
        for r in self.rows:
            vals = [r.t]
            for m in methods:
                d, e, s = r.differences.get(m, (math.nan, math.nan, ""))
                vals += [d, e, str(s)]
            table.add_row(vals + [str(r.verdict), r.reason])
        return table


def _signed(d, e):
    if not (np.isfinite(d) and np.isfinite(e)):
        return INCONCLUSIVE
    return 1 if d > e else (-1 if -d > e else INCONCLUSIVE)


def crossover_scan(g, t_grid=None, methods=("MERCER", "PROBABILISTIC"), *, table: AlphaTable | None = None,
                   certificates: bool = True, mc_config=None) -> ScanResult:
    """Sign of ``Q_t(path) - Q_t(g)`` with combined uncertainty per method.

    A grid point is positive/negative when some method resolves that sign
    and none resolves the opposite one, or when a certificate covers it
    (``t <= t0`` or ``t >= T0``).  Everything else is INCONCLUSIVE.
    """
    g = as_equilateral(g)
    path = comparison_path(g)
    if t_grid is None:
        t_grid = default_t_grid(g.ell)
    t_grid = np.asarray(t_grid, dtype=float)
    diffs = {}
    if "MERCER" in methods:
        a = mercer_curve(path.base, t_grid)
        b = mercer_curve(g.base, t_grid)
        diffs["MERCER"] = (a.values - b.values, a.errors + b.errors)
    if "CN" in methods:
        a = cn_heat_content(path.base, t_grid=t_grid)
        b = cn_heat_content(g.base, t_grid=t_grid)
        diffs["CN"] = (a.values - b.values, a.errors + b.errors)
    if "PROBABILISTIC" in methods:
        if table is None:
            table = build_alpha_table(g.ell, SELECTED_CONVENTION, t_grid, 200)
        same_shape = g.degree(g.dirichlet_vertex) == path.degree(path.dirichlet_vertex)
        if same_shape:
            N = table.n_max
            dists = (_walk(path, N + 1, True), _walk(g, N + 1, True))
            vals = [compare_graphs(path, g, table, t, dists=dists) for t in table.t_grid]
            d = np.array([c.value for c in vals])
            e = np.array([c.error for c in vals])
        else:
            a = probabilistic_curve(path, table)
            b = probabilistic_curve(g, table)
            d, e = a.values - b.values, a.errors + b.errors
        diffs["PROBABILISTIC"] = (d, e)
    if "MONTE_CARLO" in methods:
        from .bm_sim import simulate_survival
        a = simulate_survival(path.base, mc_config, t_grid)
        b = simulate_survival(g.base, mc_config, t_grid)
        # 3 standard errors of the difference of independent estimates
        diffs["MONTE_CARLO"] = (a.survival - b.survival, 3.0 * np.hypot(a.std_error, b.std_error))

    small = large = None
    if certificates:
        try:
            small = small_time_certificate(g, table if table is not None else None, verify_points=25)
        except CertificateError:
            small = None
        try:
            s_p, s_g = path_spectrum(g)
            pc = mercer_curve(path.base, t_grid)
            gc = mercer_curve(g.base, t_grid)
            large = large_time_certificate(s_p, s_g, g.total_length, pc, gc)
        except CertificateError:
            large = None

    rows = []
    for i, t in enumerate(t_grid):
        per = {}
        for m, (d, e) in diffs.items():
            per[m] = (float(d[i]), float(e[i]), _signed(d[i], e[i]))
        signs = {s for *_, s in per.values() if s != INCONCLUSIVE}
        if small is not None and small.t0 is not None and t <= small.t0 * (1 + 1e-12):
            verdict, reason = 1, "small-time certificate"
            if -1 in signs:
                verdict, reason = INCONCLUSIVE, "certificate contradicted by a method"
        elif large is not None and t >= large.T0:
            verdict, reason = 1, "large-time certificate"
            if -1 in signs:
                verdict, reason = INCONCLUSIVE, "certificate contradicted by a method"
        elif len(signs) == 1:
            verdict = signs.pop()
            reason = "resolved by " + ", ".join(m for m, v in per.items() if v[2] == verdict)
        elif len(signs) > 1:
            verdict, reason = INCONCLUSIVE, "methods disagree"
        else:
            verdict, reason = INCONCLUSIVE, "within uncertainty"
        rows.append(ScanRow(float(t), per, verdict, reason))
    return ScanResult(g.base.name, rows, small, large)


# ---------------------------------------------------------------------------
# Convention selection
# ---------------------------------------------------------------------------


@dataclass
class ConventionSelection:
    winner: Convention
    deviations: dict  # tag -> worst relative deviation from the Mercer curve
    t_range: tuple

    def to_csv(self) -> CsvTable:
        table = CsvTable(["convention", "max_relative_deviation", "selected"],
                         meta={"t_min": fmt(self.t_range[0]), "t_max": fmt(self.t_range[1])})
        for tag, dev in self.deviations.items():
            table.add_row([tag, dev, tag == self.winner.tag])
        return table


def select_convention(graphs=None, t_min: float = 0.05, t_max: float = 5.0, per_decade: int = 20,
                      n_max: int = 120) -> ConventionSelection:
    """Pick the convention whose probabilistic curve best reproduces the Mercer series.

    Runs the 1-edge and 3-edge unit paths under all four conventions and
    reports the worst relative deviation over ``[t_min, t_max]`` for each.
    """
    if graphs is None:
        graphs = [path_graph(1, 1), path_graph(3, 3)]
    eqs = [as_equilateral(g) for g in graphs]
    devs = {}
    for conv in ALL_CONVENTIONS:
        worst = 0.0
        for g in eqs:
            grid = default_t_grid(g.ell, t_min, t_max, per_decade)
            table = build_alpha_table(g.ell, conv, grid, n_max, estimate_error=False)
            p = probabilistic_curve(g, table)
            m = mercer_curve(g.base, grid, spatial_error=False)
            worst = max(worst, float(np.max(np.abs(p.values - m.values) / m.values)))
        devs[conv.tag] = worst
    winner = min(ALL_CONVENTIONS, key=lambda c: devs[c.tag])
    return ConventionSelection(winner, devs, (t_min, t_max))


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


def _fmt_sign(s):
    return {1: "+", -1: "-"}.get(s, INCONCLUSIVE)


def report(g, scan: ScanResult, convention: Convention = SELECTED_CONVENTION, spectra=None,
           selection: ConventionSelection | None = None) -> str:
    """Plain-text report: inputs, convention, k0/C/t0, spectra, T0, scan table."""
    g = as_equilateral(g)
    lines = []
    lines.append("== inputs ==")
    lines.append(f"graph: {g.base.name or '(unnamed)'}")
    lines.append(f"vertices: {len(g.base.vertices)}  edges: {g.n_edges}  ell: {g.ell:g}  |Gamma|: {g.total_length:g}")
    lines.append(f"Dirichlet vertex: {g.dirichlet_vertex} (degree {g.degree(g.dirichlet_vertex)})")
    lines.append(f"t range: [{scan.rows[0].t:g}, {scan.rows[-1].t:g}], {len(scan.rows)} points")
    lines.append("")
    lines.append("== convention ==")
    lines.append(f"in force: {convention.tag}")
    if selection is not None:
        for tag, dev in selection.deviations.items():
            mark = " (selected)" if tag == selection.winner.tag else ""
            lines.append(f"  {tag}: worst relative deviation from Mercer {dev:.3e}{mark}")
    lines.append("")
    lines.append("== small-time certificate ==")
    sc = scan.small
    if sc is None:
        lines.append("not available (path or no branching vertex)")
    else:
        lines.append(f"k0 = {sc.k0}")
        lines.append(f"C = {sc.C} = {float(sc.C):.6g}")
        lines.append(f"C/(2N) = {sc.threshold:.6g}")
        lines.append(f"t0 = {'none' if sc.t0 is None else f'{sc.t0:.6g}'}  (certificate-valid threshold, not sharp)")
        pos = sum(1 for *_, s in sc.verification if s == 1)
        inc = sum(1 for *_, s in sc.verification if s == INCONCLUSIVE)
        neg = sum(1 for *_, s in sc.verification if s == -1)
        lines.append(f"verification at t <= t0: {pos} positive, {inc} unresolved, {neg} negative")
    lines.append("")
    lines.append("== spectra ==")
    if spectra is not None:
        s_p, s_g = spectra
        lines.append(f"lambda_1(path) = {s_p.eigenvalues[0]:.8g}  o_1(path)^2 = {s_p.overlaps_sq[0]:.8g}")
        lines.append(f"lambda_1(graph) = {s_g.eigenvalues[0]:.8g} +- {s_g.eigenvalue_error[0]:.2g}")
    elif scan.large is not None:
        lines.append(f"lambda_1(path) <= {scan.large.lambda1_path:.8g}")
        lines.append(f"lambda_1(graph) = {scan.large.lambda1_graph:.8g}")
    else:
        lines.append("not computed")
    lines.append("")
    lines.append("== large-time certificate ==")
    lc = scan.large
    if lc is None:
        lines.append("not available (eigenvalue gap unresolved)")
    else:
        lines.append(f"gap lower bound = {lc.gap_lower:.6g}")
        lines.append(f"T0 = {lc.T0:.6g}  (certificate-valid threshold, not sharp)")
        pos = sum(1 for *_, s in lc.verification if s == 1)
        lines.append(f"Mercer differences beyond T0: {pos}/{len(lc.verification)} positive")
    lines.append("")
    lines.append("== scan ==")
    methods = sorted({m for r in scan.rows for m in r.differences})
    header = f"{'t':>12}  " + "  ".join(f"{m + ' diff':>22}" for m in methods) + "  verdict  reason"
    lines.append(header)
    for r in scan.rows:
        cells = []
        for m in methods:
            d, e, _ = r.differences.get(m, (math.nan, math.nan, ""))
            cells.append(f"{d:>11.3e} +- {e:<8.1e}")
        lines.append(f"{r.t:>12.5g}  " + "  ".join(cells) + f"  {_fmt_sign(r.verdict):>7}  {r.reason}")
    return "\n".join(lines) + "\n"
