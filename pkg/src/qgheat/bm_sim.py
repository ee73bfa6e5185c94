"""Monte Carlo Brownian motion on metric graphs.

Trajectories move by Gaussian increments along the current edge
coordinate.  When a step overshoots a vertex the residual displacement
continues into a uniformly chosen incident edge.  Between grid times a
Brownian-bridge test catches vertex visits that the discrete positions
miss (``bridge_correction``); without it absorption is only checked at
discrete times and survival is biased upward by ``O(sqrt(dt))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .alpha_engine import Convention, IncrementLaw, Scale, first_exit_cdf, increment_cdf
from .artifacts import CsvTable, fmt
from .graph_model import EquilateralGraph, MetricGraph, as_metric


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SimulationConfig:
    """Monte Carlo settings.

    ``seed`` and ``block_size`` fix the random streams: trajectory ``i``
    belongs to block ``i // block_size`` whose generator is Philox keyed by
    ``(seed, block)``.
    """

    time_step: float
    horizon: float
    samples: int
    seed: int = 0
    generator_scale: Scale = Scale.FULL
    bridge_correction: bool = True
    block_size: int = 8192

    @property
    def sigma(self) -> float:
        return self.generator_scale.sigma

    def validate(self, g: MetricGraph) -> None:
        if self.samples < 1:
            raise SimulationError("samples must be >= 1")
        if not (self.time_step > 0 and self.horizon > 0):
            raise SimulationError("time_step and horizon must be positive")
        lmin = min(g.lengths)
        if self.time_step > lmin**2 / 100 * (1 + 1e-12):
            raise SimulationError(
                f"time_step {self.time_step} exceeds (min edge length)^2/100 = {lmin**2 / 100}"
            )

    def blocks(self):
        for b, start in enumerate(range(0, self.samples, self.block_size)):
            size = min(self.block_size, self.samples - start)
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, b])))
            yield rng, size


class _Walker:
    """Vectorised Brownian particles on a metric graph (edge index, coordinate)."""

    def __init__(self, g: MetricGraph, sigma: float, dt: float, bridge: bool):
        index = {v: i for i, v in enumerate(g.vertices)}
        self.eu = np.array([index[u] for u, _, _ in g.edges])
        self.ev = np.array([index[v] for _, v, _ in g.edges])
        self.L = np.array(g.lengths)
        nv = len(g.vertices)
        inc_e = [[] for _ in range(nv)]
        inc_s = [[] for _ in range(nv)]
        for i, (u, v) in enumerate(zip(self.eu, self.ev)):
            inc_e[u].append(i)
            inc_s[u].append(0)
            inc_e[v].append(i)
            inc_s[v].append(1)
        self.deg = np.array([len(x) for x in inc_e])
        self.off = np.concatenate([[0], np.cumsum(self.deg)])
        self.inc_e = np.array(sum(inc_e, []))
        self.inc_s = np.array(sum(inc_s, []))
        self.is_d = np.array([v in g.dirichlet for v in g.vertices])
        self.sigma, self.dt, self.bridge = sigma, dt, bridge
        self.total = g.total_length

    def uniform_start(self, rng, n):
        e = rng.choice(len(self.L), size=n, p=self.L / self.L.sum())
        return e, rng.random(n) * self.L[e]

    def place(self, v, r, u):
        k = np.minimum((u * self.deg[v]).astype(int), self.deg[v] - 1)
        j = self.off[v] + k
        e = self.inc_e[j]
        x = np.where(self.inc_s[j] == 0, r, self.L[e] - r)
        return e, x

    def step(self, e, x, dz, u_touch, u_edge, rng):
        """Advance in place; return (first vertex visited, any Dirichlet visit) per particle."""
        first = np.full(len(x), -1)
        hit_d = np.zeros(len(x), dtype=bool)
        x_old = x.copy()
        e_old = e.copy()
        x += dz
        idx = np.flatnonzero((x < 0) | (x > self.L[e]))
        u = u_edge
        while idx.size:
            ee, xx = e[idx], x[idx]
            lo = xx < 0
            v = np.where(lo, self.eu[ee], self.ev[ee])
            r = np.where(lo, -xx, xx - self.L[ee])
            first[idx] = np.where(first[idx] < 0, v, first[idx])
            hit_d[idx] |= self.is_d[v]
            e[idx], x[idx] = self.place(v, r, u[idx] if u is u_edge else rng.random(idx.size))
            u = None
            idx = idx[(x[idx] < 0) | (x[idx] > self.L[e[idx]])]
        if self.bridge:
            quiet = np.flatnonzero(first < 0)
            a, b, L = x_old[quiet], x[quiet], self.L[e_old[quiet]]
            s2 = self.sigma * self.dt
            p0 = np.exp(-2.0 * a * b / s2)
            p1 = np.exp(-2.0 * (L - a) * (L - b) / s2)
            w = u_touch[quiet]
            t0 = w < p0
            t1 = ~t0 & ((w - p0) < p1 * (1.0 - p0))
            touched = t0 | t1
            if touched.any():
                sel = quiet[touched]
                ee = e_old[sel]
                v = np.where(t0[touched], self.eu[ee], self.ev[ee])
                r = np.where(t0[touched], b[touched], L[touched] - b[touched])
                first[sel] = v
                hit_d[sel] |= self.is_d[v]
                e[sel], x[sel] = self.place(v, r, u_edge[sel])
        return first, hit_d


def _record_steps(t_grid, dt):
    steps = np.rint(np.asarray(t_grid, dtype=float) / dt).astype(int)
    return steps


# ---------------------------------------------------------------------------
# Survival (Feynman-Kac)
# ---------------------------------------------------------------------------


@dataclass
class SurvivalEstimate:
    """``int_Gamma P_x[tau >= t] dx`` with binomial standard errors."""

    t_grid: np.ndarray
    survival: np.ndarray
    std_error: np.ndarray
    config: SimulationConfig
    total_length: float
    graph_name: str = ""

    def to_csv(self) -> CsvTable:
        c = self.config
        table = CsvTable(["t", "survival", "std_error"], meta={
            "graph": self.graph_name,
            "total_length": fmt(self.total_length),
            "time_step": fmt(c.time_step),
            "horizon": fmt(c.horizon),
            "samples": str(c.samples),
            "seed": str(c.seed),
            "generator_scale": c.generator_scale.value,
            "bridge_correction": fmt(c.bridge_correction),
            "block_size": str(c.block_size),
        })
        for row in zip(self.t_grid, self.survival, self.std_error):
            table.add_row(row)
        return table

    @classmethod
    def from_csv(cls, table: CsvTable) -> "SurvivalEstimate":
        m = table.meta
        cfg = SimulationConfig(float(m["time_step"]), float(m["horizon"]), int(m["samples"]), int(m["seed"]),
                               Scale(m["generator_scale"]), m["bridge_correction"] == "1", int(m["block_size"]))
        return cls(np.array(table.column("t")), np.array(table.column("survival")),
                   np.array(table.column("std_error")), cfg, float(m["total_length"]), m["graph"])


def _survival_counts(g, cfg, steps, substeps, combine):
    """Alive counts at the requested coarse steps, one row per block."""
    walker = _Walker(g, cfg.sigma, cfg.time_step / (1 if combine else substeps), cfg.bridge_correction)
    n_steps = int(steps.max()) if len(steps) else 0
    counts = []
    scale = math.sqrt(cfg.sigma * cfg.time_step / substeps)
    for rng, size in cfg.blocks():
        e, x = walker.uniform_start(rng, size)
        alive = np.arange(size)
        alive_at = np.zeros(n_steps + 1, dtype=np.int64)
        alive_at[0] = size
        for k in range(1, n_steps + 1):
            z = rng.standard_normal((substeps, size))
            ut = rng.random((substeps, size))
            ue = rng.random((substeps, size))
            if alive.size:
                if combine:
                    dz = scale * z[:, alive].sum(axis=0)
                    parts = [(dz, ut[0, alive], ue[0, alive])]
                else:
                    parts = [(scale * z[s, alive], ut[s, alive], ue[s, alive]) for s in range(substeps)]
                dead = np.zeros(alive.size, dtype=bool)
                for dz, a_t, a_e in parts:
                    _, hd = walker.step(e, x, dz, a_t, a_e, rng)
                    dead |= hd
                keep = ~dead
                alive, e, x = alive[keep], e[keep], x[keep]
            alive_at[k] = alive.size
        counts.append(alive_at[steps])
    return np.array(counts, dtype=np.int64).reshape(-1, len(steps))


def _check_grid(cfg, t_grid):
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or np.any(t_grid < 0):
        raise SimulationError("t_grid must be a 1-d array of non-negative times")
    if t_grid.size and t_grid.max() > cfg.horizon * (1 + 1e-12):
        raise SimulationError(f"horizon {cfg.horizon} shorter than max t {t_grid.max()}")
    return t_grid


def _estimate(g, cfg, t_grid, counts):
    p = counts / cfg.samples
    total = g.total_length
    se = total * np.sqrt(p * (1 - p) / cfg.samples)
    return SurvivalEstimate(t_grid, total * p, se, cfg, total, g.name)


def simulate_survival(g, cfg: SimulationConfig, t_grid) -> SurvivalEstimate:
    """Feynman-Kac estimate of the heat content with absorption at the Dirichlet set.

    Starts are uniform on the graph.  Survival at ``t`` is read at the
    nearest multiple of the time step.
    """
    g = as_metric(g)
    cfg.validate(g)
    t_grid = _check_grid(cfg, t_grid)
    steps = _record_steps(t_grid, cfg.time_step)
    counts = _survival_counts(g, cfg, steps, 1, True).sum(axis=0)
    return _estimate(g, cfg, t_grid, counts)


def halving_study(g, cfg: SimulationConfig, t_grid) -> tuple[SurvivalEstimate, SurvivalEstimate, np.ndarray]:
    """Coupled estimates at ``time_step`` and ``time_step / 2``.

    Both runs consume the same fine Gaussian increments (the coarse run sums
    pairs), so their difference isolates the time-discretisation effect.
    Vertex crossings still draw separate uniforms, so the difference keeps
    some noise; its standard error (third return value) comes from the
    spread of the per-block differences and needs at least two blocks.
    """
    g = as_metric(g)
    cfg.validate(g)
    t_grid = _check_grid(cfg, t_grid)
    steps = _record_steps(t_grid, cfg.time_step)
    coarse = _survival_counts(g, cfg, steps, 2, True)
    fine = _survival_counts(g, cfg, steps, 2, False)
    sizes = np.array([size for _, size in cfg.blocks()], dtype=float)
    if len(sizes) < 2:
        raise SimulationError("halving_study needs at least two blocks (reduce block_size)")
    rate = (coarse - fine) / sizes[:, None]
    mean = (coarse - fine).sum(axis=0) / cfg.samples
    var = (sizes[:, None] * (rate - mean) ** 2).sum(axis=0) / (len(sizes) - 1) / cfg.samples
    diff_err = g.total_length * np.sqrt(var)
    return (_estimate(g, cfg, t_grid, coarse.sum(axis=0)), _estimate(g, cfg, t_grid, fine.sum(axis=0)), diff_err)


def interval_survival_series(t, length: float = 1.0, sigma: float = 2.0, terms: int = 200) -> np.ndarray:
    """``int_0^L P_x[exit (0, L) >= t] dx`` for Brownian motion with variance rate ``sigma``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    k = 2 * np.arange(terms)[:, None] + 1
    w = 8.0 * length / (k**2 * math.pi**2)
    out = np.sum(w * np.exp(-0.5 * sigma * t[None, :] * k**2 * math.pi**2 / length**2), axis=0)
    return np.where(t == 0, length, out)


# ---------------------------------------------------------------------------
# First vertex hit and increments
# ---------------------------------------------------------------------------


@dataclass
class VertexMass:
    """Empirical ``int_Gamma P_x[v_0 = v] dx`` per vertex."""

    vertices: tuple[str, ...]
    mass: np.ndarray
    std_error: np.ndarray
    expected: np.ndarray

    def z_scores(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.abs(self.mass - self.expected) / self.std_error
        return np.where(self.std_error > 0, z, np.where(self.mass == self.expected, 0.0, np.inf))


def first_vertex_distribution(g, cfg: SimulationConfig, samples: int | None = None) -> VertexMass:
    """Mass of the first vertex reached from a uniform start, scaled by ``|Gamma|``.

    The reference value is ``ell * deg(v) / 2``.
    """
    eg = g if isinstance(g, EquilateralGraph) else None
    g = as_metric(g)
    if samples is not None:
        cfg = SimulationConfig(cfg.time_step, cfg.horizon, samples, cfg.seed, cfg.generator_scale,
                               cfg.bridge_correction, cfg.block_size)
    cfg.validate(g)
    if eg is None and len(set(g.lengths)) != 1:
        raise SimulationError("first_vertex_distribution needs an equilateral graph")
    ell = g.lengths[0]
    walker = _Walker(g, cfg.sigma, cfg.time_step, cfg.bridge_correction)
    walker.is_d[:] = False
    counts = np.zeros(len(g.vertices), dtype=np.int64)
    n_steps = int(math.ceil(cfg.horizon / cfg.time_step))
    scale = math.sqrt(cfg.sigma * cfg.time_step)
    for rng, size in cfg.blocks():
        e, x = walker.uniform_start(rng, size)
        pending = np.arange(size)
        for _ in range(n_steps):
            if not pending.size:
                break
            first, _ = walker.step(e, x, scale * rng.standard_normal(pending.size),
                                   rng.random(pending.size), rng.random(pending.size), rng)
            done = first >= 0
            np.add.at(counts, first[done], 1)
            keep = ~done
            pending, e, x = pending[keep], e[keep], x[keep]
        if pending.size:
            raise SimulationError(f"{pending.size} trajectories hit no vertex before the horizon")
    p = counts / cfg.samples
    total = g.total_length
    expected = np.array([ell * g.degree(v) / 2.0 for v in g.vertices])
    return VertexMass(g.vertices, total * p, total * np.sqrt(p * (1 - p) / cfg.samples), expected)


@dataclass
class IncrementReport:
    """Empirical laws of ``eta_0`` and ``eta_{k+1} - eta_k``."""

    samples: np.ndarray  # shape (n_trajectories, n_increments + 1); column 0 is eta_0
    ell: float
    convention: Convention
    ks_first: float
    ks_first_pvalue: float
    ks_against: dict[str, tuple[float, float]] = field(default_factory=dict)
    ks_identical: tuple[float, float] = (math.nan, math.nan)
    independence: list[float] = field(default_factory=list)

    def ecdf(self, k: int, t) -> np.ndarray:
        col = np.sort(self.samples[:, k])
        return np.searchsorted(col, np.asarray(t, dtype=float), side="right") / len(col)

    def to_csv(self) -> CsvTable:
        table = CsvTable(["quantity", "statistic", "pvalue"], meta={
            "ell": fmt(self.ell),
            "generator_scale": self.convention.generator_scale.value,
            "samples": str(self.samples.shape[0]),
            "increments": str(self.samples.shape[1] - 1),
        })
        table.add_row(["ks_eta0_vs_alpha_zero", self.ks_first, self.ks_first_pvalue])
        for law, (d, p) in self.ks_against.items():
            table.add_row([f"ks_increment1_vs_{law}", d, p])
        table.add_row(["ks_increment1_vs_increment2", *self.ks_identical])
        for k, r in enumerate(self.independence, start=1):
            table.add_row([f"distance_correlation_{k - 1}_{k}", r, math.nan])
        return table


def distance_correlation(x, y) -> float:
    """Sample distance correlation (0 for independent samples in the limit)."""
    x = np.asarray(x, dtype=float)[:, None]
    y = np.asarray(y, dtype=float)[:, None]

    def centred(z):
        d = np.abs(z - z.T)
        return d - d.mean(axis=0) - d.mean(axis=1)[:, None] + d.mean()

    a, b = centred(x), centred(y)
    dcov = (a * b).mean()
    dvx, dvy = (a * a).mean(), (b * b).mean()
    if dvx <= 0 or dvy <= 0:
        return 0.0
    return math.sqrt(max(dcov, 0.0) / math.sqrt(dvx * dvy))


def empirical_increments(
    g,
    cfg: SimulationConfig,
    n_increments: int = 3,
    samples: int | None = None,
    *,
    cdf_resolution: float = 0.05,
    independence_sample: int = 2000,
) -> IncrementReport:
    """Record ``eta_0`` and the increments ``eta_{k+1} - eta_k`` of free motion.

    ``eta_{k+1}`` is the first time after ``eta_k`` at which a vertex other
    than the one reached at ``eta_k`` is hit.  Event times are taken at the
    middle of the step in which the hit is detected; the ``eta_0`` test
    compares against the correspondingly step-rounded law because its
    density is singular at 0.  The report carries
    Kolmogorov-Smirnov distances of the first increment against both
    increment laws, a two-sample KS test between increments 1 and 2, and
    distance correlations between consecutive increments.
    """
    g_m = as_metric(g)
    samples = cfg.samples if samples is None else samples
    if samples < (1.36 / cdf_resolution) ** 2:
        raise SimulationError(
            f"{samples} samples cannot resolve the CDF to {cdf_resolution}; need >= {math.ceil((1.36 / cdf_resolution) ** 2)}"
        )
    cfg = SimulationConfig(cfg.time_step, cfg.horizon, samples, cfg.seed, cfg.generator_scale,
                           cfg.bridge_correction, cfg.block_size)
    cfg.validate(g_m)
    if len(set(g_m.lengths)) != 1:
        raise SimulationError("empirical_increments needs an equilateral graph")
    ell = g_m.lengths[0]
    walker = _Walker(g_m, cfg.sigma, cfg.time_step, cfg.bridge_correction)
    walker.is_d[:] = False
    scale = math.sqrt(cfg.sigma * cfg.time_step)
    n_steps = int(math.ceil(cfg.horizon / cfg.time_step))
    times = np.full((samples, n_increments + 1), np.nan)
    done_rows = 0
    for rng, size in cfg.blocks():
        e, x = walker.uniform_start(rng, size)
        last = np.full(size, -1)
        count = np.zeros(size, dtype=int)
        block = np.full((size, n_increments + 1), np.nan)
        active = np.arange(size)
        for k in range(n_steps):
            if not active.size:
                break
            ea, xa = e[active], x[active]
            first, _ = walker.step(ea, xa, scale * rng.standard_normal(active.size),
                                   rng.random(active.size), rng.random(active.size), rng)
            e[active], x[active] = ea, xa
            new = (first >= 0) & (first != last[active])
            rows = active[new]
            block[rows, count[rows]] = (k + 0.5) * cfg.time_step
            last[rows] = first[new]
            count[rows] += 1
            active = active[count[active] <= n_increments]
        if active.size:
            raise SimulationError(f"{active.size} trajectories did not complete {n_increments} increments before the horizon")
        times[done_rows:done_rows + size] = block
        done_rows += size
    inc = np.column_stack([times[:, 0], np.diff(times, axis=1)])
    conv = Convention(cfg.generator_scale, IncrementLaw.TWO_SIDED)
    dt = cfg.time_step

    def rounded_first_exit(t):
        # hits are stamped at step midpoints: the stamp is <= t iff the hit precedes the step end
        t = np.asarray(t, dtype=float)
        ends = (np.floor(t / dt - 0.5) + 1.0) * dt
        return np.where(t < 0.5 * dt, 0.0, first_exit_cdf(np.maximum(ends, 0.0), ell, conv))

    ks0 = _ks_lattice(inc[:, 0], rounded_first_exit)
    against = {}
    for law in IncrementLaw:
        c = Convention(cfg.generator_scale, law)
        res = stats.kstest(inc[:, 1], lambda t, c=c: increment_cdf(t, ell, c))
        against[law.value] = (float(res.statistic), float(res.pvalue))
    ident = (math.nan, math.nan)
    if n_increments >= 2:
        res = stats.ks_2samp(inc[:, 1], inc[:, 2])
        ident = (float(res.statistic), float(res.pvalue))
    m = min(independence_sample, samples)
    indep = [distance_correlation(inc[:m, k], inc[:m, k + 1]) for k in range(n_increments)]
    return IncrementReport(inc, ell, conv, ks0[0], ks0[1], against, ident, indep)


def _ks_lattice(sample, cdf) -> tuple[float, float]:
    """KS distance for samples stamped on a lattice that ``cdf`` also jumps on.

    Both functions are right-continuous steps with common jump points, so
    the supremum is attained at the sample values themselves.  The p-value
    from the continuous null is conservative for lattice data.
    """
    x = np.sort(np.asarray(sample, dtype=float))
    values, last = np.unique(x, return_index=False, return_counts=True)
    ecdf = np.cumsum(last) / len(x)
    d = float(np.max(np.abs(ecdf - cdf(values))))
    return d, float(stats.kstwo.sf(d, len(x)))
