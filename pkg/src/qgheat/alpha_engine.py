"""One-dimensional coefficients ``alpha_n(t)`` of the path expansion.

``alpha_n(t) = ell * P[X_0 + X_1 + ... + X_n >= t]`` where ``X_0`` is the
first vertex-hitting time of Brownian motion started uniformly on an edge
of length ``ell`` and ``X_1, X_2, ...`` are i.i.d. edge-traversal times.
The table stores the lower tail ``F_n(t) = P[S_n < t]`` alongside
``alpha_n = ell * (1 - F_n)`` so that the tiny differences that matter at
small times keep their relative precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import erfc, polygamma

from .artifacts import CsvTable, fmt
from .discrete_walk import Estimate


class Scale(Enum):
    """Diffusion normalisation of the underlying Brownian motion."""

    HALF = "HALF"  # generator (1/2) d^2/dx^2
    FULL = "FULL"  # generator d^2/dx^2, the heat semigroup's own

    @property
    def sigma(self) -> float:
        """Variance rate of the motion: ``Var(B_t) = sigma * t``."""
        return 1.0 if self is Scale.HALF else 2.0


class IncrementLaw(Enum):
    ONE_SIDED = "ONE_SIDED"  # hitting of a single level at distance ell
    TWO_SIDED = "TWO_SIDED"  # exit of the distance process from [0, ell)


@dataclass(frozen=True)
class Convention:
    generator_scale: Scale = Scale.FULL
    increment_law: IncrementLaw = IncrementLaw.TWO_SIDED

    @property
    def sigma(self) -> float:
        return self.generator_scale.sigma

    @property
    def tag(self) -> str:
        return f"{self.generator_scale.value}/{self.increment_law.value}"

    @classmethod
    def parse(cls, tag: str) -> "Convention":
        scale, _, law = tag.upper().replace("-", "_").partition("/")
        return cls(Scale(scale), IncrementLaw(law))

    def __str__(self):
        return self.tag


ALL_CONVENTIONS = tuple(Convention(s, law) for s in Scale for law in IncrementLaw)

#: Winner of the cross-method selection against the Mercer series
#: (see ``faber_krahn.select_convention``).
SELECTED_CONVENTION = Convention(Scale.FULL, IncrementLaw.TWO_SIDED)


class UnresolvedError(ArithmeticError):
    """A quantity is below its own error bound."""


# ---------------------------------------------------------------------------
# Elementary laws
# ---------------------------------------------------------------------------

_MAX_TERMS = 2_000_000


def _odd_series_terms(a: float, n_terms: int | None) -> int:
    if n_terms is not None:
        return n_terms
    if a <= 0:
        return _MAX_TERMS
    # first omitted exponent a (2N+1)^2 >= 40
    return min(_MAX_TERMS, max(1, math.ceil((math.sqrt(40.0 / a) - 1.0) / 2.0)))


def _alpha_zero_parts(t: float, ell: float, conv: Convention, n_terms: int | None):
    """Return ``(alpha_0, deficit, bound)`` for scalar ``t > 0``."""
    a = 0.5 * conv.sigma * math.pi**2 * t / ell**2
    N = _odd_series_terms(a, n_terms)
    k = 2.0 * np.arange(N) + 1.0
    w = 8.0 / (k**2 * math.pi**2)
    value = ell * math.fsum(w * np.exp(-a * k**2))
    # deficit = sum_k w_k (1 - e^{-a k^2}), with the closed-form tail of sum w_k
    head = math.fsum(w * -np.expm1(-a * k**2))
    tail_w = 8.0 / math.pi**2 * float(polygamma(1, N + 0.5)) / 4.0
    first = math.exp(-a * (2 * N + 1) ** 2)
    bound = ell * first * tail_w
    deficit = ell * (head + tail_w) - 0.5 * bound
    return value + 0.5 * bound, deficit, 0.5 * bound + 1e-16 * ell


def alpha_zero(t, ell: float, conv: Convention = SELECTED_CONVENTION, n_terms: int | None = None, return_bound=False):
    """Edge-averaged survival ``int_0^ell P_x[eta_0 >= t] dx``.

    Evaluates ``sum_n 8 ell / ((2n+1)^2 pi^2) exp(-t s (2n+1)^2 pi^2 / ell^2)``
    with ``s = sigma / 2``.  The number of terms adapts to ``t`` unless
    ``n_terms`` is given.  With ``return_bound`` a ``(value, bound)`` pair is
    returned, the bound covering the omitted terms.
    """
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    vals = np.empty_like(ts)
    bounds = np.empty_like(ts)
    for i, tt in enumerate(ts):
        if tt <= 0:
            vals[i], bounds[i] = ell, 0.0
        else:
            vals[i], _, bounds[i] = _alpha_zero_parts(tt, ell, conv, n_terms)
    if np.ndim(t) == 0:
        vals, bounds = float(vals[0]), float(bounds[0])
    return (vals, bounds) if return_bound else vals


def first_exit_cdf(t, ell: float, conv: Convention = SELECTED_CONVENTION) -> np.ndarray:
    """``P[X_0 < t] = 1 - alpha_0(t)/ell``, accurate in relative terms for small ``t``."""
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros_like(ts)
    for i, tt in enumerate(ts):
        if tt > 0:
            out[i] = _alpha_zero_parts(tt, ell, conv, None)[1] / ell
    return out if np.ndim(t) else float(out[0])


def increment_cdf(t, ell: float, conv: Convention = SELECTED_CONVENTION):
    """``P[eta_{n+1} - eta_n < t]``.

    ONE_SIDED: ``erfc(ell / sqrt(2 sigma t))``.  TWO_SIDED: exit time of
    Brownian motion from ``(-ell, ell)`` started at 0; method of images for
    ``sigma t < ell^2`` (keeps relative precision in the far left tail) and
    the odd Fourier survival series otherwise.
    """
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros_like(ts)
    pos = ts > 0
    sig = conv.sigma
    if conv.increment_law is IncrementLaw.ONE_SIDED:
        out[pos] = erfc(ell / np.sqrt(2.0 * sig * ts[pos]))
    else:
        z = sig * ts / ell**2
        small = pos & (z < 1.0)
        large = pos & ~small
        if small.any():
            j = np.arange(16)[:, None]
            arg = (2 * j + 1) * ell / np.sqrt(2.0 * sig * ts[small])[None, :]
            out[small] = 2.0 * np.sum((-1.0) ** j * erfc(arg), axis=0)
        if large.any():
            out[large] = 1.0 - increment_survival_series(ts[large], ell, conv)
    return out if np.ndim(t) else float(out[0])


def increment_survival_series(t, ell: float, conv: Convention) -> np.ndarray:
    """Odd-Fourier survival of the two-sided exit from ``(-ell, ell)`` started at 0."""
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    n = np.arange(64)[:, None]
    k = 2 * n + 1
    expo = conv.sigma * ts[None, :] * k**2 * math.pi**2 / (8.0 * ell**2)
    return np.sum(4.0 / math.pi * (-1.0) ** n / k * np.exp(-expo), axis=0)


def increment_mean(ell: float, conv: Convention) -> float:
    """Mean edge-traversal time (infinite for the one-sided law)."""
    if conv.increment_law is IncrementLaw.ONE_SIDED:
        return math.inf
    return ell**2 / conv.sigma


def first_exit_mean(ell: float, conv: Convention) -> float:
    """Mean of ``X_0``: ``x (ell - x) / sigma`` averaged over ``x``."""
    return ell**2 / (6.0 * conv.sigma)


def hierarchy_bound(t, ell: float, conv: Convention = SELECTED_CONVENTION):
    """Upper bound ``(1/P[Y < t] - 1)^{-1}`` on the hierarchy ratio."""
    p = np.asarray(increment_cdf(t, ell, conv), dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(p < 1.0, p / (1.0 - p), np.inf)
    return out if np.ndim(t) else float(out)


# ---------------------------------------------------------------------------
# Table construction
# ---------------------------------------------------------------------------


def default_t_grid(ell: float = 1.0, lo: float = 1e-3, hi: float = 1e2, per_decade: int = 200) -> np.ndarray:
    """Geometric grid over ``[lo ell^2, hi ell^2]``."""
    n = int(round(math.log10(hi / lo) * per_decade)) + 1
    return ell**2 * np.geomspace(lo, hi, n)


def default_resolution(ell: float, conv: Convention) -> float:
    return ell**2 / (1000.0 * conv.sigma)


def _interp_cdf(masses: np.ndarray, n_vars: int, h: float, t: np.ndarray) -> np.ndarray:
    """CDF of a sum of ``n_vars`` cell-centred lattice variables at ``t``.

    Mass ``k`` sits at ``(k + n_vars/2) h`` and is spread over one cell, so
    the CDF is piecewise linear through ``((k + n_vars/2 + 1/2) h, cum_k)``.
    Log-linear interpolation is used where both neighbours are positive.
    """
    cum = np.cumsum(masses)
    knots = (np.arange(-1, len(masses)) + 0.5 * n_vars + 0.5) * h
    vals = np.concatenate([[0.0], cum])
    j = np.clip(np.searchsorted(knots, t, side="right"), 1, len(knots) - 1)
    x0, x1 = knots[j - 1], knots[j]
    y0, y1 = vals[j - 1], vals[j]
    w = np.clip((t - x0) / (x1 - x0), 0.0, 1.0)
    lin = (1 - w) * y0 + w * y1
    both = (y0 > 0) & (y1 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        logi = np.exp((1 - w) * np.log(np.where(both, y0, 1.0)) + w * np.log(np.where(both, y1, 1.0)))
    out = np.where(both, logi, lin)
    out = np.where(t < knots[0], 0.0, out)
    return out


def _cell_masses(ell, conv, h, M):
    edges = np.arange(M + 1) * h
    return np.diff(first_exit_cdf(edges, ell, conv)), np.diff(increment_cdf(edges, ell, conv))


def _direct_tails(ell, conv, t, n_max, h):
    """Lower tails at ``t`` from a direct convolution on mesh ``h``; stops at underflow."""
    M = int(math.ceil(t.max() / h)) + 2
    f, py = _cell_masses(ell, conv, h, M)
    F = np.zeros((len(t), n_max + 1))
    for n in range(n_max + 1):
        F[:, n] = np.clip(_interp_cdf(f, n + 1, h, t), 0.0, 1.0)
        if n == n_max or not f.any():
            break
        f = np.convolve(f, py)[:M]
    return F


def _mesh_levels(t_grid, h, points_per_t):
    """Assign grid points to meshes ``h / 4^j`` so that ``t / h_j >= points_per_t``."""
    level = np.zeros(len(t_grid), dtype=int)
    hj, j = h, 0
    while True:
        coarse = t_grid < points_per_t * hj
        if not coarse.any():
            break
        j += 1
        hj /= 4.0
        level[coarse] = j
    return level


def _lower_tails(ell, conv, t_grid, n_max, h, head_time, n_direct, level, points_per_t):
    """Matrix ``F[i, n] = P[S_n < t_i]`` on base mesh ``h``.

    Long times use an FFT convolution on the base mesh.  Up to
    ``head_time`` and ``n_direct`` a direct convolution replaces it, and
    grid points with ``t < points_per_t * h`` move to nested meshes
    ``h / 4^j`` (direct convolution, relative precision in the left tail).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    M = int(math.ceil(t_grid.max() / h)) + 2
    # the head reaches head_time for every n <= n_direct despite the cell-centring shift
    Mh = int(math.ceil(head_time / h)) + n_direct // 2 + 3
    M = max(M, Mh)
    p0, py = _cell_masses(ell, conv, h, M)

    F = np.zeros((len(t_grid), n_max + 1))
    base = level == 0
    tb = t_grid[base]
    f_full = p0.copy()
    f_head = p0[:Mh].copy()
    for n in range(n_max + 1):
        n_vars = n + 1
        col = np.clip(_interp_cdf(f_full, n_vars, h, tb), 0.0, 1.0)
        if n <= n_direct:
            in_head = tb <= (Mh - 0.5 * n_vars - 1.0) * h
            col[in_head] = np.clip(_interp_cdf(f_head, n_vars, h, tb[in_head]), 0.0, 1.0)
        F[base, n] = col
        if n < n_max:
            f_full = fftconvolve(f_full, py)[:M]
            if n < n_direct:
                f_head = np.convolve(f_head, py[:Mh])[:Mh]
    for j in range(1, int(level.max()) + 1):
        sel = level == j
        if not sel.any():
            continue
        F[sel] = _direct_tails(ell, conv, t_grid[sel], n_max, h / 4.0**j)
    F[:, 0] = first_exit_cdf(t_grid, ell, conv)
    return F


@dataclass
class AlphaTable:
    """``alpha_n(t_i)`` on a rectangular grid.

    Arrays have shape ``(len(t_grid), n_max + 1)``.  ``deficit`` holds
    ``F_n(t) = 1 - alpha_n(t)/ell`` and ``truncation_error`` the absolute
    error bound on ``alpha_n(t)`` (series truncation, roundoff floor and a
    mesh-doubling quadrature estimate).  The bound refers to ``ell * F``;
    ``values`` close to ``ell`` also carry half an ulp of ``ell`` from storage.
    """

    ell: float
    t_grid: np.ndarray
    n_max: int
    values: np.ndarray
    deficit: np.ndarray
    truncation_error: np.ndarray
    convention: Convention
    h: float
    tolerance: float = 1e-4
    flags: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.flags is None:
            self.flags = self.truncation_error > self.tolerance * self.ell

    @property
    def deficit_error(self) -> np.ndarray:
        return self.truncation_error / self.ell

    def index_of(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.t_grid - t)))
        if not math.isclose(self.t_grid[i], t, rel_tol=1e-9):
            raise KeyError(f"t={t} is not a grid point")
        return i

    def gaps(self) -> np.ndarray:
        """``alpha_n - alpha_{n-1}`` for ``n = 1..n_max``, shape ``(T, n_max)``."""
        return self.ell * (self.deficit[:, :-1] - self.deficit[:, 1:])

    def gap_errors(self) -> np.ndarray:
        e = self.truncation_error
        return e[:, :-1] + e[:, 1:]

    def restrict(self, n_max: int) -> "AlphaTable":
        s = slice(0, n_max + 1)
        return AlphaTable(self.ell, self.t_grid, n_max, self.values[:, s], self.deficit[:, s],
                          self.truncation_error[:, s], self.convention, self.h, self.tolerance, self.flags[:, s])

    def check_invariants(self) -> dict[str, bool]:
        """Entrywise table invariants, each tested within ``truncation_error``."""
        a, e, ell = self.values, self.truncation_error, self.ell
        F, eF = self.deficit, self.deficit_error
        sig = self.convention.sigma
        report = {}
        report["bounds"] = bool(np.all(a >= -e) and np.all(a <= ell + e))
        # alpha < ell is read off the deficit, which keeps precision where alpha rounds to ell
        report["strict_upper"] = bool(np.all(F[F > eF] > 0))
        report["strict_lower"] = bool(np.all(a[a > e] > 0))
        report["decreasing_in_t"] = bool(np.all(np.diff(a, axis=0) <= e[1:] + e[:-1]))
        report["increasing_in_n"] = bool(np.all(np.diff(a, axis=1) >= -(e[:, 1:] + e[:, :-1])))
        # small-time limit: ell - alpha_0(t) <= 2 sqrt(2 sigma t / pi) (reflection bound)
        t0 = self.t_grid[0]
        report["limit_small_t"] = bool(
            np.all(ell - a[0] <= 2.0 * math.sqrt(2.0 * sig * t0 / math.pi) + e[0])
        )
        # large-time limit: Markov bound alpha_n(t) <= ell E[S_n] / t
        t1 = self.t_grid[-1]
        mean_y = increment_mean(ell, self.convention)
        ns = np.arange(self.n_max + 1)
        means = first_exit_mean(ell, self.convention) + ns * mean_y if math.isfinite(mean_y) else np.where(
            ns == 0, first_exit_mean(ell, self.convention), np.inf)
        report["limit_large_t"] = bool(np.all(a[-1] <= ell * np.minimum(1.0, means / t1) + e[-1]))
        return report

    def to_csv(self) -> CsvTable:
        ns = range(self.n_max + 1)
        cols = ["t"] + [f"alpha_{n}" for n in ns] + [f"err_{n}" for n in ns] + [f"deficit_{n}" for n in ns]
        table = CsvTable(cols, meta={
            "convention": self.convention.tag,
            "ell": fmt(self.ell),
            "h": fmt(self.h),
            "n_max": str(self.n_max),
            "tolerance": fmt(self.tolerance),
        })
        for i, t in enumerate(self.t_grid):
            table.add_row([t, *self.values[i], *self.truncation_error[i], *self.deficit[i]])
        return table

    @classmethod
    def from_csv(cls, table: CsvTable) -> "AlphaTable":
        m = table.meta
        n_max = int(m["n_max"])
        data = np.array([[float(x) for x in row] for row in table.rows])
        k = n_max + 1
        return cls(float(m["ell"]), data[:, 0], n_max, data[:, 1:1 + k], data[:, 1 + 2 * k:1 + 3 * k],
                   data[:, 1 + k:1 + 2 * k], Convention.parse(m["convention"]), float(m["h"]), float(m["tolerance"]))


_PROBE_RATIO = 10 ** 0.05
_ERROR_SAFETY = 3.0


def build_alpha_table(
    ell: float,
    conv: Convention = SELECTED_CONVENTION,
    t_grid=None,
    n_max: int = 200,
    grid_resolution: float | None = None,
    *,
    tolerance: float = 1e-4,
    n_direct: int = 24,
    head_time: float | None = None,
    points_per_t: float = 400.0,
    estimate_error: bool = True,
) -> AlphaTable:
    """Tabulate ``alpha_n(t)`` by n-fold convolution on a uniform mesh.

    Cell masses of ``X_0`` and of the increment are exact differences of
    their distribution functions.  The sum
    is convolved by FFT; for ``n <= n_direct`` and ``t <= head_time`` a
    direct (cancellation-free) convolution replaces the FFT result so that
    small-time tails keep relative precision, and grid points with
    ``t < points_per_t * h`` are evaluated on nested meshes ``h / 4^j``.
    The n = 0 column is the exact series.  The error estimate is three times
    the largest relative change against a mesh of twice the spacing, taken
    over ``t`` and two probes at ``t * 10^(+-0.05)``.
    """
    if t_grid is None:
        t_grid = default_t_grid(ell)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) < 1 or np.any(np.diff(t_grid) <= 0) or t_grid[0] <= 0:
        raise ValueError("t_grid must be strictly increasing and positive")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    h = default_resolution(ell, conv) if grid_resolution is None else float(grid_resolution)
    if head_time is None:
        head_time = min(float(t_grid.max()), 2.0 * ell**2 / conv.sigma)
    if estimate_error:
        # each grid point is flanked by two probes; the change under mesh doubling is
        # maximised over the triplet to guard against accidental zero crossings
        tt = (t_grid[:, None] * _PROBE_RATIO ** np.array([-1.0, 0.0, 1.0])[None, :]).ravel()
        head = max(head_time, float(tt.max())) if head_time >= t_grid.max() else head_time
        level = _mesh_levels(tt, h, points_per_t)
        F3 = _lower_tails(ell, conv, tt, n_max, h, head, n_direct, level, points_per_t)
        F23 = _lower_tails(ell, conv, tt, n_max, 2 * h, head, n_direct, level, points_per_t)
        F3 = F3.reshape(len(t_grid), 3, n_max + 1)
        diff = np.abs(F3 - F23.reshape(F3.shape))
        F = F3[:, 1]
        # the tails vary by orders of magnitude across the probes, so compare relative changes
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(F3 > 0, diff / F3, 0.0).max(axis=1)
        dF = np.maximum(diff[:, 1], np.where(F > 0, rel * F, diff.max(axis=1)))
        # convergence is first order and irregular in the far left tail
        dF *= _ERROR_SAFETY
        level = level.reshape(len(t_grid), 3)[:, 1]
    else:
        level = _mesh_levels(t_grid, h, points_per_t)
        F = _lower_tails(ell, conv, t_grid, n_max, h, head_time, n_direct, level, points_per_t)
        dF = np.zeros_like(F)
    # roundoff: relative in the directly convolved left tail, absolute after FFT
    direct = (t_grid <= head_time)[:, None] & (np.arange(n_max + 1) <= n_direct)[None, :]
    direct |= (level > 0)[:, None]
    floor = np.where(direct, 1e-12 * F, 1e-13) + 1e-300
    err = ell * (dF + floor)
    values = ell * (1.0 - F)
    return AlphaTable(ell, t_grid, n_max, values, F, err, conv, h, tolerance)


def hierarchy_ratio(table: AlphaTable, k: int, t: float) -> Estimate:
    """``(ell - alpha_{k+1}(t)) / (alpha_{k+1}(t) - alpha_k(t))`` with error.

    Raises :class:`UnresolvedError` when the denominator is not above its
    error bound.
    """
    if k + 1 > table.n_max:
        raise ValueError(f"k+1={k + 1} exceeds n_max={table.n_max}")
    i = table.index_of(t)
    F, eF = table.deficit[i], table.deficit_error[i]
    num, e_num = F[k + 1], eF[k + 1]
    den, e_den = F[k] - F[k + 1], eF[k] + eF[k + 1]
    if den <= e_den:
        raise UnresolvedError(f"denominator {den:.3e} not above its error {e_den:.3e} at t={t}")
    r = num / den
    hi = (num + e_num) / (den - e_den)
    lo = max(num - e_num, 0.0) / (den + e_den)
    return Estimate(r, max(hi - r, r - lo))


def sample_sums(ell: float, conv: Convention, n: int, samples: int, seed: int, t_cap: float) -> np.ndarray:
    """Draw ``X_0 + ... + X_n`` by inverse-CDF sampling (values capped at ``t_cap``)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, n]))
    tab = np.concatenate([[0.0], np.geomspace(1e-9 * ell**2, t_cap, 20000)])
    g0 = first_exit_cdf(tab, ell, conv)
    gy = increment_cdf(tab, ell, conv)

    def draw(G):
        u = rng.random(samples)
        x = np.interp(u, G, tab)
        return np.where(u >= G[-1], t_cap, x)

    total = draw(g0)
    for _ in range(n):
        total += draw(gy)
    return np.minimum(total, t_cap)


def monte_carlo_alpha(ell: float, conv: Convention, n: int, t: float, samples: int = 10**6, seed: int = 0) -> Estimate:
    """Sampling estimate of ``alpha_n(t)`` with its standard error."""
    s = sample_sums(ell, conv, n, samples, seed, t_cap=max(4.0 * t, 10.0 * ell**2))
    p = float(np.mean(s >= t))
    return Estimate(ell * p, ell * math.sqrt(max(p * (1 - p), 1e-300) / samples))
