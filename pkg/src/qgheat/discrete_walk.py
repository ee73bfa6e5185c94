"""Symmetric random walk on the combinatorial skeleton of a metric graph.

The walk jumps from ``v`` along each incident edge end with probability
``1/deg(v)`` (parallel edges add up).  Hitting-time laws are computed by
iterating the sub-stochastic block of the chain with the target made
absorbing, either in double precision or exactly with ``Fraction``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from .artifacts import CsvTable, fmt
from .graph_model import EquilateralGraph, GraphError, MetricGraph, as_metric

ROUNDOFF = 1e-13


class Estimate(NamedTuple):
    """A value with an absolute error bound."""

    value: float
    error: float

    @property
    def lower(self):
        return self.value - self.error

    @property
    def upper(self):
        return self.value + self.error

    def contains(self, x, slack: float = 0.0) -> bool:
        return abs(x - self.value) <= self.error + slack


class EnumerationBudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class WalkChain:
    """Symmetric walk with the Dirichlet vertex absorbing.

    ``walk`` holds the unabsorbed transition matrix (row ``v`` gives
    ``mult(v, w)/deg(v)``); ``transition`` is the same matrix with the row
    of ``absorbing`` replaced by the unit vector.
    """

    states: tuple[str, ...]
    absorbing: str
    walk: np.ndarray
    exact_walk: tuple[tuple[Fraction, ...], ...]
    n_edges: int
    degrees: tuple[int, ...]

    @property
    def index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.states)}

    @property
    def transition(self) -> np.ndarray:
        P = self.walk.copy()
        a = self.index[self.absorbing]
        P[a] = 0.0
        P[a, a] = 1.0
        return P

    def degree(self, v: str) -> int:
        return self.degrees[self.index[v]]


def build_chain(g: MetricGraph | EquilateralGraph) -> WalkChain:
    """Walk chain on the skeleton of ``g``; edge lengths are ignored."""
    g = as_metric(g)
    vD = g.dirichlet_vertex
    states = g.vertices
    idx = {s: i for i, s in enumerate(states)}
    n = len(states)
    mult = [[0] * n for _ in range(n)]
    for u, v, _ in g.edges:
        mult[idx[u]][idx[v]] += 1
        mult[idx[v]][idx[u]] += 1
    degrees = tuple(g.degree(s) for s in states)
    exact = tuple(tuple(Fraction(mult[i][j], degrees[i]) for j in range(n)) for i in range(n))
    walk = np.array([[float(x) for x in row] for row in exact])
    return WalkChain(states, vD, walk, exact, g.n_edges, degrees)


@dataclass
class HittingDistribution:
    """Truncated law of the first hitting time ``tau`` of ``target``.

    ``pmf[k]`` is ``P[tau = k]`` for ``k = 0..n_max`` (``pmf[0] = 0``).
    ``tail_mass`` is ``P[tau > n_max]`` (computed, plus a roundoff margin in
    float mode).  ``tail_factor`` bounds ``E[(tau - n_max)^+]`` by
    ``tail_factor * tail_mass``.
    """

    start: str
    target: str
    pmf: list
    tail_mass: float | Fraction
    n_max: int
    tail_factor: float
    exact: bool = False
    warning: str | None = None
    residual: list = field(default_factory=list, repr=False)
    chain: WalkChain | None = field(default=None, repr=False)

    @property
    def survival(self) -> list:
        """``P[tau > k]`` for ``k = 0..n_max``.

        Built from the computed residual mass, without the roundoff margin
        carried by ``tail_mass`` in float mode.
        """
        out = []
        acc = self.tail_mass if self.exact or not self.residual else math.fsum(self.residual)
        for k in range(self.n_max, -1, -1):
            out.append(acc)
            acc = acc + self.pmf[k]
        return out[::-1]

    def pmf_array(self) -> np.ndarray:
        return np.array([float(p) for p in self.pmf])

    def to_csv(self) -> CsvTable:
        """``n, P[tau = n], P[tau > n]``; exact mode writes ``p/q`` fractions."""
        resid = math.fsum(float(x) for x in self.residual) if self.residual else float(self.tail_mass)
        table = CsvTable(["n", "pmf", "survival"], meta={
            "start": self.start, "target": self.target, "n_max": str(self.n_max), "exact": fmt(self.exact),
            "tail_mass": fmt(self.tail_mass), "residual_mass": fmt(resid), "tail_factor": fmt(self.tail_factor)})
        for n, (p, s) in enumerate(zip(self.pmf, self.survival)):
            table.add_row([n, p, s])
        return table

    @classmethod
    def from_csv(cls, table: CsvTable) -> "HittingDistribution":
        """Inverse of :meth:`to_csv` (the chain itself is not stored)."""
        m = table.meta
        exact = m["exact"] == "1"
        conv = Fraction if exact else float
        pmf = table.column("pmf", conv)
        tail = conv(m["tail_mass"])
        resid = [] if exact else [float(m["residual_mass"])]
        return cls(m["start"], m["target"], pmf, tail, int(m["n_max"]), float(m["tail_factor"]), exact,
                   residual=resid)


def _tail_factor(Q: np.ndarray, max_power: int = 64) -> float:
    """Bound ``sum_j P[tau > n + j] <= factor * P[tau > n]``.

    Uses ``rho_p = ||Q^p||_inf < 1`` so that ``P[tau > n + j] <= P[tau > n]
    * rho_p ** floor(j / p)``; the power ``p`` minimising ``p / (1 - rho_p)``
    is chosen.
    """
    if Q.size == 0:
        return 1.0
    best = math.inf
    A = np.eye(Q.shape[0])
    for p in range(1, max_power + 1):
        A = A @ Q
        rho = float(np.abs(A).sum(axis=1).max())
        if rho < 1.0:
            best = min(best, p / (1.0 - rho))
            if rho < 0.5:
                break
    return best


def _exact_mean_times(chain: WalkChain, keep: Sequence[int], target: int) -> list[Fraction]:
    """Solve ``(I - Q) h = 1`` over the non-target states exactly."""
    n = len(keep)
    A = [[(Fraction(1) if i == j else Fraction(0)) - chain.exact_walk[keep[i]][keep[j]] for j in range(n)] + [Fraction(1)]
         for i in range(n)]
    for col in range(n):
        piv = next(r for r in range(col, n) if A[r][col] != 0)
        A[col], A[piv] = A[piv], A[col]
        inv = 1 / A[col][col]
        A[col] = [x * inv for x in A[col]]
        for r in range(n):
            if r != col and A[r][col] != 0:
                f = A[r][col]
                A[r] = [a - f * b for a, b in zip(A[r], A[col])]
    return [A[i][n] for i in range(n)]


def hitting_distribution(
    chain: WalkChain,
    start: str,
    n_max: int,
    *,
    target: str | None = None,
    exact: bool = False,
    tail_tolerance: float | None = None,
) -> HittingDistribution:
    """Law of ``tau = inf{n >= 1 : v_n = target}`` for the walk from ``start``.

    ``target`` defaults to the absorbing Dirichlet vertex.  In exact mode all
    probabilities are ``Fraction`` and ``tail_mass`` is exact.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    target = chain.absorbing if target is None else target
    idx = chain.index
    s, tgt = idx[start], idx[target]
    keep = [i for i in range(len(chain.states)) if i != tgt]
    Q = chain.walk[np.ix_(keep, keep)]
    factor = _tail_factor(Q)

    if exact:
        Qx = [[chain.exact_walk[i][j] for j in keep] for i in keep]
        rx = [chain.exact_walk[i][tgt] for i in keep]
        pmf = [Fraction(0), chain.exact_walk[s][tgt]]
        q = [chain.exact_walk[s][j] for j in keep]
        for _ in range(2, n_max + 1):
            pmf.append(sum((a * b for a, b in zip(q, rx)), Fraction(0)))
            q = [sum((q[i] * Qx[i][j] for i in range(len(q)) if q[i]), Fraction(0)) for j in range(len(keep))]
        tail = sum(q, Fraction(0))
        dist = HittingDistribution(start, target, pmf, tail, n_max, factor, exact=True, residual=q, chain=chain)
    else:
        r = chain.walk[keep, tgt]
        pmf = np.zeros(n_max + 1)
        pmf[1] = chain.walk[s, tgt]
        q = chain.walk[s, keep].copy()
        for k in range(2, n_max + 1):
            pmf[k] = q @ r
            q = q @ Q
        tail = float(q.sum()) + ROUNDOFF * n_max
        dist = HittingDistribution(start, target, list(pmf), tail, n_max, factor, residual=list(q), chain=chain)
    if tail_tolerance is not None and float(dist.tail_mass) > tail_tolerance:
        dist.warning = f"tail mass {float(dist.tail_mass):.3e} exceeds tolerance {tail_tolerance:.1e}; increase n_max"
    return dist


def _exact_residual_expectation(dist: HittingDistribution) -> Fraction:
    """``E[(tau - n_max)^+]`` exactly, as ``q_{n_max} . (I - Q)^{-1} 1``."""
    chain = dist.chain
    tgt = chain.index[dist.target]
    keep = [i for i in range(len(chain.states)) if i != tgt]
    h = _exact_mean_times(chain, keep, tgt)
    return sum((a * b for a, b in zip(dist.residual, h)), Fraction(0))


def tail_expectations(dist: HittingDistribution) -> tuple[np.ndarray, np.ndarray]:
    """``E[(tau - n)^+]`` for ``n = 0..n_max`` with absolute error bounds (float)."""
    surv = np.array([float(x) for x in dist.survival])
    if dist.exact:
        resid = float(_exact_residual_expectation(dist))
        err_resid = 0.0
    else:
        lo = max(float(surv[-1]) - ROUNDOFF * dist.n_max, 0.0)
        hi = dist.tail_factor * float(dist.tail_mass)
        resid = 0.5 * (lo + hi)
        err_resid = 0.5 * (hi - lo)
    # E[(tau-n)^+] = sum_{j=n}^{n_max-1} P[tau > j] + E[(tau-n_max)^+]
    partial = np.concatenate([np.cumsum(surv[:-1][::-1])[::-1], [0.0]])
    values = partial + resid
    errors = np.full_like(values, err_resid) + ROUNDOFF * (dist.n_max - np.arange(dist.n_max + 1) + 1)
    if dist.exact:
        errors[:] = 1e-15 * np.maximum(values, 1.0)
    return values, errors


def expected_return_time(dist: HittingDistribution):
    """``E[tau]`` with an error bound; exact ``Fraction`` in exact mode.

    For ``start == target`` this brackets ``2 #E / deg(start)``.
    """
    return truncated_tail_expectation(dist, 0)


def truncated_tail_expectation(dist: HittingDistribution, n: int):
    """``E[(tau - n) 1{tau >= n+1}]`` as an :class:`Estimate`.

    In exact mode the value is a ``Fraction`` and the error is zero.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    N = dist.n_max
    if dist.exact:
        if n >= N:
            extra = _extend_exact(dist, n)
            return Estimate(extra, Fraction(0))
        head = sum(((k - n) * dist.pmf[k] for k in range(n + 1, N + 1)), Fraction(0))
        resid = _exact_residual_expectation(dist)
        return Estimate(head + (N - n) * dist.tail_mass + resid, Fraction(0))
    tail = float(dist.tail_mass)
    if n >= N:
        if tail <= 0.0:
            return Estimate(0.0, 0.0)
        hi = dist.tail_factor * tail
        return Estimate(0.5 * hi, 0.5 * hi)
    k = np.arange(n + 1, N + 1)
    head = math.fsum((k - n) * np.asarray(dist.pmf[n + 1:], dtype=float))
    lo = head + (N - n + 1) * max(tail - ROUNDOFF * N, 0.0)
    hi = head + (N - n) * tail + dist.tail_factor * tail
    return Estimate(0.5 * (lo + hi), 0.5 * (hi - lo) + ROUNDOFF * N)


def _extend_exact(dist: HittingDistribution, n: int) -> Fraction:
    chain = dist.chain
    tgt = chain.index[dist.target]
    keep = [i for i in range(len(chain.states)) if i != tgt]
    Qx = [[chain.exact_walk[i][j] for j in keep] for i in keep]
    q = list(dist.residual)
    for _ in range(n - dist.n_max):
        q = [sum((q[i] * Qx[i][j] for i in range(len(q)) if q[i]), Fraction(0)) for j in range(len(keep))]
    h = _exact_mean_times(chain, keep, tgt)
    return sum((a * b for a, b in zip(q, h)), Fraction(0))


def path_sum_oracle(g: MetricGraph | EquilateralGraph, n: int, *, exact: bool = True, budget: int = 5_000_000):
    """Sum over walks ``vD = w_0, ..., w_n`` avoiding ``vD`` after step 0 of
    ``prod_{j<n} 1/deg(w_j)``, by exhaustive enumeration.

    Walks are enumerated over edge ends, so parallel edges count separately.
    Equals ``P_vD[tau_vD >= n + 1]``.
    """
    if n > 14:
        raise EnumerationBudgetError(f"n={n} exceeds the enumeration guard 14")
    g = as_metric(g)
    vD = g.dirichlet_vertex
    nbrs = {v: g.neighbors(v) for v in g.vertices}
    one = Fraction(1) if exact else 1.0
    inv_deg = {v: (Fraction(1, len(nbrs[v])) if exact else 1.0 / len(nbrs[v])) for v in g.vertices}
    count = 0
    total = Fraction(0) if exact else 0.0

    # explicit stack of (vertex, depth, weight)
    stack = [(vD, 0, one)]
    while stack:
        v, depth, w = stack.pop()
        if depth == n:
            total += w
            count += 1
            if count > budget:
                raise EnumerationBudgetError(f"more than {budget} paths")
            continue
        step = w * inv_deg[v]
        for u in nbrs[v]:
            if u != vD:
                stack.append((u, depth + 1, step))
    return total


def return_time_identity(g: MetricGraph | EquilateralGraph, v: str | None = None) -> Fraction:
    """``2 #E / deg(v)``, the expected return time to ``v``."""
    g = as_metric(g)
    v = g.dirichlet_vertex if v is None else v
    if g.degree(v) == 0:
        raise GraphError(f"vertex {v!r} has degree 0")
    return Fraction(2 * g.n_edges, g.degree(v))


def abel_forms(mu: Sequence[float], a: Sequence[float]) -> tuple[float, float]:
    """Both sides of the summation-by-parts identity for finite sequences.

    Returns ``(a_0 B_0 + sum_n (a_n - a_{n-1}) B_n, sum_n mu_n a_n)`` with
    ``B_n = sum_{j >= n} mu_j``.
    """
    mu = np.asarray(mu, dtype=float)
    a = np.asarray(a, dtype=float)
    B = np.cumsum(mu[::-1])[::-1]
    left = a[0] * B[0] + math.fsum(np.diff(a) * B[1:])
    right = math.fsum(mu * a)
    return left, right
