"""Compact metric graphs with Dirichlet vertices.

A :class:`MetricGraph` is a finite multigraph whose edges carry positive
lengths, together with a non-empty set of Dirichlet vertices.  Everything
downstream (walks, finite elements, simulation) consumes this one type.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, reduce
from typing import Iterable, Mapping, Sequence

DUMMY_PREFIX = "_sub"


class GraphError(ValueError):
    """Base class for invalid graph input."""


class GraphFormatError(GraphError):
    """The graph file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GraphValidationError(GraphError):
    """A :class:`MetricGraph` invariant is violated.

    ``rule`` names the violated invariant, e.g. ``"non-positive length"``.
    """

    def __init__(self, rule: str, detail: str = ""):
        self.rule = rule
        super().__init__(f"{rule}: {detail}" if detail else rule)


class RationalityError(GraphError):
    """Edge lengths are not rationally dependent within tolerance."""


Edge = tuple[str, str, float]


@dataclass(frozen=True)
class MetricGraph:
    """Finite metric multigraph with Dirichlet vertex set.

    Parameters
    ----------
    vertices
        Vertex identifiers (opaque strings).
    edges
        ``(u, v, length)`` triples.  Parallel edges are allowed; self-loops
        are allowed except at Dirichlet vertices.
    dirichlet
        Non-empty subset of ``vertices``.
    split_interior
        Accept graphs whose complement of the Dirichlet set falls apart
        (e.g. several loops hanging at ``vD``).  The whole graph must still
        be connected.
    """

    vertices: tuple[str, ...]
    edges: tuple[Edge, ...]
    dirichlet: frozenset[str]
    name: str = field(default="", compare=False)
    split_interior: bool = field(default=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(str(v) for v in self.vertices))
        object.__setattr__(
            self, "edges", tuple((str(u), str(v), float(length)) for u, v, length in self.edges)
        )
        object.__setattr__(self, "dirichlet", frozenset(str(v) for v in self.dirichlet))
        self._validate()

    def _validate(self) -> None:
        if len(set(self.vertices)) != len(self.vertices):
            raise GraphValidationError("duplicate vertex", repr(self.vertices))
        if not self.edges:
            raise GraphValidationError("no edges")
        known = set(self.vertices)
        for i, (u, v, length) in enumerate(self.edges):
            if not (length > 0) or not math.isfinite(length):
                raise GraphValidationError("non-positive length", f"edge {i} ({u}, {v}) has length {length}")
            for end in (u, v):
                if end not in known:
                    raise GraphValidationError("unknown endpoint", f"edge {i} references {end!r}")
            if u == v and u in self.dirichlet:
                raise GraphValidationError("self-loop at Dirichlet vertex", f"edge {i} at {u!r}")
        if not self.dirichlet:
            raise GraphValidationError("empty Dirichlet set")
        for d in self.dirichlet:
            if d not in known:
                raise GraphValidationError("unknown Dirichlet vertex", repr(d))
        isolated = [v for v in self.vertices if self.degree(v) == 0]
        if isolated:
            raise GraphValidationError("isolated vertex", repr(isolated))
        if not self._connected(frozenset()):
            raise GraphValidationError("disconnected graph")
        if not self.split_interior and not self._connected(self.dirichlet):
            raise GraphValidationError("disconnected after removing Dirichlet vertices")

    def _connected(self, removed: frozenset) -> bool:
        # open edges glued at the vertices not in ``removed``
        parent = list(range(len(self.edges)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        by_vertex: dict[str, list[int]] = {}
        for i, (u, v, _) in enumerate(self.edges):
            for end in {u, v}:
                if end not in removed:
                    by_vertex.setdefault(end, []).append(i)
        for incident in by_vertex.values():
            for j in incident[1:]:
                parent[find(j)] = find(incident[0])
        return len({find(i) for i in range(len(self.edges))}) == 1

    @cached_property
    def _degrees(self) -> dict[str, int]:
        deg = {v: 0 for v in self.vertices}
        for u, v, _ in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg

    def degree(self, v: str) -> int:
        """Number of incident edge ends (a loop counts twice)."""
        return self._degrees[v]

    @property
    def total_length(self) -> float:
        return math.fsum(length for _, _, length in self.edges)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(length for _, _, length in self.edges)

    @property
    def dirichlet_vertex(self) -> str:
        """The single Dirichlet vertex; raises if there are several."""
        if len(self.dirichlet) != 1:
            raise GraphError(f"expected a single Dirichlet vertex, got {sorted(self.dirichlet)}; use merge_dirichlet")
        return next(iter(self.dirichlet))

    def neighbors(self, v: str) -> list[str]:
        """Neighbour multiset of ``v``: one entry per incident edge end."""
        out = []
        for u, w, _ in self.edges:
            if u == v:
                out.append(w)
            if w == v:
                out.append(u)
        return out

    def distances_from(self, source: str) -> dict[str, int]:
        """Combinatorial (hop) distances by breadth-first search."""
        adj = {v: set() for v in self.vertices}
        for u, w, _ in self.edges:
            adj[u].add(w)
            adj[w].add(u)
        dist = {source: 0}
        queue = deque([source])
        while queue:
            v = queue.popleft()
            for w in adj[v]:
                if w not in dist:
                    dist[w] = dist[v] + 1
                    queue.append(w)
        return dist

    def is_path(self) -> bool:
        """True for a path graph with the Dirichlet vertex at one end."""
        if len(self.dirichlet) != 1 or self.degree(self.dirichlet_vertex) != 1:
            return False
        if any(u == v for u, v, _ in self.edges):
            return False
        return all(d <= 2 for d in self._degrees.values()) and self.n_edges == len(self.vertices) - 1

    def to_dict(self) -> dict:
        return {
            **({"name": self.name} if self.name else {}),
            "vertices": list(self.vertices),
            "edges": [[u, v, length] for u, v, length in self.edges],
            "dirichlet": sorted(self.dirichlet, key=self.vertices.index),
            **({"split_interior": True} if self.split_interior else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


@dataclass(frozen=True)
class EquilateralGraph:
    """Metric graph whose edges all have length ``common_length``.

    ``subdivision_map`` maps each edge index of the source graph to the
    indices of the chain of edges in ``base`` that replaces it.
    """

    base: MetricGraph
    common_length: float
    subdivision_map: Mapping[int, tuple[int, ...]]
    dummy_vertices: tuple[str, ...] = ()

    def __post_init__(self):
        if any(length != self.common_length for length in self.base.lengths):
            raise GraphValidationError("not equilateral", f"lengths {set(self.base.lengths)}")
        for d in self.dummy_vertices:
            if self.base.degree(d) != 2:
                raise GraphValidationError("dummy vertex degree", f"{d!r} has degree {self.base.degree(d)}")

    @property
    def n_edges(self) -> int:
        return self.base.n_edges

    @property
    def ell(self) -> float:
        return self.common_length

    @property
    def total_length(self) -> float:
        return self.n_edges * self.common_length

    @property
    def dirichlet_vertex(self) -> str:
        return self.base.dirichlet_vertex

    def degree(self, v: str) -> int:
        return self.base.degree(v)

    def reconstruct_lengths(self) -> list[float]:
        """Original edge lengths recovered by summing each chain."""
        return [len(chain) * self.common_length for _, chain in sorted(self.subdivision_map.items())]


def _check_keys(obj, line_of):
    if not isinstance(obj, dict):
        raise GraphFormatError("top level must be an object", 1)
    for key in ("vertices", "edges", "dirichlet"):
        if key not in obj:
            raise GraphFormatError(f"missing key {key!r}", 1)
    extra = set(obj) - {"vertices", "edges", "dirichlet", "name", "split_interior"}
    if extra:
        raise GraphFormatError(f"unknown keys {sorted(extra)}", 1)
    if not isinstance(obj["vertices"], list) or not all(isinstance(v, str) for v in obj["vertices"]):
        raise GraphFormatError("'vertices' must be an array of strings", line_of("vertices"))
    if not isinstance(obj["dirichlet"], list) or not all(isinstance(v, str) for v in obj["dirichlet"]):
        raise GraphFormatError("'dirichlet' must be an array of strings", line_of("dirichlet"))
    if not isinstance(obj["edges"], list):
        raise GraphFormatError("'edges' must be an array", line_of("edges"))
    for i, e in enumerate(obj["edges"]):
        ok = (
            isinstance(e, list)
            and len(e) == 3
            and isinstance(e[0], str)
            and isinstance(e[1], str)
            and isinstance(e[2], (int, float))
            and not isinstance(e[2], bool)
        )
        if not ok:
            raise GraphFormatError(f"edge {i} must be [string, string, number], got {e!r}", line_of("edges"))


def parse_graph(text: str) -> MetricGraph:
    """Parse the JSON graph file format.

    >>> g = parse_graph('{"vertices": ["vD", "w"], "edges": [["vD", "w", 1]], "dirichlet": ["vD"]}')
    >>> g.n_edges, g.total_length
    (1, 1.0)
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(exc.msg, exc.lineno) from None

    def line_of(key):
        idx = text.find(f'"{key}"')
        return text.count("\n", 0, idx) + 1 if idx >= 0 else None

    _check_keys(obj, line_of)
    return MetricGraph(obj["vertices"], [tuple(e) for e in obj["edges"]], obj["dirichlet"],
                       name=obj.get("name", ""), split_interior=bool(obj.get("split_interior", False)))


def load_graph(path) -> MetricGraph:
    with open(path, encoding="utf-8") as fh:
        return parse_graph(fh.read())


def merge_dirichlet(g: MetricGraph) -> MetricGraph:
    """Identify all Dirichlet vertices with a single vertex ``v_D``.

    The merged vertex keeps the id of the first Dirichlet vertex in vertex
    order; its degree is the sum of the original degrees.  Edges joining two
    Dirichlet vertices would become loops at ``v_D`` and are rejected.
    """
    if len(g.dirichlet) == 1:
        return g
    keep = next(v for v in g.vertices if v in g.dirichlet)
    relabel = {v: (keep if v in g.dirichlet else v) for v in g.vertices}
    vertices = [v for v in g.vertices if v not in g.dirichlet or v == keep]
    edges = [(relabel[u], relabel[v], length) for u, v, length in g.edges]
    return MetricGraph(vertices, edges, {keep}, name=g.name, split_interior=g.split_interior)


MAX_SUBDIVISION_EDGES = 100_000


def _fraction_gcd(values: Sequence[Fraction]) -> Fraction:
    lcm_den = reduce(math.lcm, (v.denominator for v in values), 1)
    num_gcd = reduce(math.gcd, (v.numerator * (lcm_den // v.denominator) for v in values), 0)
    return Fraction(num_gcd, lcm_den)


def equilateralize(g: MetricGraph, tolerance: float = 1e-9, max_denominator: int = 10**6,
                   max_edges: int = MAX_SUBDIVISION_EDGES) -> EquilateralGraph:
    """Subdivide edges with dummy degree-2 vertices to a common length.

    Length ratios are snapped to rationals by continued fractions
    (``Fraction.limit_denominator``).  The common length is then chosen so
    that ``n_edges * common_length`` equals the source total length.
    Snapped ratios with large denominators (irrational lengths pass the
    default tolerance) would need more than ``max_edges`` edges; that is
    reported as a ``RationalityError``.
    """
    lengths = g.lengths
    ref = min(range(len(lengths)), key=lambda i: lengths[i])
    ratios = []
    for i, length in enumerate(lengths):
        r = length / lengths[ref]
        frac = Fraction(r).limit_denominator(max_denominator)
        if abs(r - float(frac)) > tolerance * r:
            u, v, _ = g.edges[i]
            ru, rv, _ = g.edges[ref]
            raise RationalityError(
                f"not rationally dependent within tolerance: edge {i} ({u}, {v}) vs edge {ref} ({ru}, {rv}), "
                f"ratio {r!r}"
            )
        ratios.append(frac)
    unit = _fraction_gcd(ratios)
    counts = [int(r / unit) for r in ratios]
    total = sum(counts)
    if total > max_edges:
        raise RationalityError(
            f"not rationally dependent within tolerance: the common length would need {total} edges "
            f"(limit {max_edges})"
        )
    ell = g.total_length / total
    if all(c == 1 for c in counts):
        # snap to one representative length
        ell = lengths[0] if all(x == lengths[0] for x in lengths) else ell

    taken = set(g.vertices)
    serial = 0

    def fresh():
        nonlocal serial
        while True:
            name = f"{DUMMY_PREFIX}{serial}"
            serial += 1
            if name not in taken:
                taken.add(name)
                return name

    vertices = list(g.vertices)
    dummies: list[str] = []
    edges: list[Edge] = []
    smap: dict[int, tuple[int, ...]] = {}
    for i, ((u, v, _), m) in enumerate(zip(g.edges, counts)):
        chain = [u] + [fresh() for _ in range(m - 1)] + [v]
        dummies.extend(chain[1:-1])
        start = len(edges)
        for a, b in zip(chain[:-1], chain[1:]):
            if a == b:
                raise GraphValidationError("self-loop after subdivision", f"edge {i} at {a!r} is a single chain link")
            edges.append((a, b, ell))
        smap[i] = tuple(range(start, len(edges)))
    vertices.extend(dummies)
    base = MetricGraph(vertices, edges, g.dirichlet, name=g.name, split_interior=g.split_interior)
    return EquilateralGraph(base, ell, smap, tuple(dummies))


def as_equilateral(g: MetricGraph | EquilateralGraph, **kwargs) -> EquilateralGraph:
    return g if isinstance(g, EquilateralGraph) else equilateralize(g, **kwargs)


def as_metric(g: MetricGraph | EquilateralGraph) -> MetricGraph:
    return g.base if isinstance(g, EquilateralGraph) else g


# ---------------------------------------------------------------------------
# Builders for the reference graphs
# ---------------------------------------------------------------------------


def path_graph(total_length: float, n_edges: int) -> MetricGraph:
    """Path ``vD - v1 - ... - vN`` with Dirichlet at ``vD``."""
    if n_edges < 1:
        raise GraphValidationError("no edges", f"n_edges={n_edges}")
    names = ["vD"] + [f"v{i}" for i in range(1, n_edges + 1)]
    ell = total_length / n_edges
    edges = [(names[i], names[i + 1], ell) for i in range(n_edges)]
    return MetricGraph(names, edges, {"vD"}, name=f"path{n_edges}")


def interval(length: float = 1.0, both_dirichlet: bool = False) -> MetricGraph:
    """Single interval; Dirichlet at 0, and at ``length`` too if requested."""
    dirichlet = {"vD", "w"} if both_dirichlet else {"vD"}
    return MetricGraph(["vD", "w"], [("vD", "w", length)], dirichlet, name="interval_dd" if both_dirichlet else "interval")


def star(n_leaves: int, ell: float = 1.0) -> MetricGraph:
    """Star with ``n_leaves`` edges and the Dirichlet vertex at one leaf.

    (A Dirichlet centre would disconnect the leaves from each other.)
    """
    leaves = [f"a{i}" for i in range(1, n_leaves)]
    edges = [("vD", "w", ell)] + [("w", a, ell) for a in leaves]
    return MetricGraph(["vD", "w"] + leaves, edges, {"vD"}, name=f"star{n_leaves}")


def pitchfork(stem: int = 1, prongs: int = 2, ell: float = 1.0) -> MetricGraph:
    """Stem of ``stem`` edges from ``vD`` to ``w`` plus ``prongs`` pendant edges."""
    stem_names = ["vD"] + [f"s{i}" for i in range(1, stem)] + ["w"]
    prong_names = [chr(ord("a") + i) for i in range(prongs)]
    edges = [(stem_names[i], stem_names[i + 1], ell) for i in range(stem)]
    edges += [("w", p, ell) for p in prong_names]
    name = "pitchfork" if (stem, prongs) == (1, 2) else f"pitchfork_s{stem}_p{prongs}"
    return MetricGraph(stem_names + prong_names, edges, {"vD"}, name=name)


def figure_eight(ell: float = 1.0) -> MetricGraph:
    """Two loops of length ``2*ell`` at ``vD``, each already split at its midpoint."""
    edges = [("vD", "a", ell), ("a", "vD", ell), ("vD", "b", ell), ("b", "vD", ell)]
    return MetricGraph(["vD", "a", "b"], edges, {"vD"}, name="figure_eight", split_interior=True)


def cycle_with_pendant(cycle: int, ell: float = 1.0) -> MetricGraph:
    """Pendant edge ``vD - c0`` attached to a cycle ``c0 ... c{cycle-1}``."""
    ring = [f"c{i}" for i in range(cycle)]
    edges = [("vD", "c0", ell)] + [(ring[i], ring[(i + 1) % cycle], ell) for i in range(cycle)]
    return MetricGraph(["vD"] + ring, edges, {"vD"}, name=f"cycle{cycle}_pendant")


def complete_graph(n: int, ell: float = 1.0) -> MetricGraph:
    names = ["vD"] + [f"k{i}" for i in range(1, n)]
    edges = [(names[i], names[j], ell) for i in range(n) for j in range(i + 1, n)]
    return MetricGraph(names, edges, {"vD"}, name=f"K{n}")


def reference_suite() -> dict[str, MetricGraph]:
    """The twelve unit-edge reference graphs (all with a single Dirichlet vertex)."""
    graphs = [
        path_graph(1, 1),
        path_graph(2, 2),
        path_graph(3, 3),
        path_graph(4, 4),
        pitchfork(),
        star(4),
        star(5),
        pitchfork(stem=2),
        figure_eight(),
        cycle_with_pendant(3),
        cycle_with_pendant(4),
        complete_graph(4),
    ]
    return {g.name: g for g in graphs}


def named_graph(name: str) -> MetricGraph:
    """Look up a reference graph by name (``interval``, ``path3``, ``pitchfork`` ...)."""
    extra = {"interval": interval(), "interval_dd": interval(both_dirichlet=True)}
    table = {**reference_suite(), **extra}
    if name in table:
        return table[name]
    if name.startswith("path") and name[4:].isdigit():
        n = int(name[4:])
        return path_graph(n, n)
    raise KeyError(f"unknown graph name {name!r}; known: {sorted(table)}")


def iter_suite() -> Iterable[tuple[str, MetricGraph]]:
    return reference_suite().items()
