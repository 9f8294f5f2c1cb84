"""Spatial adjacency graphs and their intrinsic autoregression structure.

The adjacency file format is plain UTF-8 text with one record per area::

    # comment lines start with a hash
    A: B C
    B: A
    C:

Each record is ``<area_id>: <neighbour> <neighbour> ...`` where ids are
whitespace-free tokens.  Listings may be asymmetric; the parsed edge set is
the symmetrized union.  The order of area records defines matrix row order
everywhere downstream, so results can be mapped back onto the input areas
without relabelling.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import InputError
from .structures import StructureMatrix

__all__ = [
    "SpatialGraph",
    "parse_adjacency",
    "read_adjacency_file",
    "lattice_graph",
    "connected_components",
    "icar_structure",
]


@dataclass(frozen=True)
class SpatialGraph:
    """Undirected neighbourhood graph over labelled areas.

    Attributes
    ----------
    area_ids : tuple of str
        Area labels in file order; the order fixes matrix row order.
    edges : frozenset of (int, int)
        Unordered neighbour pairs stored as ``(lo, hi)`` index tuples.
    """

    area_ids: tuple[str, ...]
    edges: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def __post_init__(self):
        n = len(self.area_ids)
        if n == 0:
            raise InputError("graph must contain at least one area")
        if len(set(self.area_ids)) != n:
            raise InputError("area ids must be unique")
        for a, b in self.edges:
            if not (0 <= a < n and 0 <= b < n):
                raise InputError(f"edge ({a}, {b}) references an area outside [0, {n})")
            if a == b:
                raise InputError(f"self-loop on area index {a}")
            if a > b:
                raise InputError("edges must be stored as (lo, hi) pairs")

    @property
    def n_areas(self) -> int:
        return len(self.area_ids)

    def neighbours(self, i: int) -> list[int]:
        out = []
        for a, b in self.edges:
            if a == i:
                out.append(b)
            elif b == i:
                out.append(a)
        return sorted(out)


def parse_adjacency(text: str) -> SpatialGraph:
    """Parse an adjacency-list document into a :class:`SpatialGraph`.

    Raises
    ------
    InputError
        On a duplicate area record, a self-loop, or a neighbour label that
        never appears as an area record.  The offending line number is
        included in the message.
    """
    records: list[tuple[int, str, list[str]]] = []
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, sep, tail = line.partition(":")
        if not sep:
            raise InputError(f"line {lineno}: expected '<area_id>: <neighbours>'")
        area = head.strip()
        if not area or any(ch.isspace() for ch in area):
            raise InputError(f"line {lineno}: bad area id {area!r}")
        if area in seen:
            raise InputError(
                f"line {lineno}: duplicate record for area {area!r} "
                f"(first seen on line {seen[area]})"
            )
        seen[area] = lineno
        records.append((lineno, area, tail.split()))

    area_ids = tuple(area for _, area, _ in records)
    index = {a: i for i, a in enumerate(area_ids)}
    edges: set[tuple[int, int]] = set()
    for lineno, area, neighbours in records:
        i = index[area]
        for label in neighbours:
            if label not in index:
                raise InputError(
                    f"line {lineno}: neighbour {label!r} of {area!r} is not a "
                    "declared area"
                )
            j = index[label]
            if i == j:
                raise InputError(f"line {lineno}: self-loop on area {area!r}")
            edges.add((min(i, j), max(i, j)))
    return SpatialGraph(area_ids=area_ids, edges=frozenset(edges))


def read_adjacency_file(path) -> SpatialGraph:
    with open(path, encoding="utf-8") as fh:
        return parse_adjacency(fh.read())


def lattice_graph(nrows: int, ncols: int) -> SpatialGraph:
    """Regular grid with rook adjacency, areas labelled ``r<i>c<j>``."""
    if nrows < 1 or ncols < 1:
        raise InputError("lattice dimensions must be positive")
    ids = tuple(f"r{i}c{j}" for i in range(nrows) for j in range(ncols))
    edges = set()
    for i in range(nrows):
        for j in range(ncols):
            a = i * ncols + j
            if j + 1 < ncols:
                edges.add((a, a + 1))
            if i + 1 < nrows:
                edges.add((a, a + ncols))
    return SpatialGraph(area_ids=ids, edges=frozenset(edges))


def connected_components(g: SpatialGraph) -> list[set[int]]:
    """Partition area indices into connected components.

    Components are ordered by their smallest member, so the output is
    deterministic for a given graph.
    """
    adj: dict[int, list[int]] = {i: [] for i in range(g.n_areas)}
    for a, b in g.edges:
        adj[a].append(b)
        adj[b].append(a)
    unvisited = set(range(g.n_areas))
    components = []
    while unvisited:
        start = min(unvisited)
        stack = [start]
        comp = set()
        while stack:
            node = stack.pop()
            if node in comp:
                continue
            comp.add(node)
            stack.extend(m for m in adj[node] if m not in comp)
        components.append(comp)
        unvisited -= comp
    return components


def icar_structure(g: SpatialGraph) -> StructureMatrix:
    """Intrinsic autoregression structure D - W for the graph.

    D is the diagonal of neighbour counts and W the 0/1 adjacency matrix.
    Row sums are exactly zero and the rank deficiency equals the number of
    connected components.  Disconnected graphs are accepted with a warning;
    each component later receives its own sum-to-zero constraint.
    """
    n = g.n_areas
    rows, cols, vals = [], [], []
    degree = np.zeros(n)
    for a, b in g.edges:
        rows += [a, b]
        cols += [b, a]
        vals += [-1.0, -1.0]
        degree[a] += 1.0
        degree[b] += 1.0
    rows += list(range(n))
    cols += list(range(n))
    vals += list(degree)
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    n_components = len(connected_components(g))
    if n_components > 1:
        warnings.warn(
            f"study region is disconnected ({n_components} components); each "
            "component adds one unit of rank deficiency and one sum-to-zero "
            "constraint",
            stacklevel=2,
        )
    return StructureMatrix(matrix=matrix, rank_deficiency=n_components)
