"""
Directed acyclic graphs with explicit latent confounders.

Latent confounders are ordinary nodes named ``U_<a><b>`` with exactly two
children and no parents, so a single reachability routine answers every
d-separation query. Graphs are immutable; all queries are read-only.

Plain-text edge lists look like::

    # Figure 1
    Z1 -> D
    D -> M
    U_DY -> D
    U_DY -> Y

A line holding a single name declares an isolated node.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

LATENT_PREFIX = "U_"
MAX_ORACLE_NODES = 12


class InvalidQueryError(ValueError):
    """Raised for queries that reference unknown nodes or overlapping sets."""


class GraphError(ValueError):
    """Raised when a graph violates a structural invariant."""


def _is_latent_name(name: str) -> bool:
    return name.startswith(LATENT_PREFIX)


@dataclass(frozen=True)
class Dag:
    nodes: frozenset
    edges: frozenset
    latent: frozenset

    def __post_init__(self):
        for a, b in self.edges:
            if a not in self.nodes or b not in self.nodes:
                raise GraphError(f"edge {a} -> {b} references an unknown node")
            if a == b:
                raise GraphError(f"self loop on {a}")
        if not self.latent <= self.nodes:
            raise GraphError("latent nodes must be members of nodes")
        for u in self.latent:
            kids = self.children(u)
            if self.parents(u):
                raise GraphError(f"latent node {u} has incoming edges")
            if len(kids) != 2:
                raise GraphError(f"latent node {u} must have exactly two children, has {len(kids)}")
            a, b = sorted(kids)
            suffix = u[len(LATENT_PREFIX):]
            if suffix not in (a + b, b + a):
                raise GraphError(f"latent node {u} does not name the pair it confounds ({a}, {b})")
        if not is_acyclic(self):
            raise GraphError("graph contains a directed cycle")

    @classmethod
    def from_edges(cls, edges: Iterable, nodes: Iterable = (), latent: Iterable | None = None) -> "Dag":
        """Build a graph; nodes named ``U_*`` are latent unless ``latent`` is given."""
        edges = frozenset((str(a), str(b)) for a, b in edges)
        all_nodes = set(nodes)
        for a, b in edges:
            all_nodes.update((a, b))
        if latent is None:
            latent = {v for v in all_nodes if _is_latent_name(v)}
        return cls(frozenset(all_nodes), edges, frozenset(latent))

    @property
    def observed(self) -> frozenset:
        return self.nodes - self.latent

    def parents(self, v: str) -> frozenset:
        return frozenset(a for a, b in self.edges if b == v)

    def children(self, v: str) -> frozenset:
        return frozenset(b for a, b in self.edges if a == v)

    def ancestors(self, vs: Iterable) -> frozenset:
        """Nodes with a directed path into ``vs``, including ``vs`` itself."""
        pa = _parent_map(self)
        seen = set(vs)
        stack = list(seen)
        while stack:
            v = stack.pop()
            for p in pa[v]:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return frozenset(seen)

    def add_confounder(self, a: str, b: str) -> "Dag":
        u = f"{LATENT_PREFIX}{a}{b}"
        return Dag.from_edges(self.edges | {(u, a), (u, b)}, self.nodes, self.latent | {u})

    def to_text(self) -> str:
        lines = [f"{a} -> {b}" for a, b in sorted(self.edges)]
        touched = {v for e in self.edges for v in e}
        lines += sorted(self.nodes - touched)
        return "\n".join(lines) + "\n"


def _parent_map(g: Dag) -> dict:
    pa = {v: [] for v in g.nodes}
    for a, b in g.edges:
        pa[b].append(a)
    return pa


def _child_map(g: Dag) -> dict:
    ch = {v: [] for v in g.nodes}
    for a, b in g.edges:
        ch[a].append(b)
    return ch


def is_acyclic(g) -> bool:
    """Kahn's algorithm; true iff no directed cycle exists.

    Accepts a `Dag` or a bare iterable of ``(from, to)`` pairs, since a
    cyclic edge set cannot be turned into a `Dag` in the first place.
    """
    if isinstance(g, Dag):
        nodes, edges = g.nodes, g.edges
    else:
        edges = list(g)
        nodes = {v for e in edges for v in e}
    indeg = {v: 0 for v in nodes}
    ch = {v: [] for v in nodes}
    for a, b in edges:
        indeg[b] += 1
        ch[a].append(b)
    queue = [v for v, k in indeg.items() if k == 0]
    seen = 0
    while queue:
        v = queue.pop()
        seen += 1
        for c in ch[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                queue.append(c)
    return seen == len(nodes)


def mutilate(g: Dag, cut: Iterable) -> Dag:
    """Interventional graph: delete every edge whose source lies in ``cut``."""
    cut = frozenset(cut)
    unknown = cut - g.nodes
    if unknown:
        raise InvalidQueryError(f"unknown node(s) in cut: {sorted(unknown)}")
    if cut & g.latent:
        raise InvalidQueryError(f"cannot intervene on latent node(s): {sorted(cut & g.latent)}")
    if not cut:
        return g
    # latent children are never observed nodes in cut, so the latent invariant survives
    return Dag(g.nodes, frozenset(e for e in g.edges if e[0] not in cut), g.latent)


def _check_query(g: Dag, a, b, c) -> tuple:
    a, b, c = frozenset(a), frozenset(b), frozenset(c)
    for name, s in (("a", a), ("b", b), ("c", c)):
        missing = s - g.nodes
        if missing:
            raise InvalidQueryError(f"unknown node(s) in {name}: {sorted(missing)}")
    if not a or not b:
        raise InvalidQueryError("a and b must be non-empty")
    if a & b or a & c or b & c:
        raise InvalidQueryError("a, b and c must be pairwise disjoint")
    return a, b, c


def is_dseparated(g: Dag, a: Iterable, b: Iterable, c: Iterable = ()) -> bool:
    """Reachability ("Bayes ball") test of whether ``c`` d-separates ``a`` from ``b``.

    A traversal state is a node plus the direction it was entered from.
    Entering from a child (moving up) through an unconditioned node continues
    both ways; entering from a parent continues down if the node is not
    conditioned on, and bounces up if the node is an ancestor of ``c``.
    """
    a, b, c = _check_query(g, a, b, c)
    pa = _parent_map(g)
    ch = _child_map(g)
    anc = g.ancestors(c)
    up, down = 0, 1
    stack = [(v, up) for v in a]
    visited = set()
    while stack:
        v, direction = stack.pop()
        if (v, direction) in visited:
            continue
        visited.add((v, direction))
        if v not in c and v in b:
            return False
        if direction == up and v not in c:
            stack.extend((p, up) for p in pa[v])
            stack.extend((k, down) for k in ch[v])
        elif direction == down:
            if v not in c:
                stack.extend((k, down) for k in ch[v])
            if v in anc:
                stack.extend((p, up) for p in pa[v])
    return True


def dsep_bruteforce_oracle(g: Dag, a: Iterable, b: Iterable, c: Iterable = ()) -> bool:
    """Enumerate every simple undirected path and apply the blocking rules to each.

    Exponential; intended only as an independent check of `is_dseparated`.
    """
    if len(g.nodes) > MAX_ORACLE_NODES:
        raise InvalidQueryError(f"oracle refuses graphs with more than {MAX_ORACLE_NODES} nodes")
    a, b, c = _check_query(g, a, b, c)
    edge_set = g.edges
    nbrs = {v: set() for v in g.nodes}
    for x, y in edge_set:
        nbrs[x].add(y)
        nbrs[y].add(x)
    desc = {v: _descendants(g, v) for v in g.nodes}

    def open_path(path):
        for prev, mid, nxt in zip(path, path[1:], path[2:]):
            collider = (prev, mid) in edge_set and (nxt, mid) in edge_set
            if collider:
                if not (desc[mid] & c):
                    return False
            elif mid in c:
                return False
        return True

    def walk(path):
        v = path[-1]
        if v in b:
            return open_path(path)
        for w in nbrs[v]:
            if w not in path and walk(path + [w]):
                return True
        return False

    return not any(walk([s]) for s in a)


def _descendants(g: Dag, v: str) -> frozenset:
    ch = _child_map(g)
    seen = {v}
    stack = [v]
    while stack:
        u = stack.pop()
        for k in ch[u]:
            if k not in seen:
                seen.add(k)
                stack.append(k)
    return frozenset(seen)


def parse_edge_list(text: str) -> Dag:
    edges = []
    nodes = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "->" in line:
            parts = [p.strip() for p in line.split("->")]
            if len(parts) != 2 or not all(parts):
                raise GraphError(f"line {lineno}: expected 'from -> to', got {raw!r}")
            edges.append(tuple(parts))
        elif len(line.split()) == 1:
            nodes.append(line)
        else:
            raise GraphError(f"line {lineno}: cannot parse {raw!r}")
    return Dag.from_edges(edges, nodes)


def read_edge_list(path) -> Dag:
    return parse_edge_list(Path(path).read_text())


def random_dag(rng, n_nodes: int, edge_prob: float = 0.35, n_latent: int = 0) -> Dag:
    """Random DAG over ``V0..V{n-1}`` under a random order, plus latent pair confounders."""
    order = list(rng.permutation(n_nodes))
    names = [f"V{i}" for i in range(n_nodes)]
    edges = []
    for i, j in itertools.combinations(range(n_nodes), 2):
        if rng.random() < edge_prob:
            edges.append((names[order[i]], names[order[j]]))
    g = Dag.from_edges(edges, names)
    pairs = list(itertools.combinations(names, 2))
    for k in rng.choice(len(pairs), size=min(n_latent, len(pairs)), replace=False):
        g = g.add_confounder(*pairs[k])
    return g
