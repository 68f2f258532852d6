"""Radial distribution forests and their path-sum inverse structure.

The operational layout of a distribution grid is a union of disjoint trees,
each rooted at one substation (slack) bus.  Everything downstream relies on
one structural fact: the inverse of the reduced edge-weighted Laplacian of
such a forest has entries equal to the summed edge weights on the shared
portion of the two nodes' paths to their slack.  Entries are therefore
computed by path walks; dense inversion exists only in the test oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    CycleDetected,
    DifferentTrees,
    DisconnectedLoadNode,
    MultipleSlacksInComponent,
    NotParent,
    ParallelLine,
    UnknownNode,
)

ROLE_SUBSTATION = "substation"
ROLE_LOAD = "load"

STATUS_OPERATIONAL = "operational"
STATUS_OPEN = "open"


@dataclass(frozen=True)
class Node:
    id: int
    role: str

    def __post_init__(self):
        if self.role not in (ROLE_SUBSTATION, ROLE_LOAD):
            raise ValueError(f"unknown node role {self.role!r}")


@dataclass(frozen=True)
class Line:
    """An undirected line with per-unit series impedance."""

    a: int
    b: int
    r: float
    x: float
    status: str = STATUS_OPERATIONAL

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError(f"line endpoints must differ, got ({self.a}, {self.b})")
        if not (self.r > 0.0 and self.x > 0.0):
            raise ValueError(f"line ({self.a}, {self.b}) needs r > 0 and x > 0")
        if self.status not in (STATUS_OPERATIONAL, STATUS_OPEN):
            raise ValueError(f"unknown line status {self.status!r}")

    @property
    def key(self) -> tuple[int, int]:
        return (self.a, self.b) if self.a < self.b else (self.b, self.a)


def line_param_map(lines) -> dict[tuple[int, int], tuple[float, float]]:
    """Lookup of (r, x) keyed by unordered endpoint pair, all statuses."""
    return {ln.key: (ln.r, ln.x) for ln in lines}


class RadialForest:
    """Validated operational forest: parent links oriented toward each slack.

    Immutable after construction; all caches are append-only, so concurrent
    reads are safe.
    """

    def __init__(self, nodes, lines, slacks=None):
        nodes = tuple(nodes)
        lines = tuple(lines)
        self.nodes: dict[int, str] = {}
        for nd in nodes:
            if nd.id in self.nodes:
                raise ValueError(f"duplicate node id {nd.id}")
            self.nodes[nd.id] = nd.role
        self.lines = lines

        role_slacks = sorted(i for i, role in self.nodes.items() if role == ROLE_SUBSTATION)
        if slacks is not None:
            if sorted(slacks) != role_slacks:
                raise ValueError("slacks argument disagrees with node roles")
        self.slack_ids: tuple[int, ...] = tuple(role_slacks)
        self.load_ids: tuple[int, ...] = tuple(
            sorted(i for i, role in self.nodes.items() if role == ROLE_LOAD)
        )
        if not self.slack_ids:
            raise ValueError("forest needs at least one substation")
        self._loadpos = {i: k for k, i in enumerate(self.load_ids)}

        seen_pairs: set[tuple[int, int]] = set()
        for ln in lines:
            for end in (ln.a, ln.b):
                if end not in self.nodes:
                    raise UnknownNode(f"line references unknown node {end}")
            if ln.key in seen_pairs:
                raise ParallelLine(f"parallel lines between {ln.key[0]} and {ln.key[1]}")
            seen_pairs.add(ln.key)

        operational = [ln for ln in lines if ln.status == STATUS_OPERATIONAL]

        # Cycle check via union-find over operational lines.
        uf = {i: i for i in self.nodes}

        def find(i):
            while uf[i] != i:
                uf[i] = uf[uf[i]]
                i = uf[i]
            return i

        for ln in operational:
            ra, rb = find(ln.a), find(ln.b)
            if ra == rb:
                raise CycleDetected(f"operational lines close a loop through ({ln.a}, {ln.b})")
            uf[ra] = rb

        adj: dict[int, list[tuple[int, Line]]] = {i: [] for i in self.nodes}
        for ln in operational:
            adj[ln.a].append((ln.b, ln))
            adj[ln.b].append((ln.a, ln))

        self.parent: dict[int, int] = {}
        self.children: dict[int, tuple[int, ...]] = {}
        self.tree_of: dict[int, int] = {}
        self.depth: dict[int, int] = {}
        self.edge_params: dict[int, tuple[float, float]] = {}  # keyed by child id
        children_acc: dict[int, list[int]] = {i: [] for i in self.nodes}
        order: list[int] = []  # loads, parents before children

        visited: set[int] = set()
        for k, slack in enumerate(self.slack_ids):
            self.tree_of[slack] = k
            self.depth[slack] = 0
            visited.add(slack)
            frontier = [slack]
            while frontier:
                cur = frontier.pop(0)
                for nxt, ln in adj[cur]:
                    if nxt in visited:
                        continue
                    if self.nodes[nxt] == ROLE_SUBSTATION:
                        raise MultipleSlacksInComponent(
                            f"substations {slack} and {nxt} share an operational component"
                        )
                    visited.add(nxt)
                    self.parent[nxt] = cur
                    children_acc[cur].append(nxt)
                    self.tree_of[nxt] = k
                    self.depth[nxt] = self.depth[cur] + 1
                    self.edge_params[nxt] = (ln.r, ln.x)
                    order.append(nxt)
                    frontier.append(nxt)

        missing = [i for i in self.load_ids if i not in visited]
        if missing:
            raise DisconnectedLoadNode(f"load nodes {missing} unreachable from any substation")

        self.children = {i: tuple(c) for i, c in children_acc.items()}
        self.topo_order: tuple[int, ...] = tuple(order)

        # Cumulative edge weights from each load up to its slack.
        self._wdepth_r: dict[int, float] = {s: 0.0 for s in self.slack_ids}
        self._wdepth_x: dict[int, float] = {s: 0.0 for s in self.slack_ids}
        for a in self.topo_order:
            r, x = self.edge_params[a]
            p = self.parent[a]
            self._wdepth_r[a] = self._wdepth_r[p] + r
            self._wdepth_x[a] = self._wdepth_x[p] + x

        self._hinv_cache: dict[str, np.ndarray] = {}
        self._desc_cache: dict[int, frozenset[int]] = {}

    # -- basic queries ---------------------------------------------------------

    @property
    def n_loads(self) -> int:
        return len(self.load_ids)

    @property
    def n_trees(self) -> int:
        return len(self.slack_ids)

    def is_load(self, a) -> bool:
        return self.nodes.get(a) == ROLE_LOAD

    def is_slack(self, a) -> bool:
        return self.nodes.get(a) == ROLE_SUBSTATION

    def load_index(self, a) -> int:
        try:
            return self._loadpos[a]
        except KeyError:
            raise UnknownNode(f"{a} is not a load node") from None

    def parent_of(self, a) -> int:
        self.load_index(a)
        return self.parent[a]

    def children_of(self, a) -> tuple[int, ...]:
        if a not in self.nodes:
            raise UnknownNode(f"unknown node {a}")
        return self.children.get(a, ())

    def substation_children(self) -> dict[int, tuple[int, ...]]:
        """Loads directly attached to each slack (the declared prior)."""
        return {s: self.children_of(s) for s in self.slack_ids}

    def edge_weight(self, a, kind: str) -> float:
        """Weight of the line between load ``a`` and its parent."""
        r, x = self.edge_params[a]
        return r if kind == "r" else x

    # -- path structure ----------------------------------------------------------

    def path_edges(self, a) -> tuple[tuple[int, int], ...]:
        """Edges (child, parent) on the unique path from ``a`` to its slack."""
        self.load_index(a)
        out = []
        cur = a
        while not self.is_slack(cur):
            out.append((cur, self.parent[cur]))
            cur = self.parent[cur]
        return tuple(out)

    def descendant_set(self, a) -> frozenset[int]:
        """All loads whose path to the slack passes through ``a``, plus ``a``."""
        self.load_index(a)
        cached = self._desc_cache.get(a)
        if cached is not None:
            return cached
        acc = []
        stack = [a]
        while stack:
            cur = stack.pop()
            acc.append(cur)
            stack.extend(self.children.get(cur, ()))
        out = frozenset(acc)
        self._desc_cache[a] = out
        return out

    def is_descendant(self, c, a) -> bool:
        """True when ``c`` lies in the subtree of ``a`` (including ``c == a``)."""
        self.load_index(a)
        self.load_index(c)
        if self.tree_of[c] != self.tree_of[a]:
            return False
        while self.depth[c] > self.depth[a]:
            c = self.parent[c]
        return c == a

    def _lca(self, a, b):
        if self.tree_of[a] != self.tree_of[b]:
            return None
        while self.depth[a] > self.depth[b]:
            a = self.parent[a]
        while self.depth[b] > self.depth[a]:
            b = self.parent[b]
        while a != b:
            a = self.parent[a]
            b = self.parent[b]
        return a

    def tree_distance(self, a, b) -> float:
        """Hop count between two loads; inf across trees."""
        self.load_index(a)
        self.load_index(b)
        lca = self._lca(a, b)
        if lca is None:
            return math.inf
        return float(self.depth[a] + self.depth[b] - 2 * self.depth[lca])

    # -- path-sum inverse entries ---------------------------------------------------

    def h_inverse_entry(self, kind: str, a, b) -> float:
        """Summed ``kind`` weights on the shared path segment of ``a`` and ``b``.

        Zero when the nodes sit in different trees.
        """
        self.load_index(a)
        self.load_index(b)
        lca = self._lca(a, b)
        if lca is None:
            return 0.0
        wd = self._wdepth_r if kind == "r" else self._wdepth_x
        return wd[lca]

    def h_inverse_diff(self, kind: str, a, parent_b, c) -> float:
        """Row difference between a node and its parent, evaluated at ``c``.

        Equals the (a, parent) edge weight when ``c`` descends from ``a``,
        zero otherwise.
        """
        self.load_index(a)
        if self.parent.get(a) != parent_b:
            raise NotParent(f"{parent_b} is not the parent of {a}")
        self.load_index(c)
        if self.is_descendant(c, a):
            return self.edge_weight(a, kind)
        return 0.0

    # -- dense derived matrices (loads only) -------------------------------------------

    def h_inverse_matrix(self, kind: str) -> np.ndarray:
        """Full N x N path-sum matrix, assembled from subtree indicators."""
        cached = self._hinv_cache.get(kind)
        if cached is not None:
            return cached
        n = self.n_loads
        out = np.zeros((n, n))
        for a in self.topo_order:
            w = self.edge_weight(a, kind)
            idx = np.fromiter(
                (self._loadpos[c] for c in self.descendant_set(a)), dtype=int
            )
            out[np.ix_(idx, idx)] += w
        self._hinv_cache[kind] = out
        return out

    def reduced_incidence(self) -> np.ndarray:
        """Directed incidence over loads (one row per operational edge)."""
        n = self.n_loads
        rows = np.zeros((len(self.topo_order), n))
        for e, a in enumerate(self.topo_order):
            rows[e, self._loadpos[a]] = 1.0
            p = self.parent[a]
            if self.is_load(p):
                rows[e, self._loadpos[p]] = -1.0
        return rows

    def reduced_laplacian(self, kind: str) -> np.ndarray:
        """Reduced Laplacian with reciprocal edge weights.

        ``kind``: "r" -> weights 1/r, "x" -> 1/x, "z" -> 1/(r + jx) (complex).
        """
        n = self.n_loads
        out = np.zeros((n, n), dtype=complex if kind == "z" else float)
        for a in self.topo_order:
            r, x = self.edge_params[a]
            if kind == "r":
                w = 1.0 / r
            elif kind == "x":
                w = 1.0 / x
            else:
                w = 1.0 / complex(r, x)
            ia = self._loadpos[a]
            p = self.parent[a]
            out[ia, ia] += w
            if self.is_load(p):
                ip = self._loadpos[p]
                out[ip, ip] += w
                out[ia, ip] -= w
                out[ip, ia] -= w
        return out

    def parent_map(self) -> dict[int, int]:
        return dict(self.parent)


@dataclass(frozen=True)
class PathSets:
    """Precomputed per-node path edges and descendant sets."""

    path_edges: dict[int, tuple[tuple[int, int], ...]]
    descendants: dict[int, frozenset[int]]


def compute_path_sets(forest: RadialForest) -> PathSets:
    return PathSets(
        path_edges={a: forest.path_edges(a) for a in forest.load_ids},
        descendants={a: forest.descendant_set(a) for a in forest.load_ids},
    )


# -- module-level operation surface ------------------------------------------------


def build_forest(nodes, lines, slacks=None) -> RadialForest:
    """Validate and orient an operational forest from nodes and lines."""
    return RadialForest(nodes, lines, slacks=slacks)


def h_inverse_entry(forest: RadialForest, kind: str, a, b) -> float:
    return forest.h_inverse_entry(kind, a, b)


def h_inverse_diff(forest: RadialForest, kind: str, a, parent_b, c) -> float:
    return forest.h_inverse_diff(kind, a, parent_b, c)


def descendant_set(forest: RadialForest, a) -> frozenset[int]:
    return forest.descendant_set(a)


def require_same_tree(forest: RadialForest, a, b):
    if forest.tree_of[a] != forest.tree_of[b]:
        raise DifferentTrees(f"nodes {a} and {b} sit in different trees")
