"""Communication graphs and factorial subsystems."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .errors import DisconnectedGraph, InvalidEdge


@dataclass(frozen=True)
class Subsystem:
    """Agent ``center`` together with its graph neighbours.

    ``members`` is ordered center first, then neighbours ascending; every
    joint state/control vector in the package uses this layout.
    """

    center: int
    members: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def neighbors(self) -> tuple[int, ...]:
        return self.members[1:]

    def index_of(self, agent: int) -> int:
        return self.members.index(agent)


@dataclass(frozen=True)
class Graph:
    n_agents: int
    edges: frozenset[tuple[int, int]]
    _adj: tuple[tuple[int, ...], ...] = field(repr=False, compare=False, default=())

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self._adj[i]

    def degree(self, i: int) -> int:
        return len(self._adj[i])

    def subsystem(self, i: int) -> Subsystem:
        return factorial_subsystem(self, i)

    def subsystems(self) -> list[Subsystem]:
        return [factorial_subsystem(self, i) for i in range(self.n_agents)]


def build_graph(n_agents: int, edges) -> Graph:
    """Validate an undirected edge list and return a connected ``Graph``.

    Edges are normalised to ``(min, max)`` and deduplicated.
    """
    n_agents = int(n_agents)
    if n_agents < 1:
        raise InvalidEdge(f"n_agents must be positive, got {n_agents}")
    norm = set()
    for e in edges:
        a, b = (int(v) for v in e)
        if a == b:
            raise InvalidEdge(f"self-loop on agent {a}")
        if not (0 <= a < n_agents and 0 <= b < n_agents):
            raise InvalidEdge(f"edge ({a}, {b}) out of range for {n_agents} agents")
        norm.add((min(a, b), max(a, b)))

    adj: list[set[int]] = [set() for _ in range(n_agents)]
    for a, b in norm:
        adj[a].add(b)
        adj[b].add(a)

    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    if len(seen) != n_agents:
        missing = sorted(set(range(n_agents)) - seen)
        raise DisconnectedGraph(f"agents {missing} unreachable from agent 0")

    return Graph(n_agents, frozenset(norm), tuple(tuple(sorted(s)) for s in adj))


def factorial_subsystem(g: Graph, i: int) -> Subsystem:
    if not 0 <= i < g.n_agents:
        raise IndexError(f"agent {i} not in graph of {g.n_agents} agents")
    return Subsystem(i, (i,) + g.neighbors(i))


# topology families used by the complexity report

def line_graph(n: int) -> Graph:
    return build_graph(n, [(k, k + 1) for k in range(n - 1)])


def ring_graph(n: int) -> Graph:
    edges = [(k, k + 1) for k in range(n - 1)]
    if n > 2:
        edges.append((n - 1, 0))
    return build_graph(n, edges)


def complete_binary_tree(n: int) -> Graph:
    return build_graph(n, [((k - 1) // 2, k) for k in range(1, n)])


def complete_graph(n: int) -> Graph:
    return build_graph(n, [(a, b) for a in range(n) for b in range(a + 1, n)])


TOPOLOGIES = {
    "line": line_graph,
    "ring": ring_graph,
    "complete-binary-tree": complete_binary_tree,
    "fully-connected": complete_graph,
}
