"""Undirected communication graphs and the directed-constraint index.

Every pairwise constraint lives on a directed neighbor pair (i, j), so an
undirected graph with E edges carries m = 2*E dual slots.  Neighbor lists are
stored sorted ascending, which fixes the iteration order of every loop built
on top of them.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, MissingConstraintError

__all__ = [
    "Graph",
    "ConstraintIndex",
    "generate_erdos_renyi",
    "save_edge_list",
    "load_edge_list",
]


@dataclass(frozen=True)
class Graph:
    """Immutable undirected graph with sorted neighbor lists.

    Attributes:
        n: node count.
        edges: unordered edges as sorted (i, j) tuples with i < j, sorted
            lexicographically.
        neighbors: per-node tuple of neighbor indices, ascending.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    neighbors: tuple[tuple[int, ...], ...]

    @property
    def m(self) -> int:
        """Number of directed constraints (dual slots): twice the edge count."""
        return 2 * len(self.edges)

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])

    def is_connected(self) -> bool:
        """BFS connectivity check; a single node counts as connected."""
        if self.n == 0:
            return True
        seen = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in self.neighbors[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == self.n


def _build_graph(n: int, edge_set: set[tuple[int, int]]) -> Graph:
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j in edge_set:
        adj[i].append(j)
        adj[j].append(i)
    return Graph(
        n=n,
        edges=tuple(sorted(edge_set)),
        neighbors=tuple(tuple(sorted(a)) for a in adj),
    )


def generate_erdos_renyi(n: int, p: float, seed: int) -> Graph:
    """Sample a G(n, p) graph, deterministically for a given (n, p, seed).

    Each unordered pair (i, j), i < j, is included independently with
    probability p.  Pairs are visited in lexicographic order so the stream of
    random draws, and hence the graph, is reproducible bit-for-bit.
    """
    if n < 2:
        raise ConfigError(f"graph needs at least 2 nodes, got n={n}")
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"edge probability must lie in [0, 1], got p={p}")
    rng = np.random.default_rng(seed)
    edge_set: set[tuple[int, int]] = set()
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                edge_set.add((i, j))
    return _build_graph(n, edge_set)


@dataclass(frozen=True)
class ConstraintIndex:
    """Bijection between directed neighbor pairs and dual slots in [0, m).

    Slots are assigned in lexicographic order of (i, j) over all ordered pairs
    with j a neighbor of i, so slot order is deterministic for a given graph.
    """

    pairs: tuple[tuple[int, int], ...]
    _slot_of: dict[tuple[int, int], int] = field(repr=False, compare=False, default_factory=dict)

    @classmethod
    def from_graph(cls, graph: Graph) -> "ConstraintIndex":
        pairs = tuple(
            (i, j) for i in range(graph.n) for j in graph.neighbors[i]
        )
        return cls(pairs=pairs, _slot_of={p: s for s, p in enumerate(pairs)})

    def __len__(self) -> int:
        return len(self.pairs)

    def slot(self, i: int, j: int) -> int:
        try:
            return self._slot_of[(i, j)]
        except KeyError:
            raise MissingConstraintError(
                f"no constraint between nodes {i} and {j}"
            ) from None

    def pair(self, slot: int) -> tuple[int, int]:
        return self.pairs[slot]

    def reverse_slot(self, slot: int) -> int:
        """Slot of the mirrored pair (j, i)."""
        i, j = self.pairs[slot]
        return self._slot_of[(j, i)]


def save_edge_list(graph: Graph, path: str) -> None:
    """Write "n m" then one "i j" line per unordered edge."""
    lines = [f"{graph.n} {graph.m}"]
    lines += [f"{i} {j}" for i, j in graph.edges]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_edge_list(path: str) -> Graph:
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise ConfigError(f"edge-list file {path!r} is truncated")
    n, m = int(tokens[0]), int(tokens[1])
    flat = [int(t) for t in tokens[2:]]
    if len(flat) != m:  # m counts directed constraints, i.e. 2 ints per edge
        raise ConfigError(
            f"edge-list file {path!r}: expected {m // 2} edges, got {len(flat) // 2}"
        )
    edge_set: set[tuple[int, int]] = set()
    for a, b in zip(flat[::2], flat[1::2]):
        if a == b or not (0 <= a < n and 0 <= b < n):
            raise ConfigError(f"edge-list file {path!r}: bad edge ({a}, {b})")
        edge_set.add((min(a, b), max(a, b)))
    return _build_graph(n, edge_set)
