"""Factor-graph topologies: validation, identity augmentation, degenerate presets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Adjacency:
    """Binary n x m incidence matrix between agent rows and factor columns."""

    entries: np.ndarray

    def __post_init__(self):
        mat = np.ascontiguousarray(np.asarray(self.entries), dtype=np.int8)
        if mat.ndim != 2:
            raise ValueError(f"adjacency must be 2-d, got shape {mat.shape}")
        if mat.shape[0] < 1:
            raise ValueError("adjacency needs at least one agent row")
        if mat.size and not np.isin(mat, (0, 1)).all():
            raise ValueError("adjacency entries must be 0 or 1")
        if mat.shape[1] and (mat.sum(axis=0) == 0).any():
            raise ValueError("adjacency has an orphan factor column (all zeros)")
        object.__setattr__(self, "entries", mat)

    @property
    def n_agents(self) -> int:
        return self.entries.shape[0]

    @property
    def n_factors(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True, eq=False)
class FactorGraph:
    """Bipartite agent/factor graph with a fixed per-agent action count."""

    adjacency: Adjacency
    actions_per_agent: int
    factor_orders: tuple[int, ...]
    members: tuple[tuple[int, ...], ...]

    @property
    def n_agents(self) -> int:
        return self.adjacency.n_agents

    @property
    def n_factors(self) -> int:
        return self.adjacency.n_factors


def build_graph(adjacency: Adjacency, actions_per_agent: int) -> FactorGraph:
    """Construct a FactorGraph, deriving factor orders from column sums."""
    if actions_per_agent < 2:
        raise ValueError(f"actions_per_agent must be >= 2, got {actions_per_agent}")
    mat = adjacency.entries
    members = tuple(tuple(int(i) for i in np.flatnonzero(mat[:, j])) for j in range(mat.shape[1]))
    orders = tuple(len(m) for m in members)
    return FactorGraph(adjacency, int(actions_per_agent), orders, members)


def augment_identity(adjacency: Adjacency) -> Adjacency:
    """Append an n x n identity block so every agent keeps a unary factor."""
    n = adjacency.n_agents
    return Adjacency(np.concatenate([adjacency.entries, np.eye(n, dtype=np.int8)], axis=1))


def is_acyclic(graph: FactorGraph) -> bool:
    """True iff the bipartite graph is a forest (no cycle through any factor)."""
    n, m = graph.n_agents, graph.n_factors
    edges = sum(graph.factor_orders)
    # Forest test: edge count equals node count minus component count.
    seen_agents = np.zeros(n, dtype=bool)
    seen_factors = np.zeros(m, dtype=bool)
    agent_factors: list[list[int]] = [[] for _ in range(n)]
    for j, mem in enumerate(graph.members):
        for i in mem:
            agent_factors[i].append(j)
    components = 0
    for start in range(n):
        if seen_agents[start]:
            continue
        components += 1
        stack = [("a", start)]
        seen_agents[start] = True
        while stack:
            kind, node = stack.pop()
            if kind == "a":
                for j in agent_factors[node]:
                    if not seen_factors[j]:
                        seen_factors[j] = True
                        stack.append(("f", j))
            else:
                for i in graph.members[node]:
                    if not seen_agents[i]:
                        seen_agents[i] = True
                        stack.append(("a", i))
    components += int(np.count_nonzero(~seen_factors))  # factor-only components cannot occur, but count defensively
    return edges == (n + m) - components


def preset_topology(kind: str, n: int) -> Adjacency:
    """Degenerate presets: 'vdn' (no shared factors) or 'dcg-pairwise' (all pairs)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if kind == "vdn":
        return Adjacency(np.zeros((n, 0), dtype=np.int8))
    if kind == "dcg-pairwise":
        cols = []
        for i in range(n):
            for j in range(i + 1, n):
                col = np.zeros(n, dtype=np.int8)
                col[i] = col[j] = 1
                cols.append(col)
        if not cols:
            return Adjacency(np.zeros((n, 0), dtype=np.int8))
        return Adjacency(np.stack(cols, axis=1))
    raise ValueError(f"unknown preset kind {kind!r}")
