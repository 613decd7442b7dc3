"""Brute-force reference implementations for tests and the selftest command.

Everything here is deliberately coded independently of the engine modules
(different algorithms where possible) so agreement is evidence, not tautology.
Nothing in the training path imports this module.
"""

from __future__ import annotations

import itertools
import math
from typing import Iterable

import numpy as np

from .graphs import Adjacency, FactorGraph
from .maxplus import brute_force_argmax

MAX_JOINT_ACTIONS = 10**7
MAX_PMF_SUPPORT = 10**6

# Spec alias: the exhaustive joint-action maximizer exposed to tests.
exhaustive_q_argmax = brute_force_argmax


def acyclic_by_union_find(adjacency: Adjacency) -> bool:
    """Cycle check via union-find over factor columns (independent of BFS count)."""
    n = adjacency.n_agents
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for j in range(adjacency.n_factors):
        members = [int(i) for i in np.flatnonzero(adjacency.entries[:, j])]
        if not members:
            continue
        root = find(members[0])
        for other in members[1:]:
            other_root = find(other)
            if other_root == root:
                return False  # factor joins two already-connected agents
            parent[other_root] = root
    return True


def enumerate_count_vectors(n: int, d_max: int) -> list[tuple[int, ...]]:
    """All length-n nonnegative integer vectors summing to d_max, descending lex order.

    Stars and bars: choose bar positions among n-1+d_max slots.
    """
    if n < 1 or d_max < 1:
        raise ValueError("need n >= 1 and d_max >= 1")
    total = math.comb(n + d_max - 1, n - 1)
    if total > MAX_PMF_SUPPORT:
        raise ValueError(f"support size {total} exceeds guard {MAX_PMF_SUPPORT}")
    out = []
    for bars in itertools.combinations(range(n + d_max - 1), n - 1):
        prev = -1
        counts = []
        for b in bars:
            counts.append(b - prev - 1)
            prev = b
        counts.append(n + d_max - 1 - prev - 1)
        out.append(tuple(counts))
    return sorted(out, reverse=True)


def factorial_pmf(p: Iterable[float], counts: Iterable[int]) -> float:
    """Multinomial PMF from the raw factorial formula (no log-space shortcuts)."""
    p = list(float(x) for x in p)
    counts = list(int(c) for c in counts)
    total = sum(counts)
    value = float(math.factorial(total))
    for pi, ci in zip(p, counts):
        value /= math.factorial(ci)
        value *= pi**ci
    return value


def enumerate_pmf_support(p, d_max: int) -> list[tuple[tuple[int, ...], float]]:
    """Complete count-vector enumeration with probabilities under p."""
    p = np.asarray(p, dtype=np.float64)
    vectors = enumerate_count_vectors(p.size, d_max)
    return [(vec, factorial_pmf(p, vec)) for vec in vectors]


def partition_by_support(
    enumeration: list[tuple[tuple[int, ...], float]],
) -> dict[tuple[int, ...], list[tuple[tuple[int, ...], float]]]:
    """Group count vectors by their support set G; cells are disjoint by construction."""
    cells: dict[tuple[int, ...], list[tuple[tuple[int, ...], float]]] = {}
    for vec, prob in enumeration:
        support = tuple(i for i, c in enumerate(vec) if c > 0)
        cells.setdefault(support, []).append((vec, prob))
    return cells


def slow_joint_argmax(graph: FactorGraph, tables) -> tuple[np.ndarray, float]:
    """Second, independently coded enumeration: plain nested iteration."""
    n, a = graph.n_agents, graph.actions_per_agent
    if a**n > MAX_JOINT_ACTIONS:
        raise ValueError(f"joint space {a}^{n} exceeds guard {MAX_JOINT_ACTIONS}")
    arrays = [np.asarray(t, dtype=np.float64) for t in tables]
    best_action: tuple[int, ...] | None = None
    best_value = -math.inf
    for action in itertools.product(range(a), repeat=n):
        value = 0.0
        for table, mem in zip(arrays, graph.members):
            value += float(table[tuple(action[i] for i in mem)])
        if value > best_value:
            best_value = value
            best_action = action
    assert best_action is not None
    return np.asarray(best_action, dtype=np.int64), best_value
