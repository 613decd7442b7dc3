"""Max-plus message passing on (possibly loopy) factor graphs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cptensor import DenseTensor
from .graphs import FactorGraph

MAX_JOINT_ACTIONS = 10**7


@dataclass(frozen=True)
class MaxPlusConfig:
    max_iterations: int = 30
    damping: float = 0.5
    tolerance: float = 1e-6
    anytime: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError(f"damping must be in [0, 1), got {self.damping}")
        if self.tolerance < 0.0:
            raise ValueError(f"tolerance must be >= 0, got {self.tolerance}")


@dataclass
class MaxPlusResult:
    action: np.ndarray
    value: float
    beliefs: np.ndarray
    iterations: int
    best_value_trace: list[float] = field(default_factory=list)


def _as_table(table, order: int, actions: int) -> np.ndarray:
    if isinstance(table, DenseTensor):
        if table.modes != order or table.actions != actions:
            raise ValueError(f"table shape ({table.modes}, {table.actions}) != ({order}, {actions})")
        return table.as_ndarray()
    arr = np.asarray(table, dtype=np.float64)
    if arr.shape != (actions,) * order:
        raise ValueError(f"table shape {arr.shape} does not match order {order}, actions {actions}")
    return arr


def msg_var_to_factor(incoming: Sequence[np.ndarray], actions: int) -> np.ndarray:
    """Sum of the other factors' messages at a variable, mean-centered."""
    out = np.zeros(actions, dtype=np.float64)
    for msg in incoming:
        msg = np.asarray(msg, dtype=np.float64)
        if msg.shape != (actions,):
            raise ValueError(f"message length {msg.shape} != ({actions},)")
        out += msg
    return out - out.mean()


def msg_factor_to_var(factor_table, incoming: Sequence[np.ndarray | None], target: int) -> np.ndarray:
    """Max over the other variables of table plus their messages, mean-centered."""
    table = np.asarray(
        factor_table.as_ndarray() if isinstance(factor_table, DenseTensor) else factor_table,
        dtype=np.float64,
    )
    order = table.ndim
    if len(incoming) != order:
        raise ValueError(f"expected {order} incoming slots, got {len(incoming)}")
    if not 0 <= target < order:
        raise ValueError(f"target {target} out of range for order {order}")
    acc = table
    for d, msg in enumerate(incoming):
        if d == target or msg is None:
            continue
        msg = np.asarray(msg, dtype=np.float64)
        if msg.shape != (table.shape[d],):
            raise ValueError("incoming message length mismatch")
        shape = [1] * order
        shape[d] = msg.size
        acc = acc + msg.reshape(shape)
    axes = tuple(d for d in range(order) if d != target)
    out = acc.max(axis=axes) if axes else acc.copy()
    return out - out.mean()


def score_action(graph: FactorGraph, tables: list[np.ndarray], action: np.ndarray) -> float:
    """Exact global value of a joint action: sum of all factor table entries."""
    total = 0.0
    for table, mem in zip(tables, graph.members):
        total += float(table[tuple(action[list(mem)])])
    return total


def run_maxplus(graph: FactorGraph, tables, config: MaxPlusConfig | None = None) -> MaxPlusResult:
    """Synchronous damped max-plus; decodes per-agent belief argmax each iteration.

    With anytime tracking on, the returned action is the exactly scored best
    candidate visited across iterations, never worse than the final decode.
    """
    if config is None:
        config = MaxPlusConfig()
    n, a = graph.n_agents, graph.actions_per_agent
    if graph.n_factors == 0:
        raise ValueError("run_maxplus needs at least one factor")
    mats = [_as_table(t, graph.factor_orders[j], a) for j, t in enumerate(tables)]
    if len(mats) != graph.n_factors:
        raise ValueError(f"expected {graph.n_factors} tables, got {len(mats)}")

    # Edge arrays, ordered factor-major so a factor's edges are contiguous.
    edge_agent: list[int] = []
    edge_slices: list[slice] = []
    for mem in graph.members:
        start = len(edge_agent)
        edge_agent.extend(mem)
        edge_slices.append(slice(start, start + len(mem)))
    agents = np.asarray(edge_agent, dtype=np.int64)
    n_edges = agents.size

    f2v = np.zeros((n_edges, a))
    v2f = np.zeros((n_edges, a))
    d = config.damping

    best_action: np.ndarray | None = None
    best_value = -np.inf
    trace: list[float] = []
    beliefs = np.zeros((n, a))
    candidate = np.zeros(n, dtype=np.int64)
    iterations = 0

    for _ in range(config.max_iterations):
        iterations += 1
        # Variable to factor: total belief minus the target factor's own message.
        beliefs_sum = np.zeros((n, a))
        np.add.at(beliefs_sum, agents, f2v)
        new_v2f = beliefs_sum[agents] - f2v
        new_v2f -= new_v2f.mean(axis=1, keepdims=True)
        new_v2f = (1.0 - d) * new_v2f + d * v2f

        # Factor to variable, computed from the previous iteration's v2f.
        new_f2v = np.empty_like(f2v)
        for j, mem in enumerate(graph.members):
            sl = edge_slices[j]
            order = len(mem)
            acc = mats[j]
            inc = v2f[sl]
            for local in range(order):
                shape = [1] * order
                shape[local] = a
                acc = acc + inc[local].reshape(shape)
            for local in range(order):
                shape = [1] * order
                shape[local] = a
                reduced = acc - inc[local].reshape(shape)
                axes = tuple(x for x in range(order) if x != local)
                msg = reduced.max(axis=axes) if axes else reduced
                new_f2v[sl.start + local] = msg - msg.mean()
        new_f2v = (1.0 - d) * new_f2v + d * f2v

        delta = max(
            float(np.abs(new_f2v - f2v).max()) if n_edges else 0.0,
            float(np.abs(new_v2f - v2f).max()) if n_edges else 0.0,
        )
        f2v, v2f = new_f2v, new_v2f

        beliefs = np.zeros((n, a))
        np.add.at(beliefs, agents, f2v)
        candidate = beliefs.argmax(axis=1)
        value = score_action(graph, mats, candidate)
        if value > best_value:
            best_value = value
            best_action = candidate.copy()
        trace.append(best_value)
        if delta < config.tolerance:
            break

    if config.anytime and best_action is not None:
        action = best_action
        value = best_value
    else:
        action = candidate
        value = score_action(graph, mats, candidate)
    return MaxPlusResult(action=action, value=value, beliefs=beliefs, iterations=iterations, best_value_trace=trace)


def brute_force_argmax(graph: FactorGraph, tables) -> tuple[np.ndarray, float]:
    """Exact maximizer of the factored sum; lexicographically smallest on ties."""
    n, a = graph.n_agents, graph.actions_per_agent
    if a**n > MAX_JOINT_ACTIONS:
        raise ValueError(f"joint space {a}^{n} exceeds guard {MAX_JOINT_ACTIONS}")
    mats = [_as_table(t, graph.factor_orders[j], a) for j, t in enumerate(tables)]
    total = np.zeros((a,) * n)
    for table, mem in zip(mats, graph.members):
        shape = [1] * n
        for i in mem:
            shape[i] = a
        total = total + table.reshape(shape)
    flat_idx = int(total.argmax())  # first maximum in C order = lexicographic tie-break
    action = np.asarray(np.unravel_index(flat_idx, total.shape), dtype=np.int64)
    return action, float(total.flat[flat_idx])
