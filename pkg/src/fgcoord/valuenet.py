"""Factored value networks over dynamic graphs.

A shared recurrent encoder turns each agent's observation/last-action stream
into a hidden state. Per-order heads map concatenated member hidden states to
local value tables: order-1 heads emit a raw action-value vector, higher
orders emit CP factors. Scalar per-order baseline heads mirror the layout for
the action-independent V side. Both single-step evaluation (action selection)
and batched evaluation with exact gradients (training) live here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cptensor import (
    CpTensor,
    cp_evaluate,
    cp_evaluate_batch_grad,
    cp_from_heads,
    cp_materialize,
)
from .graphs import FactorGraph
from .nn import GruCell, Mlp, ParamVector


def default_rank(order: int) -> int:
    """CP rank per factor order; order 1 needs none (direct vector head)."""
    if order <= 1:
        return 0
    return 4 if order == 2 else 8


def one_hot(indices: np.ndarray, width: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros(indices.shape + (width,), dtype=np.float64)
    np.put_along_axis(out, indices[..., None], 1.0, axis=-1)
    return out


class HistoryEncoder:
    """Shared recurrent cell over [observation, one-hot previous action]."""

    def __init__(self, params: ParamVector, name: str, obs_dim: int, n_actions: int,
                 hidden_dim: int, rng: np.random.Generator):
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.hidden_dim = hidden_dim
        self.in_dim = obs_dim + n_actions
        self.cell = GruCell(params, f"{name}.gru", self.in_dim, hidden_dim, rng)

    def initial_hidden(self, n_rows: int) -> np.ndarray:
        return np.zeros((n_rows, self.hidden_dim))

    def _inputs(self, obs: np.ndarray, prev_actions: np.ndarray | None) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(f"observation width {obs.shape[-1]} != {self.obs_dim}")
        if prev_actions is None:
            acts = np.zeros(obs.shape[:-1] + (self.n_actions,))
        else:
            acts = one_hot(prev_actions, self.n_actions)
        return np.concatenate([obs, acts], axis=-1)

    def step(self, h_prev: np.ndarray, obs: np.ndarray,
             prev_actions: np.ndarray | None) -> tuple[np.ndarray, tuple]:
        """One shared-parameter update for a stack of agents."""
        return self.cell.step(h_prev, self._inputs(obs, prev_actions))

    def encode_batch(self, obs: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, list]:
        """obs (B, T+1, n, od), actions (B, T, n) -> hidden (B, T+1, n, H).

        Step t consumes obs_t and the one-hot of u_{t-1} (zeros at t=0).
        """
        obs = np.asarray(obs, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.int64)
        b, t1, n, _ = obs.shape
        h = self.initial_hidden(b * n)
        hidden = np.empty((b, t1, n, self.hidden_dim))
        caches = []
        for t in range(t1):
            prev = actions[:, t - 1].reshape(b * n) if t > 0 else None
            h, cache = self.step(h, obs[:, t].reshape(b * n, self.obs_dim), prev)
            caches.append(cache)
            hidden[:, t] = h.reshape(b, n, self.hidden_dim)
        return hidden, caches

    def encode_batch_backward(self, upstream: np.ndarray, caches: list,
                              grads: ParamVector) -> None:
        """Exact backward through time for encode_batch; accumulates into grads."""
        upstream = np.asarray(upstream, dtype=np.float64)
        b, t1, n, hd = upstream.shape
        dh = np.zeros((b * n, hd))
        for t in range(t1 - 1, -1, -1):
            dh = dh + upstream[:, t].reshape(b * n, hd)
            dh, _ = self.cell.step_backward(dh, caches[t], grads)


@dataclass(frozen=True)
class LocalQTable:
    """One factor's action-value table: CP factors, or a raw vector at order 1."""

    factor_id: int
    members: tuple[int, ...]
    data: CpTensor | np.ndarray

    def dense(self) -> np.ndarray:
        if isinstance(self.data, CpTensor):
            return cp_materialize(self.data).as_ndarray()
        return self.data

    def value(self, member_actions) -> float:
        if isinstance(self.data, CpTensor):
            return cp_evaluate(self.data, member_actions)
        return float(self.data[int(np.asarray(member_actions).reshape(-1)[0])])


@dataclass(frozen=True)
class FactorGroup:
    """Same-order factor instances gathered across a (batch, time) grid.

    members[r] lists the agents of instance r ascending; actions may be None
    for action-independent heads.
    """

    order: int
    b_idx: np.ndarray
    t_idx: np.ndarray
    members: np.ndarray
    actions: np.ndarray | None

    @property
    def size(self) -> int:
        return self.b_idx.shape[0]


def _gather_inputs(hidden: np.ndarray, group: FactorGroup) -> np.ndarray:
    """Concatenate member hidden states ascending: (R, order*H)."""
    picked = hidden[group.b_idx[:, None], group.t_idx[:, None], group.members]
    return picked.reshape(group.size, group.order * hidden.shape[-1])


def _scatter_inputs(dhidden: np.ndarray, group: FactorGroup, dinp: np.ndarray) -> None:
    hd = dhidden.shape[-1]
    np.add.at(dhidden,
              (group.b_idx[:, None], group.t_idx[:, None], group.members),
              dinp.reshape(group.size, group.order, hd))


class LocalValueHeads:
    """Per-order action-value heads shared across same-order factors."""

    def __init__(self, params: ParamVector, name: str, hidden_dim: int, n_actions: int,
                 max_order: int, mlp_hidden: int, rng: np.random.Generator,
                 ranks: dict[int, int] | None = None):
        if max_order < 1:
            raise ValueError("max_order must be >= 1")
        self.hidden_dim = hidden_dim
        self.n_actions = n_actions
        self.max_order = max_order
        self.ranks = {d: (ranks or {}).get(d, default_rank(d)) for d in range(1, max_order + 1)}
        self.heads: dict[int, Mlp] = {}
        for order in range(1, max_order + 1):
            out_dim = n_actions if order == 1 else order * self.ranks[order] * n_actions
            self.heads[order] = Mlp(params, f"{name}.d{order}", order * hidden_dim,
                                    mlp_hidden, out_dim, rng)

    def _head(self, order: int) -> Mlp:
        if order not in self.heads:
            raise ValueError(f"no head for factor order {order}")
        return self.heads[order]

    def local_q(self, factor_id: int, graph: FactorGraph, hidden: np.ndarray) -> LocalQTable:
        """Single-step table for one factor; hidden is the (n, H) stack."""
        if not 0 <= factor_id < graph.n_factors:
            raise ValueError(f"unknown factor id {factor_id}")
        members = graph.members[factor_id]
        order = len(members)
        inp = np.asarray(hidden, dtype=np.float64)[list(members)].reshape(1, -1)
        out, _ = self._head(order).forward(inp)
        if order == 1:
            return LocalQTable(factor_id, members, out[0])
        cp = cp_from_heads(out[0], order, self.ranks[order], self.n_actions)
        return LocalQTable(factor_id, members, cp)

    def local_tables(self, graph: FactorGraph, hidden: np.ndarray) -> list[np.ndarray]:
        """Dense per-factor tables ready for message passing."""
        return [self.local_q(j, graph, hidden).dense() for j in range(graph.n_factors)]

    def q_tot(self, graph: FactorGraph, hidden: np.ndarray, joint_action) -> float:
        """Sum of every factor's value at the joint action."""
        action = np.asarray(joint_action, dtype=np.int64)
        if action.shape != (graph.n_agents,):
            raise ValueError("joint action must list one action per agent")
        total = 0.0
        for j in range(graph.n_factors):
            table = self.local_q(j, graph, hidden)
            total += table.value(action[list(table.members)])
        return total

    def evaluate_batch(self, hidden: np.ndarray, groups: list[FactorGroup]) -> tuple[np.ndarray, list]:
        """Per-instance values for grouped factors over hidden (B, T, n, H)."""
        values = []
        caches = []
        for group in groups:
            if group.actions is None:
                raise ValueError("action-value heads need the taken actions")
            inp = _gather_inputs(hidden, group)
            out, mlp_cache = self._head(group.order).forward(inp)
            if group.order == 1:
                vals = out[np.arange(group.size), group.actions[:, 0]]
                caches.append((group, mlp_cache, None))
            else:
                factors = out.reshape(group.size, group.order, self.ranks[group.order], self.n_actions)
                vals, gfac = cp_evaluate_batch_grad(factors, group.actions)
                caches.append((group, mlp_cache, gfac))
            values.append(vals)
        flat = np.concatenate(values) if values else np.zeros(0)
        return flat, caches

    def evaluate_batch_backward(self, dvalues: np.ndarray, caches: list,
                                grads: ParamVector, dhidden: np.ndarray) -> None:
        """Accumulate head grads and encoder-input grads from per-instance dL/dv."""
        offset = 0
        for group, mlp_cache, gfac in caches:
            dv = np.asarray(dvalues[offset : offset + group.size], dtype=np.float64)
            offset += group.size
            if group.order == 1:
                dout = np.zeros((group.size, self.n_actions))
                dout[np.arange(group.size), group.actions[:, 0]] = dv
            else:
                dout = (dv[:, None, None, None] * gfac).reshape(group.size, -1)
            dinp = self._head(group.order).backward(dout, mlp_cache, grads)
            _scatter_inputs(dhidden, group, dinp)


class LocalBaselineHeads:
    """Per-order scalar baselines: action-independent value per factor."""

    def __init__(self, params: ParamVector, name: str, hidden_dim: int, max_order: int,
                 mlp_hidden: int, rng: np.random.Generator):
        if max_order < 1:
            raise ValueError("max_order must be >= 1")
        self.hidden_dim = hidden_dim
        self.max_order = max_order
        self.heads: dict[int, Mlp] = {}
        for order in range(1, max_order + 1):
            self.heads[order] = Mlp(params, f"{name}.d{order}", order * hidden_dim,
                                    mlp_hidden, 1, rng)

    def _head(self, order: int) -> Mlp:
        if order not in self.heads:
            raise ValueError(f"no baseline head for factor order {order}")
        return self.heads[order]

    def factor_values(self, graph: FactorGraph, hidden: np.ndarray) -> np.ndarray:
        """Per-factor scalars for one step; hidden is the (n, H) stack."""
        hidden = np.asarray(hidden, dtype=np.float64)
        out = np.zeros(graph.n_factors)
        for j, members in enumerate(graph.members):
            inp = hidden[list(members)].reshape(1, -1)
            val, _ = self._head(len(members)).forward(inp)
            out[j] = val[0, 0]
        return out

    def v_tot(self, graph: FactorGraph, hidden: np.ndarray) -> tuple[float, np.ndarray]:
        """Sum plus the per-factor scalars it is made of."""
        values = self.factor_values(graph, hidden)
        return float(values.sum()), values

    def evaluate_batch(self, hidden: np.ndarray, groups: list[FactorGroup]) -> tuple[np.ndarray, list]:
        values = []
        caches = []
        for group in groups:
            inp = _gather_inputs(hidden, group)
            out, mlp_cache = self._head(group.order).forward(inp)
            values.append(out[:, 0])
            caches.append((group, mlp_cache))
        flat = np.concatenate(values) if values else np.zeros(0)
        return flat, caches

    def evaluate_batch_backward(self, dvalues: np.ndarray, caches: list,
                                grads: ParamVector, dhidden: np.ndarray) -> None:
        offset = 0
        for group, mlp_cache in caches:
            dv = np.asarray(dvalues[offset : offset + group.size], dtype=np.float64)
            offset += group.size
            dinp = self._head(group.order).backward(dv[:, None], mlp_cache, grads)
            _scatter_inputs(dhidden, group, dinp)
