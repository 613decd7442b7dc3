"""Episode collection, replay, losses, and the alternating-update math.

All randomness flows through named counter-indexed streams derived from the
master seed, so any training prefix can be reproduced from checkpointed
counters alone. Losses are pure given (records, parameters) and return exact
analytic gradients; the runner owns optimizers and scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graphs import Adjacency, FactorGraph, augment_identity, build_graph
from .maxplus import MaxPlusConfig, run_maxplus
from .nn import ParamVector
from .structure import (
    GraphSample,
    StructurePolicy,
    greedy_structure,
    importance_ratio_grad,
    policy_entropy,
    policy_entropy_grad,
    sample_structure,
)
from .valuenet import (
    FactorGroup,
    HistoryEncoder,
    LocalBaselineHeads,
    LocalValueHeads,
)

# Random-stream tags; every draw site is (master_seed, tag, counter...).
TAG_INIT = 0
TAG_ENV = 1
TAG_EXPLORE = 2
TAG_GRAPH = 3
TAG_UPDATE = 4
TAG_EVAL = 5

GRAPH_MODES = ("learned", "uniform", "vdn")


def stream(seed: int, tag: int, *counters: int) -> np.random.Generator:
    """Deterministic generator for one named draw site."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(tag), *map(int, counters)]))


class RunningStd:
    """Welford accumulator over episode returns; scale() floors at 1e-6."""

    def __init__(self, floor: float = 1e-6):
        self.floor = floor
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, x: float) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def scale(self) -> float:
        if self.count < 2:
            return 1.0
        return max(math.sqrt(self.m2 / self.count), self.floor)

    def state(self) -> tuple[int, float, float]:
        return self.count, self.mean, self.m2

    def load_state(self, state) -> None:
        self.count, self.mean, self.m2 = int(state[0]), float(state[1]), float(state[2])


@dataclass
class EpisodeRecord:
    """One episode, columnar. Row T of obs/states/adjacency is the post-final
    step used for bootstrapping; counts/old_probs only cover acting steps."""

    obs: np.ndarray        # (T+1, n, obs_dim) float32
    states: np.ndarray     # (T+1, state_dim) float32
    actions: np.ndarray    # (T, n) int64
    adjacency: np.ndarray  # (T+1, n, M) uint8
    counts: np.ndarray     # (T, n, M) uint8
    old_probs: np.ndarray  # (T, n, M) float64
    rewards: np.ndarray    # (T,) float64, raw
    dones: np.ndarray      # (T,) bool
    cache_version: int = -1
    cached_q_next: np.ndarray | None = None  # (T,) target Q_tot at t+1 under u*
    cached_v_next: np.ndarray | None = None  # (T,) target V_tot at t+1

    @property
    def length(self) -> int:
        return self.rewards.shape[0]

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())


class EpisodeBuffer:
    """Strictly FIFO episode store."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.items: list[EpisodeRecord] = []

    def add(self, record: EpisodeRecord) -> None:
        if len(self.items) == self.capacity:
            self.items.pop(0)
        self.items.append(record)

    def __len__(self) -> int:
        return len(self.items)

    def sample(self, rng: np.random.Generator, k: int) -> list[EpisodeRecord]:
        if k > len(self.items):
            raise ValueError("not enough stored episodes to sample")
        picked = rng.choice(len(self.items), size=k, replace=False)
        return [self.items[int(i)] for i in picked]


@dataclass(frozen=True)
class Schedules:
    gamma: float = 0.98
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 50_000
    target_sync_interval: int = 200
    lr_q: float = 1e-3
    lr_v: float = 1e-3
    lr_graph: float = 1e-5
    entropy_weight: float = 0.01
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1); 1 is disallowed")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if self.epsilon_decay_steps < 1:
            raise ValueError("epsilon_decay_steps must be >= 1")
        if self.target_sync_interval < 1:
            raise ValueError("target_sync_interval must be >= 1")

    def epsilon(self, step: int) -> float:
        frac = min(max(step, 0) / self.epsilon_decay_steps, 1.0)
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac


@dataclass(frozen=True)
class ModelDims:
    n_agents: int
    n_actions: int
    obs_dim: int
    state_dim: int
    n_factors: int
    d_max: int
    hidden_dim: int = 64
    mlp_hidden: int = 64
    hyper_hidden: int = 64

    @property
    def max_order(self) -> int:
        return max(1, min(self.d_max, self.n_agents))


class ModelBundle:
    """All parameter groups plus their target copies.

    graph_mode 'learned' trains the structure policy; 'uniform' fixes every
    column at 1/n with no policy parameters; 'vdn' drops the sampled columns
    entirely (identity factors only).
    """

    def __init__(self, dims: ModelDims, graph_mode: str, seed: int):
        if graph_mode not in GRAPH_MODES:
            raise ValueError(f"unknown graph mode {graph_mode!r}")
        self.dims = dims
        self.graph_mode = graph_mode
        self.n_factors = 0 if graph_mode == "vdn" else dims.n_factors
        self.target_version = 0
        rng = stream(seed, TAG_INIT)

        self.pv_q = ParamVector()
        self.encoder = HistoryEncoder(self.pv_q, "enc", dims.obs_dim, dims.n_actions,
                                      dims.hidden_dim, rng)
        self.qheads = LocalValueHeads(self.pv_q, "q", dims.hidden_dim, dims.n_actions,
                                      dims.max_order, dims.mlp_hidden, rng)
        self.pv_v = ParamVector()
        self.vheads = LocalBaselineHeads(self.pv_v, "v", dims.hidden_dim, dims.max_order,
                                         dims.mlp_hidden, rng)
        self.pv_g = ParamVector()
        self.policy: StructurePolicy | None = None
        if graph_mode == "learned":
            if self.n_factors < 1:
                raise ValueError("learned graph mode needs at least one factor column")
            self.policy = StructurePolicy(self.pv_g, "g", dims.n_agents, self.n_factors,
                                          dims.hidden_dim, dims.state_dim,
                                          dims.hyper_hidden, rng)

        self.pv_q_target = ParamVector()
        self.encoder_target = HistoryEncoder(self.pv_q_target, "enc", dims.obs_dim,
                                             dims.n_actions, dims.hidden_dim, rng)
        self.qheads_target = LocalValueHeads(self.pv_q_target, "q", dims.hidden_dim,
                                             dims.n_actions, dims.max_order,
                                             dims.mlp_hidden, rng)
        self.pv_v_target = ParamVector()
        self.vheads_target = LocalBaselineHeads(self.pv_v_target, "v", dims.hidden_dim,
                                                dims.max_order, dims.mlp_hidden, rng)
        self.sync_targets()

    def sync_targets(self) -> None:
        self.pv_q_target.copy_from(self.pv_q)
        self.pv_v_target.copy_from(self.pv_v)
        self.target_version += 1

    def edge_probabilities(self, hidden: np.ndarray, state: np.ndarray) -> tuple[np.ndarray, tuple | None]:
        """Per-column agent distributions for one step; hidden is detached."""
        n = self.dims.n_agents
        if self.graph_mode == "vdn":
            return np.zeros((n, 0)), None
        if self.graph_mode == "uniform":
            return np.full((n, self.n_factors), 1.0 / n), None
        assert self.policy is not None
        probs, cache = self.policy.edge_probabilities(np.asarray(hidden), state)
        return probs, cache

    def action_graph(self, sample: GraphSample) -> FactorGraph:
        return build_graph(augment_identity(sample.adjacency), self.dims.n_actions)

    def sampled_graph(self, adjacency_matrix: np.ndarray) -> FactorGraph | None:
        """Graph over the sampled columns only; None when there are none."""
        if adjacency_matrix.shape[1] == 0:
            return None
        return build_graph(Adjacency(adjacency_matrix.astype(np.int8)), self.dims.n_actions)


def collect_episode(bundle: ModelBundle, env, mpconfig: MaxPlusConfig, d_max: int,
                    rng_env: np.random.Generator, rng_explore: np.random.Generator,
                    rng_graph: np.random.Generator, epsilon: float,
                    greedy: bool = False) -> EpisodeRecord:
    """Roll one episode. Greedy mode: no exploration, mode structure."""
    n, a = bundle.dims.n_agents, bundle.dims.n_actions
    obs = env.reset(rng_env)
    h = bundle.encoder.initial_hidden(n)
    prev: np.ndarray | None = None

    obs_rows = [np.asarray(obs, dtype=np.float32)]
    state_rows: list[np.ndarray] = []
    action_rows: list[np.ndarray] = []
    adj_rows: list[np.ndarray] = []
    count_rows: list[np.ndarray] = []
    prob_rows: list[np.ndarray] = []
    rewards: list[float] = []
    dones: list[bool] = []

    def structure_at(hidden: np.ndarray, state: np.ndarray) -> tuple[GraphSample, np.ndarray]:
        probs, _ = bundle.edge_probabilities(hidden, state)
        if greedy:
            return greedy_structure(probs, d_max), probs
        return sample_structure(probs, d_max, rng_graph), probs

    done = False
    while not done:
        h, _ = bundle.encoder.step(h, obs, prev)
        state = env.global_state()
        sample, probs = structure_at(h, state)
        graph = bundle.action_graph(sample)
        tables = bundle.qheads.local_tables(graph, h)
        result = run_maxplus(graph, tables, mpconfig)
        acts = result.action.copy()
        if not greedy:
            # One uniform draw per agent; an action draw only when exploring.
            for i in range(n):
                if rng_explore.random() < epsilon:
                    acts[i] = int(rng_explore.integers(a))
        obs, reward, done = env.step(acts)

        state_rows.append(np.asarray(state, dtype=np.float32))
        action_rows.append(acts.astype(np.int64))
        adj_rows.append(sample.adjacency.entries.astype(np.uint8))
        count_rows.append(sample.counts.astype(np.uint8))
        prob_rows.append(probs.astype(np.float64))
        rewards.append(float(reward))
        dones.append(bool(done))
        obs_rows.append(np.asarray(obs, dtype=np.float32))
        prev = acts

    # Post-final row: encode once more and sample the bootstrap structure.
    h, _ = bundle.encoder.step(h, obs, prev)
    state = env.global_state()
    sample, _ = structure_at(h, state)
    state_rows.append(np.asarray(state, dtype=np.float32))
    adj_rows.append(sample.adjacency.entries.astype(np.uint8))

    m = bundle.n_factors
    return EpisodeRecord(
        obs=np.stack(obs_rows),
        states=np.stack(state_rows),
        actions=np.stack(action_rows),
        adjacency=np.stack(adj_rows).reshape(len(adj_rows), n, m),
        counts=np.stack(count_rows).reshape(len(count_rows), n, m) if count_rows else np.zeros((0, n, m), dtype=np.uint8),
        old_probs=np.stack(prob_rows).reshape(len(prob_rows), n, m) if prob_rows else np.zeros((0, n, m)),
        rewards=np.asarray(rewards, dtype=np.float64),
        dones=np.asarray(dones, dtype=bool),
    )


def ensure_targets(bundle: ModelBundle, record: EpisodeRecord, mpconfig: MaxPlusConfig) -> None:
    """Fill the record's bootstrap cache under the current target parameters.

    cached_q_next[t] is the exactly scored max-plus value of the target tables
    at step t+1; cached_v_next[t] the target baseline sum there. Terminal
    steps keep zeros (never read). Reward scaling never enters, so the cache
    stays valid until the next target sync.
    """
    if record.cache_version == bundle.target_version:
        return
    t_len = record.length
    q_next = np.zeros(t_len)
    v_next = np.zeros(t_len)
    needed = [t for t in range(t_len) if not record.dones[t]]
    if needed:
        hidden, _ = bundle.encoder_target.encode_batch(
            record.obs[None].astype(np.float64), record.actions[None])
        for t in needed:
            adj = record.adjacency[t + 1]
            sample_graph = bundle.sampled_graph(adj)
            full_graph = build_graph(augment_identity(Adjacency(adj.astype(np.int8))),
                                     bundle.dims.n_actions)
            h_row = hidden[0, t + 1]
            tables = bundle.qheads_target.local_tables(full_graph, h_row)
            q_next[t] = run_maxplus(full_graph, tables, mpconfig).value
            if sample_graph is not None:
                v_next[t] = bundle.vheads_target.v_tot(sample_graph, h_row)[0]
    record.cached_q_next = q_next
    record.cached_v_next = v_next
    record.cache_version = bundle.target_version


def _padded_batch(records: list[EpisodeRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack obs/actions with zero padding; returns (obs, actions, mask)."""
    b = len(records)
    t_max = max(r.length for r in records)
    n = records[0].obs.shape[1]
    od = records[0].obs.shape[2]
    obs = np.zeros((b, t_max + 1, n, od))
    actions = np.zeros((b, t_max, n), dtype=np.int64)
    mask = np.zeros((b, t_max), dtype=bool)
    for i, rec in enumerate(records):
        t = rec.length
        obs[i, : t + 1] = rec.obs
        actions[i, :t] = rec.actions
        mask[i, :t] = True
    return obs, actions, mask


def _factor_groups(records: list[EpisodeRecord], n_agents: int,
                   include_identity: bool, with_actions: bool) -> list[FactorGroup]:
    """Group factor instances over the (episode, step) grid by order."""
    by_order: dict[int, list[tuple]] = {}
    for b, rec in enumerate(records):
        for t in range(rec.length):
            adj = rec.adjacency[t]
            for j in range(adj.shape[1]):
                members = np.flatnonzero(adj[:, j])
                by_order.setdefault(len(members), []).append((b, t, members))
            if include_identity:
                for i in range(n_agents):
                    by_order.setdefault(1, []).append((b, t, np.array([i])))
    groups = []
    for order in sorted(by_order):
        rows = by_order[order]
        b_idx = np.array([r[0] for r in rows], dtype=np.int64)
        t_idx = np.array([r[1] for r in rows], dtype=np.int64)
        members = np.stack([r[2] for r in rows]).astype(np.int64)
        acts = None
        if with_actions:
            acts = np.stack([records[b].actions[t][mem] for b, t, mem in rows]).astype(np.int64)
        groups.append(FactorGroup(order, b_idx, t_idx, members, acts))
    return groups


def _scatter_totals(groups: list[FactorGroup], values: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    totals = np.zeros(shape)
    offset = 0
    for g in groups:
        np.add.at(totals, (g.b_idx, g.t_idx), values[offset : offset + g.size])
        offset += g.size
    return totals


def _spread_totals(groups: list[FactorGroup], dtotals: np.ndarray) -> np.ndarray:
    parts = [dtotals[g.b_idx, g.t_idx] for g in groups]
    return np.concatenate(parts) if parts else np.zeros(0)


def _episode_weights(records: list[EpisodeRecord], mask: np.ndarray) -> np.ndarray:
    """Per-cell weights for mean-over-time then mean-over-episodes."""
    w = np.zeros(mask.shape)
    for i, rec in enumerate(records):
        w[i, : rec.length] = 1.0 / (rec.length * len(records))
    return w


def td_loss(bundle: ModelBundle, records: list[EpisodeRecord], gamma: float,
            scale: float, mpconfig: MaxPlusConfig) -> tuple[float, ParamVector]:
    """Squared TD error of Q_tot against bootstrapped targets; exact grads."""
    if not records:
        raise ValueError("empty batch")
    for rec in records:
        ensure_targets(bundle, rec, mpconfig)
    obs, actions, mask = _padded_batch(records)
    b, t_max = mask.shape

    y = np.zeros((b, t_max))
    for i, rec in enumerate(records):
        t = rec.length
        live = ~rec.dones
        y[i, :t] = rec.rewards / scale + gamma * rec.cached_q_next * live

    hidden, enc_caches = bundle.encoder.encode_batch(obs, actions)
    groups = _factor_groups(records, bundle.dims.n_agents, include_identity=True, with_actions=True)
    values, head_caches = bundle.qheads.evaluate_batch(hidden, groups)
    q_tot = _scatter_totals(groups, values, (b, t_max))

    w = _episode_weights(records, mask)
    err = (q_tot - y) * mask
    loss = float(np.sum(w * err * err))

    grads = bundle.pv_q.new_zeros()
    dq_tot = 2.0 * w * err
    dvalues = _spread_totals(groups, dq_tot)
    dhidden = np.zeros_like(hidden)
    bundle.qheads.evaluate_batch_backward(dvalues, head_caches, grads, dhidden)
    bundle.encoder.encode_batch_backward(dhidden, enc_caches, grads)
    return loss, grads


def v_td_loss(bundle: ModelBundle, records: list[EpisodeRecord], gamma: float,
              scale: float, mpconfig: MaxPlusConfig) -> tuple[float, ParamVector]:
    """Mirror TD loss for the action-independent baseline sum.

    Hidden states are constants here: only the baseline heads receive grads.
    """
    if not records:
        raise ValueError("empty batch")
    for rec in records:
        ensure_targets(bundle, rec, mpconfig)
    obs, actions, mask = _padded_batch(records)
    b, t_max = mask.shape

    y = np.zeros((b, t_max))
    for i, rec in enumerate(records):
        t = rec.length
        live = ~rec.dones
        y[i, :t] = rec.rewards / scale + gamma * rec.cached_v_next * live

    hidden, _ = bundle.encoder.encode_batch(obs, actions)
    groups = _factor_groups(records, bundle.dims.n_agents, include_identity=False, with_actions=False)
    values, head_caches = bundle.vheads.evaluate_batch(hidden, groups)
    v_tot = _scatter_totals(groups, values, (b, t_max))

    w = _episode_weights(records, mask)
    err = (v_tot - y) * mask
    loss = float(np.sum(w * err * err))

    grads = bundle.pv_v.new_zeros()
    dvalues = _spread_totals(groups, 2.0 * w * err)
    dhidden = np.zeros_like(hidden)
    bundle.vheads.evaluate_batch_backward(dvalues, head_caches, grads, dhidden)
    return loss, grads


def gae_advantages(q_values: np.ndarray, v_values: np.ndarray, gamma: float,
                   lam: float) -> np.ndarray:
    """Per-column discounted sums of residuals: A_t = sum_l (gamma*lam)^l d_{t+l}."""
    q_values = np.asarray(q_values, dtype=np.float64)
    v_values = np.asarray(v_values, dtype=np.float64)
    if q_values.shape != v_values.shape:
        raise ValueError("Q and V sequences must align")
    deltas = q_values - v_values
    adv = np.zeros_like(deltas)
    carry = np.zeros(deltas.shape[1:])
    for t in range(deltas.shape[0] - 1, -1, -1):
        carry = deltas[t] + gamma * lam * carry
        adv[t] = carry
    return adv


def clipped_pg_loss(new_probs: np.ndarray, old_probs: np.ndarray, counts: np.ndarray,
                    advantages: np.ndarray, clip_epsilon: float) -> tuple[float, np.ndarray]:
    """One episode's clipped surrogate: -(1/T) sum_t sum_j min(rA, clip(r)A).

    Returns the loss and its exact gradient in the new probabilities. The
    gradient flows only where the unclipped branch attains the min.
    """
    t_len, n, m = new_probs.shape
    if advantages.shape != (t_len, m):
        raise ValueError("advantages must be per (step, factor)")
    loss = 0.0
    dprobs = np.zeros_like(new_probs)
    lo, hi = 1.0 - clip_epsilon, 1.0 + clip_epsilon
    for t in range(t_len):
        for j in range(m):
            ratio, dratio = importance_ratio_grad(new_probs[t, :, j], old_probs[t, :, j],
                                                  counts[t, :, j])
            adv = advantages[t, j]
            unclipped = ratio * adv
            clipped = min(max(ratio, lo), hi) * adv
            loss -= min(unclipped, clipped) / t_len
            # The clipped branch is flat in the ratio, so grads flow only
            # when the unclipped branch attains the min.
            if unclipped <= clipped:
                dprobs[t, :, j] -= adv * dratio / t_len
    return loss, dprobs


def factor_slot_values(bundle: ModelBundle, record: EpisodeRecord,
                       hidden: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per (step, sampled column) Q and V values under the online networks.

    hidden is this episode's (T+1, n, H) encoding; values are constants for
    the graph update (no gradient flows into the value networks from L_G).
    """
    t_len, m = record.length, bundle.n_factors
    q_slots = np.zeros((t_len, m))
    v_slots = np.zeros((t_len, m))
    for t in range(t_len):
        graph = bundle.sampled_graph(record.adjacency[t])
        if graph is None:
            continue
        h_row = hidden[t]
        for j, members in enumerate(graph.members):
            table = bundle.qheads.local_q(j, graph, h_row)
            q_slots[t, j] = table.value(record.actions[t][list(members)])
        v_slots[t] = bundle.vheads.factor_values(graph, h_row)
    return q_slots, v_slots


def graph_policy_loss(bundle: ModelBundle, records: list[EpisodeRecord], gamma: float,
                      lam: float, clip_epsilon: float, entropy_weight: float,
                      pg_objective: str = "per_factor") -> tuple[float, ParamVector, dict]:
    """Full structure-policy objective: clipped surrogate minus entropy bonus.

    Minimizing this pushes probability toward high-advantage structures while
    the entropy term (weighted by entropy_weight) resists collapse. Returns
    (loss, grads over the hypernetwork, metrics dict).
    """
    if bundle.policy is None:
        raise ValueError("graph policy loss needs a learned structure policy")
    if not records:
        raise ValueError("empty batch")
    if pg_objective not in ("per_factor", "total"):
        raise ValueError(f"unknown pg objective {pg_objective!r}")

    grads = bundle.pv_g.new_zeros()
    total_loss = 0.0
    pg_part = 0.0
    entropy_part = 0.0
    n_records = len(records)

    for rec in records:
        t_len = rec.length
        hidden, _ = bundle.encoder.encode_batch(rec.obs[None].astype(np.float64),
                                                rec.actions[None])
        hidden = hidden[0]  # (T+1, n, H), detached
        probs, cache = bundle.policy.edge_probabilities_batch(
            hidden[:t_len], rec.states[:t_len].astype(np.float64))

        q_slots, v_slots = factor_slot_values(bundle, rec, hidden)
        adv = gae_advantages(q_slots, v_slots, gamma, lam)

        if pg_objective == "per_factor":
            pg_loss, dprobs = clipped_pg_loss(probs, rec.old_probs, rec.counts, adv,
                                              clip_epsilon)
        else:
            pg_loss, dprobs = _total_objective(probs, rec.old_probs, rec.counts, adv,
                                               clip_epsilon)

        ent_terms = np.array([policy_entropy(probs[t]) for t in range(t_len)])
        entropy_mean = float(ent_terms.mean()) if t_len else 0.0
        dprobs_ent = np.stack([policy_entropy_grad(probs[t]) for t in range(t_len)])

        # L = L_PG - w_H * mean_t H_t, averaged over episodes.
        dprobs_total = (dprobs - entropy_weight * dprobs_ent / max(t_len, 1)) / n_records
        bundle.policy.backward(dprobs_total, cache, grads)

        pg_part += pg_loss / n_records
        entropy_part += entropy_mean / n_records
        total_loss += (pg_loss - entropy_weight * entropy_mean) / n_records

    info = {"pg_loss": pg_part, "entropy": entropy_part}
    return total_loss, grads, info


def _total_objective(new_probs: np.ndarray, old_probs: np.ndarray, counts: np.ndarray,
                     advantages: np.ndarray, clip_epsilon: float) -> tuple[float, np.ndarray]:
    """Global-ratio variant: one clipped term per step on the product ratio."""
    t_len, n, m = new_probs.shape
    loss = 0.0
    dprobs = np.zeros_like(new_probs)
    lo, hi = 1.0 - clip_epsilon, 1.0 + clip_epsilon
    for t in range(t_len):
        ratios = np.zeros(m)
        grads_r = np.zeros((n, m))
        for j in range(m):
            ratios[j], grads_r[:, j] = importance_ratio_grad(
                new_probs[t, :, j], old_probs[t, :, j], counts[t, :, j])
        product = float(np.prod(ratios)) if m else 1.0
        adv = float(advantages[t].sum())
        unclipped = product * adv
        clipped = min(max(product, lo), hi) * adv
        loss -= min(unclipped, clipped) / t_len
        if unclipped <= clipped:
            for j in range(m):
                others = np.prod(np.delete(ratios, j)) if m > 1 else 1.0
                dprobs[t, :, j] -= adv * others * grads_r[:, j] / t_len
    return loss, dprobs
