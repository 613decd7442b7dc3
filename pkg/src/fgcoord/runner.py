"""Training orchestration: the episode/update/eval loop, checkpoint state,
greedy evaluation, random baselines, and the selftest suite.

Every counter that gates a random draw or an emission lives in the
checkpoint, so a resumed run replays the exact step sequence of an
uninterrupted one.
"""

from __future__ import annotations

import math
import os
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, parse_config_text
from .envs import MatrixGame, oracle_optimal
from .learner import (
    TAG_ENV,
    TAG_EVAL,
    TAG_EXPLORE,
    TAG_GRAPH,
    TAG_UPDATE,
    EpisodeBuffer,
    EpisodeRecord,
    ModelBundle,
    RunningStd,
    collect_episode,
    graph_policy_loss,
    stream,
    td_loss,
    v_td_loss,
)
from .metrics import MetricsWriter
from .nn import Adam

OUTPUT_ROOT_ENV = "FGCOORD_OUTPUT_ROOT"


def resolve_output_dir(config: RunConfig, override: str | None = None) -> Path:
    raw = Path(override if override is not None else config.run.output_dir)
    if raw.is_absolute():
        return raw
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return (Path(root) / raw) if root else raw


class _Window:
    """Per-metrics-row accumulators; serialized for mid-window resume."""

    FIELDS = ("ret_sum", "ret_count", "td_sum", "td_count",
              "pg_sum", "pg_count", "ent_sum", "ent_count")

    def __init__(self):
        self.reset()

    def reset(self) -> None:
        for name in self.FIELDS:
            setattr(self, name, 0 if name.endswith("count") else 0.0)

    def mean(self, kind: str) -> float:
        count = getattr(self, f"{kind}_count")
        return getattr(self, f"{kind}_sum") / count if count else math.nan

    def state(self) -> dict:
        return {name: getattr(self, name) for name in self.FIELDS}

    def load_state(self, state: dict) -> None:
        for name in self.FIELDS:
            setattr(self, name, state[name])


class Trainer:
    def __init__(self, config: RunConfig, output_dir: Path):
        self.config = config
        self.output_dir = Path(output_dir)
        self.env = config.make_env()
        self.dims = config.make_dims(self.env)
        self.schedules = config.schedules()
        self.mpconfig = config.maxplus_config()
        self.seed = config.run.seed
        self.bundle = ModelBundle(self.dims, config.model.graph_mode, self.seed)
        t = config.training
        self.adam_q = Adam(self.bundle.pv_q.size, t.lr_q)
        self.adam_v = Adam(self.bundle.pv_v.size, t.lr_v)
        self.adam_g = Adam(self.bundle.pv_g.size, t.lr_graph)
        self.replay = EpisodeBuffer(t.buffer_capacity)
        self.graph_buffer = EpisodeBuffer(t.graph_buffer_capacity)
        self.reward_stats = RunningStd()
        self.window = _Window()
        self.total_steps = 0
        self.total_episodes = 0
        self.q_updates = 0
        self.graph_updates = 0
        self.eval_cycles = 0
        self.checkpoints_written = 0
        self.resumed = False

    # -- persistence ------------------------------------------------------

    def state_dict(self) -> tuple[dict, dict[str, np.ndarray]]:
        meta = {
            "config": self.config.canonical_text(),
            "counters": {
                "total_steps": self.total_steps,
                "total_episodes": self.total_episodes,
                "q_updates": self.q_updates,
                "graph_updates": self.graph_updates,
                "eval_cycles": self.eval_cycles,
                "checkpoints_written": self.checkpoints_written,
                "target_version": self.bundle.target_version,
            },
            "adam_steps": {"q": self.adam_q.step_count, "v": self.adam_v.step_count,
                           "g": self.adam_g.step_count},
            "reward_stats": list(self.reward_stats.state()),
            "window": self.window.state(),
            "replay_len": len(self.replay),
            "graph_len": len(self.graph_buffer),
        }
        arrays: dict[str, np.ndarray] = {
            "params.q": self.bundle.pv_q.to_flat(),
            "params.v": self.bundle.pv_v.to_flat(),
            "params.g": self.bundle.pv_g.to_flat(),
            "params.q_target": self.bundle.pv_q_target.to_flat(),
            "params.v_target": self.bundle.pv_v_target.to_flat(),
            "adam.q.m": self.adam_q.m, "adam.q.v": self.adam_q.v,
            "adam.v.m": self.adam_v.m, "adam.v.v": self.adam_v.v,
            "adam.g.m": self.adam_g.m, "adam.g.v": self.adam_g.v,
        }
        for prefix, buffer in (("replay", self.replay), ("graph", self.graph_buffer)):
            for i, rec in enumerate(buffer.items):
                _episode_to_arrays(f"{prefix}.{i}", rec, arrays)
        return meta, arrays

    def save(self, name: str) -> Path:
        meta, arrays = self.state_dict()
        path = self.output_dir / name
        save_checkpoint(path, meta, arrays)
        return path

    def load_state(self, meta: dict, arrays: dict[str, np.ndarray]) -> None:
        if meta["config"] != self.config.canonical_text():
            raise ConfigError("checkpoint was produced by a different configuration")
        self.bundle.pv_q.load_flat(arrays["params.q"])
        self.bundle.pv_v.load_flat(arrays["params.v"])
        self.bundle.pv_g.load_flat(arrays["params.g"])
        self.bundle.pv_q_target.load_flat(arrays["params.q_target"])
        self.bundle.pv_v_target.load_flat(arrays["params.v_target"])
        for adam, key in ((self.adam_q, "q"), (self.adam_v, "v"), (self.adam_g, "g")):
            adam.m = arrays[f"adam.{key}.m"].copy()
            adam.v = arrays[f"adam.{key}.v"].copy()
            adam.step_count = int(meta["adam_steps"][key])
        counters = meta["counters"]
        self.total_steps = int(counters["total_steps"])
        self.total_episodes = int(counters["total_episodes"])
        self.q_updates = int(counters["q_updates"])
        self.graph_updates = int(counters["graph_updates"])
        self.eval_cycles = int(counters["eval_cycles"])
        self.checkpoints_written = int(counters["checkpoints_written"])
        self.bundle.target_version = int(counters["target_version"])
        self.reward_stats.load_state(meta["reward_stats"])
        self.window.load_state(meta["window"])
        self.replay.items = [_episode_from_arrays(f"replay.{i}", arrays)
                             for i in range(int(meta["replay_len"]))]
        self.graph_buffer.items = [_episode_from_arrays(f"graph.{i}", arrays)
                                   for i in range(int(meta["graph_len"]))]
        self.resumed = True

    # -- training loop ----------------------------------------------------

    def train(self) -> None:
        cfg = self.config
        self.output_dir.mkdir(parents=True, exist_ok=True)
        episodes_at_start = self.total_episodes
        with MetricsWriter(self.output_dir / "metrics.csv") as metrics:
            if not self.resumed:
                self.save("checkpoint_initial.ckpt")
            while self.total_steps < cfg.run.total_steps:
                epsilon = self.schedules.epsilon(self.total_steps)
                record = collect_episode(
                    self.bundle, self.env, self.mpconfig, cfg.model.d_max,
                    stream(self.seed, TAG_ENV, self.total_episodes),
                    stream(self.seed, TAG_EXPLORE, self.total_episodes),
                    stream(self.seed, TAG_GRAPH, self.total_episodes),
                    epsilon)
                self.total_episodes += 1
                self.total_steps += record.length
                self.replay.add(record)
                if self.bundle.graph_mode == "learned":
                    self.graph_buffer.add(record)
                self.reward_stats.update(record.episode_return)
                self.window.ret_sum += record.episode_return
                self.window.ret_count += 1

                due = self.total_episodes % cfg.training.update_interval_episodes == 0
                ready = len(self.replay) >= max(cfg.training.batch_size,
                                                self.config.min_buffer_episodes)
                if due and ready:
                    self._update_cycle()

                while self.total_steps >= (self.eval_cycles + 1) * cfg.run.eval_interval:
                    self.eval_cycles += 1
                    self._emit_row(metrics)
                if cfg.run.checkpoint_interval > 0 and self.total_steps >= (
                        self.checkpoints_written + 1) * cfg.run.checkpoint_interval:
                    self.checkpoints_written = self.total_steps // cfg.run.checkpoint_interval
                    self.save(f"checkpoint_step{self.total_steps}.ckpt")
            if self.total_episodes > episodes_at_start:
                self.save("checkpoint_final.ckpt")

    def _update_cycle(self) -> None:
        cfg = self.config.training
        rng = stream(self.seed, TAG_UPDATE, self.q_updates)
        batch = self.replay.sample(rng, cfg.batch_size)
        scale = self.reward_stats.scale() if cfg.reward_normalization else 1.0
        gamma = self.schedules.gamma

        loss_q, grads_q = td_loss(self.bundle, batch, gamma, scale, self.mpconfig)
        self.adam_q.update(self.bundle.pv_q, grads_q)
        loss_v, grads_v = v_td_loss(self.bundle, batch, gamma, scale, self.mpconfig)
        self.adam_v.update(self.bundle.pv_v, grads_v)
        self.q_updates += 1
        self.window.td_sum += loss_q
        self.window.td_count += 1

        if self.q_updates % self.schedules.target_sync_interval == 0:
            self.bundle.sync_targets()

        graph_due = (self.bundle.graph_mode == "learned"
                     and self.q_updates % cfg.graph_update_ratio == 0
                     and len(self.graph_buffer) > 0)
        if graph_due:
            _, grads_g, info = graph_policy_loss(
                self.bundle, list(self.graph_buffer.items), gamma,
                self.schedules.gae_lambda, self.schedules.clip_epsilon,
                self.schedules.entropy_weight, cfg.pg_objective)
            self.adam_g.update(self.bundle.pv_g, grads_g)
            self.graph_updates += 1
            self.window.pg_sum += info["pg_loss"]
            self.window.pg_count += 1
            self.window.ent_sum += info["entropy"]
            self.window.ent_count += 1

    def _emit_row(self, metrics: MetricsWriter) -> None:
        step = self.eval_cycles * self.config.run.eval_interval
        returns = self.evaluate(self.eval_cycles, self.config.run.eval_episodes)
        metrics.write_row(
            step,
            episode_return_mean=self.window.mean("ret"),
            eval_return_median=float(np.median(returns)) if returns else math.nan,
            td_loss=self.window.mean("td"),
            pg_loss=self.window.mean("pg"),
            entropy=self.window.mean("ent"),
            epsilon=self.schedules.epsilon(step),
        )
        metrics.flush()
        self.window.reset()

    def evaluate(self, cycle: int, episodes: int) -> list[float]:
        """Greedy rollouts: no exploration, per-column mode structures."""
        returns = []
        for i in range(episodes):
            rng = stream(self.seed, TAG_EVAL, cycle, i)
            record = collect_episode(self.bundle, self.env, self.mpconfig,
                                     self.config.model.d_max, rng, rng, rng,
                                     epsilon=0.0, greedy=True)
            returns.append(record.episode_return)
        return returns

    def greedy_joint_action(self) -> np.ndarray:
        """First-step greedy joint action (diagnostic for one-step games)."""
        rng = stream(self.seed, TAG_EVAL, 0, 0)
        record = collect_episode(self.bundle, self.env, self.mpconfig,
                                 self.config.model.d_max, rng, rng, rng,
                                 epsilon=0.0, greedy=True)
        return record.actions[0]


def _episode_to_arrays(prefix: str, rec: EpisodeRecord, arrays: dict) -> None:
    arrays[f"{prefix}.obs"] = rec.obs
    arrays[f"{prefix}.states"] = rec.states
    arrays[f"{prefix}.actions"] = rec.actions
    arrays[f"{prefix}.adjacency"] = rec.adjacency
    arrays[f"{prefix}.counts"] = rec.counts
    arrays[f"{prefix}.old_probs"] = rec.old_probs
    arrays[f"{prefix}.rewards"] = rec.rewards
    arrays[f"{prefix}.dones"] = rec.dones


def _episode_from_arrays(prefix: str, arrays: dict) -> EpisodeRecord:
    return EpisodeRecord(
        obs=arrays[f"{prefix}.obs"],
        states=arrays[f"{prefix}.states"],
        actions=arrays[f"{prefix}.actions"],
        adjacency=arrays[f"{prefix}.adjacency"],
        counts=arrays[f"{prefix}.counts"],
        old_probs=arrays[f"{prefix}.old_probs"],
        rewards=arrays[f"{prefix}.rewards"],
        dones=arrays[f"{prefix}.dones"],
    )


def train_run(config: RunConfig, output_override: str | None = None,
              resume_path: str | None = None) -> Path:
    output_dir = resolve_output_dir(config, output_override)
    trainer = Trainer(config, output_dir)
    if resume_path is not None:
        meta, arrays = load_checkpoint(resume_path)
        trainer.load_state(meta, arrays)
    output_dir.mkdir(parents=True, exist_ok=True)
    trainer.train()
    return output_dir


def evaluate_checkpoint(path, episodes: int, dump_path=None,
                        seed: int | None = None) -> dict:
    """Greedy evaluation of a stored model; returns the summary dict."""
    meta, arrays = load_checkpoint(path)
    config = parse_config_text(meta["config"])
    trainer = Trainer(config, resolve_output_dir(config))
    trainer.load_state(meta, arrays)
    eval_seed = config.run.seed if seed is None else seed
    returns = []
    dump_lines = []
    for i in range(episodes):
        rng = stream(eval_seed, TAG_EVAL, i)
        record = collect_episode(trainer.bundle, trainer.env, trainer.mpconfig,
                                 config.model.d_max, rng, rng, rng,
                                 epsilon=0.0, greedy=True)
        returns.append(record.episode_return)
        if dump_path is not None:
            for t in range(record.length):
                cols = ";".join(
                    "".join(str(int(x)) for x in record.adjacency[t][:, j])
                    for j in range(record.adjacency.shape[2]))
                dump_lines.append(f"episode={i} step={t} adjacency={cols}")
    if dump_path is not None:
        with open(dump_path, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(dump_lines) + ("\n" if dump_lines else ""))
    summary = {"episodes": episodes, "returns": returns}
    if returns:
        summary["mean"] = float(np.mean(returns))
        summary["median"] = float(np.median(returns))
    return summary


def random_baseline(config: RunConfig, episodes: int, seed: int | None = None) -> list[float]:
    """Uniform-random-policy returns, the brute-force behavioral baseline."""
    env = config.make_env()
    n = config.env.n_agents
    n_actions = config.n_env_actions(env)
    use_seed = config.run.seed if seed is None else seed
    returns = []
    for i in range(episodes):
        rng_env = stream(use_seed, TAG_ENV, i)
        rng_act = stream(use_seed, TAG_EXPLORE, i)
        env.reset(rng_env)
        total, done = 0.0, False
        while not done:
            actions = rng_act.integers(n_actions, size=n)
            _, reward, done = env.step(actions)
            total += reward
        returns.append(total)
    return returns


def oracle_summary(config: RunConfig, episodes: int) -> dict:
    env = config.make_env()
    if isinstance(env, MatrixGame):
        action, value = oracle_optimal(env)
        return {"kind": "exhaustive", "action": [int(a) for a in action], "value": value}
    returns = random_baseline(config, episodes)
    return {"kind": "random-baseline", "episodes": episodes,
            "mean": float(np.mean(returns)), "median": float(np.median(returns))}


def selftest() -> list[tuple[str, bool]]:
    """Compact invariant suite for the CLI; returns (name, passed) pairs."""
    from .cptensor import CpTensor, cp_evaluate, cp_materialize
    from .graphs import Adjacency, build_graph
    from .maxplus import brute_force_argmax, run_maxplus
    from .nn import Dense, ParamVector, finite_diff_check
    from .oracles import enumerate_pmf_support, partition_by_support
    from .structure import subpolicy_pmf

    results = []
    rng = np.random.default_rng(7)

    ok = True
    for _ in range(20):
        n = int(rng.integers(2, 6))
        cols = [np.eye(n, dtype=np.int8)[:, [i]] for i in range(n)]
        for i in range(1, n):  # random spanning tree -> acyclic pairwise graph
            j = int(rng.integers(i))
            col = np.zeros((n, 1), dtype=np.int8)
            col[i] = col[j] = 1
            cols.append(col)
        graph = build_graph(Adjacency(np.concatenate(cols, axis=1)), 3)
        tables = [rng.standard_normal((3,) * order) for order in graph.factor_orders]
        res = run_maxplus(graph, tables)
        _, best = brute_force_argmax(graph, tables)
        ok = ok and abs(res.value - best) <= 1e-9
    results.append(("maxplus exact on trees", ok))

    ok = True
    for _ in range(10):
        n, d = int(rng.integers(2, 5)), int(rng.integers(1, 4))
        p = rng.dirichlet(np.ones(n))
        cells = partition_by_support(enumerate_pmf_support(p, d))
        total = sum(subpolicy_pmf(p, g, d) for g in cells)
        ok = ok and abs(total - 1.0) <= 1e-9
    results.append(("structure distribution normalizes", ok))

    ok = True
    for _ in range(50):
        cp = CpTensor(rng.standard_normal((int(rng.integers(1, 4)), 2, 3)))
        action = rng.integers(3, size=cp.modes)
        dense = cp_materialize(cp)
        ok = ok and abs(cp_evaluate(cp, action) - dense.lookup(action)) <= 1e-9
    results.append(("cp evaluation matches dense tables", ok))

    pv = ParamVector()
    layer = Dense(pv, "probe", 4, 3, "tanh", rng)
    x = rng.standard_normal((5, 4))

    def loss_fn() -> float:
        out, _ = layer.forward(x)
        return float((out**2).sum())

    out, cache = layer.forward(x)
    grads = pv.new_zeros()
    layer.backward(2.0 * out, cache, grads)
    err = finite_diff_check(loss_fn, pv, grads, rng, samples=15)
    results.append(("gradients match finite differences", err <= 1e-4))
    return results
