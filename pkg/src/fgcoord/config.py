"""Run configuration: strict INI parsing with typed, validated keys.

Every key has a declared type and default; unknown sections or keys are
rejected by name. canonical_text() serializes the fully resolved config
(minus output placement) so checkpoints can embed and later verify it.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from typing import Any

from .envs import GridWorld, GridWorldConfig, MatrixGame, climb_game
from .learner import GRAPH_MODES, ModelDims, Schedules
from .maxplus import MaxPlusConfig


class ConfigError(Exception):
    """Invalid configuration; the message names the offending key."""


@dataclass
class RunSection:
    seed: int = 0
    output_dir: str = "run"
    total_steps: int = 100_000
    eval_interval: int = 2_000
    eval_episodes: int = 10
    checkpoint_interval: int = 0


@dataclass
class EnvSection:
    kind: str = "gridworld"
    width: int = 10
    height: int = 10
    n_agents: int = 9
    n_prey: int = 6
    capture_threshold: int = 3
    capture_reward: float = 10.0
    failed_capture_penalty: float = -1.0
    step_reward: float = 0.0
    time_limit: int = 200
    n_actions: int = 6
    success_reward: float = 10.0
    partial_penalty: float = -1.5
    scaled_penalty: bool = True


@dataclass
class ModelSection:
    n_factors: int = -1  # -1 resolves to the agent count
    d_max: int = 3
    hidden_dim: int = 64
    mlp_hidden: int = 64
    hyper_hidden: int = 64
    graph_mode: str = "learned"


@dataclass
class MaxPlusSection:
    iterations: int = 30
    damping: float = 0.5
    tolerance: float = 1e-6


@dataclass
class TrainingSection:
    gamma: float = 0.98
    batch_size: int = 32
    buffer_capacity: int = 5_000
    graph_buffer_capacity: int = 8
    lr_q: float = 1e-3
    lr_v: float = 1e-3
    lr_graph: float = 1e-5
    entropy_weight: float = 0.01
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 50_000
    target_sync_interval: int = 200
    update_interval_episodes: int = 2
    graph_update_ratio: int = 8
    min_buffer_episodes: int = -1  # -1 resolves to batch_size
    pg_objective: str = "per_factor"
    reward_normalization: bool = True


_SECTIONS = {
    "run": RunSection,
    "env": EnvSection,
    "model": ModelSection,
    "maxplus": MaxPlusSection,
    "training": TrainingSection,
}

_CHOICES = {
    ("env", "kind"): ("gridworld", "climb"),
    ("model", "graph_mode"): GRAPH_MODES,
    ("training", "pg_objective"): ("per_factor", "total"),
}


@dataclass
class RunConfig:
    run: RunSection
    env: EnvSection
    model: ModelSection
    maxplus: MaxPlusSection
    training: TrainingSection

    def make_env(self):
        e = self.env
        if e.kind == "gridworld":
            return GridWorld(GridWorldConfig(
                width=e.width, height=e.height, n_agents=e.n_agents, n_prey=e.n_prey,
                capture_threshold=e.capture_threshold, capture_reward=e.capture_reward,
                failed_capture_penalty=e.failed_capture_penalty,
                step_reward=e.step_reward, time_limit=e.time_limit))
        if e.kind == "climb":
            return climb_game(n_agents=e.n_agents, n_actions=e.n_actions,
                              success_reward=e.success_reward,
                              partial_penalty=e.partial_penalty, scaled=e.scaled_penalty)
        raise ConfigError(f"env.kind: unknown environment {e.kind!r}")

    def n_env_actions(self, env) -> int:
        return env.n_actions if isinstance(env, MatrixGame) else GridWorld.n_actions

    def make_dims(self, env) -> ModelDims:
        m = self.model
        n_factors = m.n_factors if m.n_factors >= 0 else self.env.n_agents
        return ModelDims(
            n_agents=self.env.n_agents,
            n_actions=self.n_env_actions(env),
            obs_dim=env.obs_dim,
            state_dim=env.state_dim,
            n_factors=n_factors,
            d_max=m.d_max,
            hidden_dim=m.hidden_dim,
            mlp_hidden=m.mlp_hidden,
            hyper_hidden=m.hyper_hidden,
        )

    def schedules(self) -> Schedules:
        t = self.training
        return Schedules(
            gamma=t.gamma, epsilon_start=t.epsilon_start, epsilon_end=t.epsilon_end,
            epsilon_decay_steps=t.epsilon_decay_steps,
            target_sync_interval=t.target_sync_interval,
            lr_q=t.lr_q, lr_v=t.lr_v, lr_graph=t.lr_graph,
            entropy_weight=t.entropy_weight, gae_lambda=t.gae_lambda,
            clip_epsilon=t.clip_epsilon)

    def maxplus_config(self) -> MaxPlusConfig:
        mp = self.maxplus
        return MaxPlusConfig(max_iterations=mp.iterations, damping=mp.damping,
                             tolerance=mp.tolerance)

    @property
    def min_buffer_episodes(self) -> int:
        t = self.training
        return t.min_buffer_episodes if t.min_buffer_episodes >= 0 else t.batch_size

    def canonical_text(self) -> str:
        """Resolved key = value dump, excluding run placement (output_dir)."""
        lines = []
        for section_name, section_cls in _SECTIONS.items():
            lines.append(f"[{section_name}]")
            section = getattr(self, section_name)
            for f in fields(section_cls):
                if (section_name, f.name) == ("run", "output_dir"):
                    continue
                value = getattr(section, f.name)
                if isinstance(value, bool):
                    value = "true" if value else "false"
                lines.append(f"{f.name} = {value}")
            lines.append("")
        return "\n".join(lines)


def _convert(section: str, key: str, raw: str, target_type: type) -> Any:
    raw = raw.strip()
    try:
        if target_type is bool:
            lowered = raw.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(
            f"{section}.{key}: cannot parse {raw!r} as {target_type.__name__}") from None


def parse_config_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    sections: dict[str, Any] = {}
    for section_name, section_cls in _SECTIONS.items():
        sections[section_name] = section_cls()
    for section_name in parser.sections():
        if section_name not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section_name}]")
        section = sections[section_name]
        types = {f.name: type(getattr(section, f.name)) for f in fields(type(section))}
        for key, raw in parser.items(section_name):
            if key not in types:
                raise ConfigError(f"{section_name}.{key}: unknown key")
            value = _convert(section_name, key, raw, types[key])
            choices = _CHOICES.get((section_name, key))
            if choices and value not in choices:
                raise ConfigError(
                    f"{section_name}.{key}: {value!r} not one of {', '.join(choices)}")
            setattr(section, key, value)

    config = RunConfig(**sections)
    _validate(config)
    return config


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return parse_config_text(text)


def _validate(config: RunConfig) -> None:
    r, t, m = config.run, config.training, config.model
    checks = [
        (r.total_steps >= 0, "run.total_steps must be >= 0"),
        (r.eval_interval >= 1, "run.eval_interval must be >= 1"),
        (r.eval_episodes >= 0, "run.eval_episodes must be >= 0"),
        (r.checkpoint_interval >= 0, "run.checkpoint_interval must be >= 0"),
        (t.batch_size >= 1, "training.batch_size must be >= 1"),
        (t.buffer_capacity >= 1, "training.buffer_capacity must be >= 1"),
        (t.graph_buffer_capacity >= 1, "training.graph_buffer_capacity must be >= 1"),
        (t.update_interval_episodes >= 1, "training.update_interval_episodes must be >= 1"),
        (t.graph_update_ratio >= 1, "training.graph_update_ratio must be >= 1"),
        (0.0 <= t.clip_epsilon < 1.0, "training.clip_epsilon must be in [0, 1)"),
        (0.0 <= t.gae_lambda <= 1.0, "training.gae_lambda must be in [0, 1]"),
        (m.d_max >= 1, "model.d_max must be >= 1"),
        (m.hidden_dim >= 1, "model.hidden_dim must be >= 1"),
        (m.n_factors >= -1, "model.n_factors must be >= 0 (or -1 for agent count)"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)
    try:
        config.schedules()
        config.maxplus_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if m.graph_mode == "learned":
        n_factors = m.n_factors if m.n_factors >= 0 else config.env.n_agents
        if n_factors < 1:
            raise ConfigError("model.n_factors: learned graph mode needs at least 1 factor")
