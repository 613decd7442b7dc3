"""Environments: a grid-world pursuit task and one-step matrix games.

Both expose the same surface: reset(rng) -> per-agent observations, then
step(actions) -> (observations, shared reward, done), plus global_state()
for state-conditioned components. Rewards are shared by all agents.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

MAX_ORACLE_JOINT = 10**6

ACTION_NAMES = ("up", "down", "left", "right", "stay", "capture")
MOVE_DELTAS = {0: (-1, 0), 1: (1, 0), 2: (0, -1), 3: (0, 1), 4: (0, 0)}
CAPTURE = 5
OBS_WINDOW = 5
SENTINEL = -1.0


@dataclass
class GridWorldConfig:
    width: int = 10
    height: int = 10
    n_agents: int = 9
    n_prey: int = 6
    capture_threshold: int = 3
    capture_reward: float = 10.0
    failed_capture_penalty: float = -1.0
    step_reward: float = 0.0
    time_limit: int = 200

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        if self.n_agents < 1 or self.n_prey < 1:
            raise ValueError("need at least one agent and one prey")
        if self.n_agents + self.n_prey > self.width * self.height:
            raise ValueError("grid too small for the entity count")
        if self.capture_threshold < 1:
            raise ValueError("capture threshold must be >= 1")
        if self.time_limit < 1:
            raise ValueError("time limit must be >= 1")


@dataclass
class StepEvents:
    """Per-step accounting used by tests to rebuild the reward exactly."""

    captured_prey: list[int] = field(default_factory=list)
    failed_prey: list[int] = field(default_factory=list)


class GridWorld:
    """Pursuit grid: predators move or capture, prey drift away at random.

    A prey is removed when at least capture_threshold agents pick the capture
    action in its 8-cell surround; a surround with at least one but too few
    capturers costs the penalty once for that prey. Capture picks by agents
    not adjacent to any living prey are infeasible and become stay.
    """

    n_actions = len(ACTION_NAMES)

    def __init__(self, config: GridWorldConfig):
        self.config = config
        self.agent_pos = np.zeros((config.n_agents, 2), dtype=np.int64)
        self.prey_pos = np.zeros((config.n_prey, 2), dtype=np.int64)
        self.prey_alive = np.zeros(config.n_prey, dtype=bool)
        self.t = 0
        self.done = True
        self.last_events = StepEvents()
        self._rng: np.random.Generator | None = None

    @property
    def n_agents(self) -> int:
        return self.config.n_agents

    @property
    def obs_dim(self) -> int:
        return OBS_WINDOW * OBS_WINDOW * 2

    @property
    def state_dim(self) -> int:
        return 2 * self.config.n_agents + 3 * self.config.n_prey

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        cfg = self.config
        self._rng = rng
        cells = rng.choice(cfg.width * cfg.height, size=cfg.n_agents + cfg.n_prey, replace=False)
        rows, cols = np.divmod(cells, cfg.width)
        coords = np.stack([rows, cols], axis=1)
        self.agent_pos = coords[: cfg.n_agents]
        self.prey_pos = coords[cfg.n_agents :]
        self.prey_alive = np.ones(cfg.n_prey, dtype=bool)
        self.t = 0
        self.done = False
        self.last_events = StepEvents()
        return self.observations()

    def _occupied(self) -> set[tuple[int, int]]:
        cells = {tuple(p) for p in self.agent_pos}
        cells.update(tuple(p) for i, p in enumerate(self.prey_pos) if self.prey_alive[i])
        return cells

    def _in_grid(self, r: int, c: int) -> bool:
        return 0 <= r < self.config.height and 0 <= c < self.config.width

    def _adjacent8(self, pos) -> list[tuple[int, int]]:
        r, c = int(pos[0]), int(pos[1])
        out = []
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                if self._in_grid(r + dr, c + dc):
                    out.append((r + dr, c + dc))
        return out

    def step(self, actions) -> tuple[np.ndarray, float, bool]:
        if self.done:
            raise RuntimeError("step called on a finished episode")
        cfg = self.config
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (cfg.n_agents,):
            raise ValueError("need exactly one action per agent")
        if np.any(actions < 0) or np.any(actions >= self.n_actions):
            raise ValueError("action index out of range")
        assert self._rng is not None

        # Movement in ascending agent order; vacated cells free up immediately.
        occupied = self._occupied()
        for i in range(cfg.n_agents):
            a = int(actions[i])
            if a == CAPTURE:
                continue
            dr, dc = MOVE_DELTAS[a]
            src = (int(self.agent_pos[i, 0]), int(self.agent_pos[i, 1]))
            dst = (src[0] + dr, src[1] + dc)
            if dst == src:
                continue
            if not self._in_grid(*dst) or dst in occupied:
                continue  # infeasible move becomes stay
            occupied.discard(src)
            occupied.add(dst)
            self.agent_pos[i] = dst

        # Capture resolution against post-movement positions.
        reward = cfg.step_reward
        events = StepEvents()
        capturer_cells = {
            (int(self.agent_pos[i, 0]), int(self.agent_pos[i, 1]))
            for i in range(cfg.n_agents)
            if actions[i] == CAPTURE
        }
        for p in range(cfg.n_prey):
            if not self.prey_alive[p]:
                continue
            surround = self._adjacent8(self.prey_pos[p])
            n_capturing = sum(1 for cell in surround if cell in capturer_cells)
            if n_capturing >= cfg.capture_threshold:
                self.prey_alive[p] = False
                reward += cfg.capture_reward
                events.captured_prey.append(p)
            elif n_capturing >= 1:
                reward += cfg.failed_capture_penalty
                events.failed_prey.append(p)

        # Prey drift: uniform over free cardinal cells, stay if boxed in.
        occupied = self._occupied()
        for p in range(cfg.n_prey):
            if not self.prey_alive[p]:
                continue
            r, c = int(self.prey_pos[p, 0]), int(self.prey_pos[p, 1])
            options = []
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                cell = (r + dr, c + dc)
                if self._in_grid(*cell) and cell not in occupied:
                    options.append(cell)
            if options:
                dst = options[int(self._rng.integers(len(options)))]
                occupied.discard((r, c))
                occupied.add(dst)
                self.prey_pos[p] = dst

        self.t += 1
        self.last_events = events
        self.done = bool(not self.prey_alive.any() or self.t >= cfg.time_limit)
        return self.observations(), float(reward), self.done

    def observe(self, agent: int) -> np.ndarray:
        """5x5 window centered on the agent: agent channel then prey channel."""
        cfg = self.config
        if not 0 <= agent < cfg.n_agents:
            raise ValueError(f"no such agent {agent}")
        half = OBS_WINDOW // 2
        window = np.full((2, OBS_WINDOW, OBS_WINDOW), SENTINEL)
        r0, c0 = int(self.agent_pos[agent, 0]), int(self.agent_pos[agent, 1])
        for wr in range(OBS_WINDOW):
            for wc in range(OBS_WINDOW):
                r, c = r0 + wr - half, c0 + wc - half
                if self._in_grid(r, c):
                    window[:, wr, wc] = 0.0
        for i in range(cfg.n_agents):
            wr = int(self.agent_pos[i, 0]) - r0 + half
            wc = int(self.agent_pos[i, 1]) - c0 + half
            if 0 <= wr < OBS_WINDOW and 0 <= wc < OBS_WINDOW:
                window[0, wr, wc] = 1.0
        for p in range(cfg.n_prey):
            if not self.prey_alive[p]:
                continue
            wr = int(self.prey_pos[p, 0]) - r0 + half
            wc = int(self.prey_pos[p, 1]) - c0 + half
            if 0 <= wr < OBS_WINDOW and 0 <= wc < OBS_WINDOW:
                window[1, wr, wc] = 1.0
        return window.reshape(-1)

    def observations(self) -> np.ndarray:
        return np.stack([self.observe(i) for i in range(self.config.n_agents)])

    def global_state(self) -> np.ndarray:
        """Normalized entity coordinates plus prey-alive flags."""
        cfg = self.config
        scale = np.array([max(1, cfg.height - 1), max(1, cfg.width - 1)], dtype=np.float64)
        agents = (self.agent_pos / scale).reshape(-1)
        prey = np.where(self.prey_alive[:, None], self.prey_pos / scale, SENTINEL).reshape(-1)
        return np.concatenate([agents, prey, self.prey_alive.astype(np.float64)])


class MatrixGame:
    """One-step cooperative game on an explicit payoff table."""

    def __init__(self, payoff: np.ndarray):
        payoff = np.asarray(payoff, dtype=np.float64)
        if payoff.ndim < 1:
            raise ValueError("payoff table needs at least one agent axis")
        if len(set(payoff.shape)) != 1:
            raise ValueError("all agents must share one action count")
        if payoff.shape[0] < 2:
            raise ValueError("need at least two actions")
        self.payoff = payoff
        self.n_agents = payoff.ndim
        self.n_actions = payoff.shape[0]
        self.done = True

    @property
    def obs_dim(self) -> int:
        return self.n_agents

    @property
    def state_dim(self) -> int:
        return 1

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.done = False
        return self.observations()

    def step(self, actions) -> tuple[np.ndarray, float, bool]:
        if self.done:
            raise RuntimeError("step called on a finished episode")
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (self.n_agents,):
            raise ValueError("need exactly one action per agent")
        if np.any(actions < 0) or np.any(actions >= self.n_actions):
            raise ValueError("action index out of range")
        self.done = True
        return self.observations(), float(self.payoff[tuple(actions)]), True

    def observations(self) -> np.ndarray:
        return np.eye(self.n_agents)

    def global_state(self) -> np.ndarray:
        return np.ones(1)


def climb_game(n_agents: int = 3, n_actions: int = 6, success_reward: float = 10.0,
               partial_penalty: float = -1.5, scaled: bool = True) -> MatrixGame:
    """Coordination trap: only unanimous capture (last action) pays off.

    Partial capture groups are penalized, scaled by group size when scaled is
    set, so under uniform exploration the capture action looks strictly worse
    than abstaining even though the joint optimum requires it.
    """
    if n_agents < 2 or n_actions < 2:
        raise ValueError("need at least two agents and two actions")
    capture = n_actions - 1
    payoff = np.zeros((n_actions,) * n_agents)
    for joint in itertools.product(range(n_actions), repeat=n_agents):
        k = sum(1 for a in joint if a == capture)
        if k == n_agents:
            payoff[joint] = success_reward
        elif k >= 1:
            payoff[joint] = partial_penalty * k if scaled else partial_penalty
    return MatrixGame(payoff)


def oracle_optimal(game: MatrixGame) -> tuple[np.ndarray, float]:
    """Exhaustive payoff maximization; first maximum in C order on ties."""
    if game.n_actions**game.n_agents > MAX_ORACLE_JOINT:
        raise ValueError("joint action space exceeds the enumeration guard")
    flat = int(game.payoff.argmax())
    action = np.asarray(np.unravel_index(flat, game.payoff.shape), dtype=np.int64)
    return action, float(game.payoff.flat[flat])
