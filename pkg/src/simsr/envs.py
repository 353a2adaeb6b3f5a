"""Pixel gridworlds over known finite MDPs, distractor channels, and a replay buffer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from simsr.mdp import FiniteMDP
from simsr.training import Batch

ACTIONS = ("up", "down", "left", "right")
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
DISTRACTOR_MODES = ("none", "static_noise", "scrolling_pattern")


def gridworld_mdp(height: int, width: int, goal, gamma: float, reward: float = 1.0) -> FiniteMDP:
    """Deterministic grid: moves off the grid are self-loops, the goal cell pays ``reward``
    for every action taken there."""
    n = height * width
    P = np.zeros((n, 4, n))
    r = np.zeros((n, 4))
    for i in range(height):
        for j in range(width):
            s = i * width + j
            for a, (di, dj) in enumerate(MOVES):
                ni, nj = i + di, j + dj
                if not (0 <= ni < height and 0 <= nj < width):
                    ni, nj = i, j
                P[s, a, ni * width + nj] = 1.0
    r[goal[0] * width + goal[1]] = reward
    return FiniteMDP(P, r, gamma)


@dataclass
class ObservationEmitter:
    """Renders a state as a one-hot ``height x width`` image, optionally followed by
    a distractor image of the same size.

    The distractor depends only on the clock ``(episode, t)`` and the seed:
    ``static_noise`` draws one uniform image per episode, ``scrolling_pattern``
    rolls a fixed random image by one pixel per time step.
    """

    height: int
    width: int
    distractor_mode: str = "none"
    distractor_seed: int = 0
    _base: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.distractor_mode not in DISTRACTOR_MODES:
            raise ValueError(f"unknown distractor mode {self.distractor_mode!r}")
        self._base = np.random.default_rng(self.distractor_seed).uniform(size=self.n_pixels)
        clean = np.stack([self.clean(s) for s in range(self.n_pixels)])
        if len(np.unique(clean, axis=0)) != self.n_pixels:
            raise ValueError("clean renderings are not distinct across states")

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    @property
    def obs_dim(self) -> int:
        return self.n_pixels * (1 if self.distractor_mode == "none" else 2)

    @property
    def n_phases(self) -> int:
        """Number of distinct distractor frames within one episode."""
        return self.n_pixels if self.distractor_mode == "scrolling_pattern" else 1

    def clean(self, state: int) -> np.ndarray:
        img = np.zeros(self.n_pixels)
        img[state] = 1.0
        return img

    def distractor(self, t: int, episode: int = 0) -> np.ndarray:
        if self.distractor_mode == "static_noise":
            return np.random.default_rng([self.distractor_seed, episode]).uniform(size=self.n_pixels)
        if self.distractor_mode == "scrolling_pattern":
            return np.roll(self._base, t)
        return np.zeros(0)

    def emit(self, state: int, t: int = 0, episode: int = 0) -> np.ndarray:
        if self.distractor_mode == "none":
            return self.clean(state)
        return np.concatenate([self.clean(state), self.distractor(t, episode)])

    def state_of(self, obs) -> int:
        """Invert the clean channel."""
        clean = np.asarray(obs)[: self.n_pixels]
        idx = np.flatnonzero(clean == 1.0)
        if len(idx) != 1 or np.count_nonzero(clean) != 1:
            raise ValueError("observation does not contain a valid clean rendering")
        return int(idx[0])


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: bool


class GridWorldEnv:
    """Episodic pixel gridworld.

    Episodes never terminate early; ``done`` marks the horizon (a time limit),
    so learners should keep bootstrapping through it.
    """

    def __init__(
        self,
        height: int = 3,
        width: int = 3,
        goal=(2, 2),
        start=(0, 0),
        gamma: float = 0.99,
        reward_scale: float = 1.0,
        distractor_mode: str = "none",
        distractor_seed: int = 0,
        horizon: int = 100,
        underlying: FiniteMDP | None = None,
    ):
        self.height, self.width = height, width
        self.goal = tuple(goal)
        self.start = tuple(start)
        self.reward_scale = float(reward_scale)
        self.horizon = horizon
        self.underlying = underlying or gridworld_mdp(height, width, self.goal, gamma)
        if self.underlying.n_states != height * width:
            raise ValueError("underlying MDP size does not match the grid")
        self.emitter = ObservationEmitter(height, width, distractor_mode, distractor_seed)
        self.state = self.start_state
        self.t = 0
        self.episode = -1

    @classmethod
    def from_config(cls, cfg: dict) -> "GridWorldEnv":
        return cls(**cfg)

    @property
    def n_states(self) -> int:
        return self.height * self.width

    @property
    def n_actions(self) -> int:
        return 4

    @property
    def obs_dim(self) -> int:
        return self.emitter.obs_dim

    @property
    def start_state(self) -> int:
        return self.start[0] * self.width + self.start[1]

    def position(self, state: int | None = None):
        s = self.state if state is None else state
        return divmod(s, self.width)

    def observe(self) -> np.ndarray:
        return self.emitter.emit(self.state, self.t, self.episode)

    def reset(self) -> np.ndarray:
        self.episode += 1
        self.t = 0
        self.state = self.start_state
        return self.observe()

    def step(self, action: int, rng: np.random.Generator) -> Transition:
        if not 0 <= int(action) < self.n_actions:
            raise ValueError(f"invalid action {action!r}")
        obs = self.observe()
        reward = self.reward_scale * self.underlying.reward[self.state, action]
        row = self.underlying.transition[self.state, action]
        if np.count_nonzero(row) == 1:
            nxt = int(np.argmax(row))
        else:
            nxt = int(rng.choice(self.n_states, p=row))
        self.state = nxt
        self.t += 1
        done = self.t >= self.horizon
        return Transition(obs, int(action), float(reward), self.observe(), done)


def env_step(env: GridWorldEnv, action: int, rng: np.random.Generator) -> Transition:
    return env.step(action, rng)


@dataclass
class GroundTruth:
    mdp: FiniteMDP
    emitter: ObservationEmitter

    def state_of(self, obs) -> int:
        return self.emitter.state_of(obs)


def ground_truth_bundle(env: GridWorldEnv) -> GroundTruth:
    """The exact MDP the agent experiences (rewards scaled) and the observation inverse."""
    base = env.underlying
    mdp = base
    if env.reward_scale != 1.0:
        mdp = FiniteMDP(base.transition, env.reward_scale * base.reward, base.discount)
    return GroundTruth(mdp, env.emitter)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling (with replacement)."""

    def __init__(self, capacity: int = 100_000, obs_dim: int = 1, seed: int = 0):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.action = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity)
        self.done = np.zeros(capacity, dtype=bool)
        self.pos = 0
        self.size = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self):
        return self.size

    def push(self, tr: Transition) -> None:
        i = self.pos
        self.obs[i] = tr.obs
        self.next_obs[i] = tr.next_obs
        self.action[i] = tr.action
        self.reward[i] = tr.reward
        self.done[i] = tr.done
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator | None = None) -> Batch:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = (rng or self.rng).integers(self.size, size=n)
        return Batch(
            self.obs[idx], self.action[idx], self.reward[idx], self.next_obs[idx], self.done[idx]
        )


def buffer_sample(buffer: ReplayBuffer, n: int, rng: np.random.Generator | None = None) -> Batch:
    return buffer.sample(n, rng)
