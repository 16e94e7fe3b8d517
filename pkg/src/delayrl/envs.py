"""Desk-scale benchmark environments and the delayed-task bundle that ties
an undelayed environment to its communication latencies.

Environment objects are stateless: episode state is an explicit value
threaded through step_from, so one instance can back many channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_mdp import EnvStep, FiniteMDP
from .delay_channel import DelayChannel, DelayProcess
from .errors import ConfigError

LEFT, RIGHT = 0, 1


class OneDWorld:
    """Grid line with actions left/right.

    Reward modes: "rightmost" pays +1 on reaching the last cell (episode
    ends there), "delta" pays the per-step position change, "center" pays
    +1 per step spent on the middle cell (episode runs to the horizon, so
    holding the center requires oscillating onto it). slip flips the
    applied action with the given probability.
    """

    def __init__(self, num_cells=7, horizon=50, reward_mode="rightmost",
                 slip=0.0, start_cell=0):
        if num_cells < 2:
            raise ValueError("need at least two cells")
        if reward_mode not in ("rightmost", "delta", "center"):
            raise ValueError(f"unknown reward mode {reward_mode!r}")
        self.num_cells = num_cells
        self.horizon = horizon
        self.reward_mode = reward_mode
        self.slip = slip
        self.start_cell = start_cell
        self.null_action = LEFT
        self.num_actions = 2

    def initial_state(self, rng):
        return (self.start_cell, 0)

    def is_terminal(self, state) -> bool:
        pos, t = state
        if t >= self.horizon:
            return True
        return self.reward_mode == "rightmost" and pos == self.num_cells - 1

    def step_from(self, state, action, rng) -> EnvStep:
        pos, t = state
        move = int(action)
        if self.slip > 0.0 and rng.random() < self.slip:
            move = 1 - move
        nxt = min(max(pos + (1 if move == RIGHT else -1), 0), self.num_cells - 1)
        if self.reward_mode == "rightmost":
            reward = 1.0 if nxt == self.num_cells - 1 else 0.0
        elif self.reward_mode == "delta":
            reward = float(nxt - pos)
        else:
            reward = 1.0 if nxt == self.num_cells // 2 else 0.0
        state_next = (nxt, t + 1)
        return EnvStep(state_next, reward, self.is_terminal(state_next))

    def to_finite_mdp(self) -> FiniteMDP:
        """Position-only tabular view (no horizon), for exact analysis."""
        n = self.num_cells
        trans = np.zeros((n, 2, n))
        reward = np.zeros((n, 2))
        for pos in range(n):
            for action in (LEFT, RIGHT):
                for move, p in ((action, 1.0 - self.slip), (1 - action, self.slip)):
                    if p == 0.0:
                        continue
                    nxt = min(max(pos + (1 if move == RIGHT else -1), 0), n - 1)
                    trans[pos, action, nxt] += p
                    if self.reward_mode == "rightmost":
                        r = 1.0 if nxt == n - 1 else 0.0
                    elif self.reward_mode == "delta":
                        r = float(nxt - pos)
                    else:
                        r = 1.0 if nxt == n // 2 else 0.0
                    reward[pos, action] += p * r
        init = np.zeros(n)
        init[self.start_cell] = 1.0
        terminal = [False] * n
        if self.reward_mode == "rightmost":
            terminal[n - 1] = True
        return FiniteMDP(trans, reward, init, terminal)


class ContinuousOneDWorld:
    """Continuous-action adapter: a 1-D action in [-1, 1], nonnegative
    values step right. Observations are the one-hot position plus the
    normalized episode clock."""

    def __init__(self, **kwargs):
        self.world = OneDWorld(**kwargs)
        self.action_dim = 1
        self.obs_dim = self.world.num_cells + 1
        self.null_action = np.zeros(1)
        self.horizon = self.world.horizon

    def initial_state(self, rng):
        return self.world.initial_state(rng)

    def is_terminal(self, state) -> bool:
        return self.world.is_terminal(state)

    def step_from(self, state, action, rng) -> EnvStep:
        move = RIGHT if float(np.asarray(action).ravel()[0]) >= 0.0 else LEFT
        return self.world.step_from(state, move, rng)

    def obs_features(self, state) -> np.ndarray:
        pos, t = state
        out = np.zeros(self.obs_dim)
        out[pos] = 1.0
        out[-1] = t / self.world.horizon
        return out


class PointMass:
    """1-D double integrator on [-1, 1] with walls.

    The continuous action accelerates the mass; reward is the negative
    squared distance to the goal, scaled by dt. Episodes run a fixed
    horizon.
    """

    def __init__(self, dt=0.1, horizon=200, goal=0.5, accel=1.0,
                 start_low=-1.0, start_high=1.0, max_speed=1.0):
        self.dt = dt
        self.horizon = horizon
        self.goal = goal
        self.accel = accel
        self.start_low = start_low
        self.start_high = start_high
        self.max_speed = max_speed
        self.action_dim = 1
        self.obs_dim = 3
        self.null_action = np.zeros(1)

    def initial_state(self, rng):
        return (float(rng.uniform(self.start_low, self.start_high)), 0.0, 0)

    def is_terminal(self, state) -> bool:
        return state[2] >= self.horizon

    def step_from(self, state, action, rng) -> EnvStep:
        pos, vel, t = state
        a = float(np.clip(np.asarray(action).ravel()[0], -1.0, 1.0))
        vel = float(np.clip(vel + a * self.accel * self.dt, -self.max_speed, self.max_speed))
        pos = pos + vel * self.dt
        if pos < -1.0:
            pos, vel = -1.0, 0.0
        elif pos > 1.0:
            pos, vel = 1.0, 0.0
        reward = -((pos - self.goal) ** 2) * self.dt
        state_next = (pos, vel, t + 1)
        return EnvStep(state_next, reward, self.is_terminal(state_next))

    def obs_features(self, state) -> np.ndarray:
        pos, vel, t = state
        return np.array([pos, vel, t / self.horizon])


@dataclass
class DelayedTask:
    """An undelayed environment plus its communication latency model; the
    bundle every agent and channel is built from."""

    env: object
    obs_latency: DelayProcess
    act_latency: DelayProcess
    max_alpha: int
    max_beta: int
    buffer_k: int | None = None

    def __post_init__(self):
        if self.buffer_k is not None and self.buffer_k < self.max_alpha + self.max_beta:
            raise ConfigError(
                f"buffer capacity K={self.buffer_k} is smaller than "
                f"max_alpha+max_beta={self.max_alpha + self.max_beta}; the action "
                "buffer must cover the maximum total delay"
            )
        if self.obs_latency.max_delay > self.max_alpha:
            raise ConfigError("observation latency exceeds max_alpha")
        if self.act_latency.max_delay > self.max_beta:
            raise ConfigError("action latency exceeds max_beta")

    @property
    def capacity(self) -> int:
        return self.max_alpha + self.max_beta

    # codec-facing surface -----------------------------------------------------

    @property
    def obs_dim(self) -> int:
        return self.env.obs_dim

    @property
    def action_dim(self) -> int:
        return self.env.action_dim

    def obs_features(self, obs) -> np.ndarray:
        return self.env.obs_features(obs)

    def channel_factory(self):
        def make():
            return DelayChannel(self.env, self.obs_latency, self.act_latency,
                                self.max_alpha, self.max_beta)

        return make


class RandomPolicy:
    """Uniform continuous actions; the statistical baseline."""

    def __init__(self, action_dim: int):
        self.action_dim = action_dim

    def act(self, x, rng):
        return rng.uniform(-1.0, 1.0, self.action_dim)

    def act_deterministic(self, x):
        return np.zeros(self.action_dim)

    def sample(self, x, rng):
        return self.act(x, rng), self.action_dim * np.log(0.5)
