"""Delay-channel simulation: augmented states, delay processes, and the
variable-step update recursion that turns any undelayed environment into a
randomly delayed one.

Two views of the same dynamics live here. `rdmdp_step` is the abstract
kernel: it samples the next observation delay, runs the update recursion,
and pushes the action buffer. `DelayChannel` is a timestamped discrete-time
simulation of the agent/remote-actor communication loop; with constant
latencies it reproduces `cdmdp_step` rollouts exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_mdp import EnvStep, FiniteMDP, finite_mdp_step
from .errors import ChannelOverflow, ContractViolation, ParseError

PROB_TOL = 1e-12


# ---------------------------------------------------------------------------
# Action buffer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ActionBuffer:
    """Last K sent actions, newest first: entries[0] was sent one tick ago."""

    entries: tuple

    @property
    def capacity(self) -> int:
        return len(self.entries)

    def push(self, action) -> "ActionBuffer":
        return ActionBuffer((action,) + self.entries[:-1])

    def action_at(self, index: int, pending):
        """1-based lookup matching the buffer notation; index 0 is the
        action currently being sent (not yet buffered)."""
        if index == 0:
            return pending
        if not 1 <= index <= len(self.entries):
            raise ContractViolation(
                f"buffer index {index} outside 0..{len(self.entries)}; "
                "delay maxima are inconsistent with the buffer capacity"
            )
        return self.entries[index - 1]

    @classmethod
    def filled(cls, action, capacity: int) -> "ActionBuffer":
        if capacity < 1:
            raise ValueError("buffer capacity must be at least 1")
        return cls((action,) * capacity)


def buffer_push(u: ActionBuffer, a) -> ActionBuffer:
    return u.push(a)


# ---------------------------------------------------------------------------
# Augmented state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentedState:
    """RDMDP state: delayed observation, action buffer, and both delays.

    kappa is the side input from timestamp bookkeeping (the age of the
    action about to be applied remotely); it is not part of the formal
    state and may be absent.
    """

    obs: object
    buffer: ActionBuffer
    alpha: int
    beta: int
    kappa: int | None = None

    def core(self):
        """The formal state tuple, without the kappa side input."""
        return (self.obs, self.buffer.entries, self.alpha, self.beta)

    def validate(self, max_alpha: int, max_beta: int):
        if not 0 <= self.alpha <= max_alpha:
            raise ContractViolation(f"alpha={self.alpha} outside 0..{max_alpha}")
        if not 1 <= self.beta <= max_beta:
            raise ContractViolation(f"beta={self.beta} outside 1..{max_beta}")
        if self.alpha + self.beta > self.buffer.capacity:
            raise ContractViolation(
                f"alpha+beta={self.alpha + self.beta} exceeds buffer capacity "
                f"{self.buffer.capacity}"
            )
        if self.kappa is not None and not 0 <= self.kappa <= self.beta:
            raise ContractViolation(f"kappa={self.kappa} outside 0..beta={self.beta}")


# ---------------------------------------------------------------------------
# Delay processes
# ---------------------------------------------------------------------------

class DelayProcess:
    """Discrete delay distribution with a hard maximum.

    kind "constant" is a point mass, "conditional-table" gives one row
    p(d'|d) per current delay, and "empirical-histogram" draws i.i.d. from
    a marginal (the natural model for measured per-message latencies).
    """

    def __init__(self, kind: str, max_delay: int, table: np.ndarray):
        if max_delay < 0:
            raise ValueError("max_delay must be nonnegative")
        table = np.asarray(table, dtype=float)
        if kind not in ("constant", "conditional-table", "empirical-histogram"):
            raise ValueError(f"unknown delay process kind {kind!r}")
        if kind == "conditional-table":
            if table.shape != (max_delay + 1, max_delay + 1):
                raise ValueError(
                    f"conditional table must be ({max_delay + 1}, {max_delay + 1})"
                )
            rows = table
        else:
            if table.shape != (max_delay + 1,):
                raise ValueError(f"marginal must have length {max_delay + 1}")
            rows = table[None, :]
        if np.any(rows < 0):
            raise ValueError("delay probabilities must be nonnegative")
        if np.any(np.abs(rows.sum(axis=1) - 1.0) > PROB_TOL):
            raise ValueError("every delay distribution row must sum to 1")
        self.kind = kind
        self.max_delay = max_delay
        self.table = table

    # -- constructors -------------------------------------------------------

    @classmethod
    def constant(cls, value: int) -> "DelayProcess":
        if value < 0:
            raise ValueError("constant delay must be nonnegative")
        table = np.zeros(value + 1)
        table[value] = 1.0
        proc = cls("constant", value, table)
        proc._value = value
        return proc

    @classmethod
    def conditional(cls, rows) -> "DelayProcess":
        rows = np.asarray(rows, dtype=float)
        return cls("conditional-table", rows.shape[0] - 1, rows)

    @classmethod
    def histogram(cls, masses) -> "DelayProcess":
        masses = np.asarray(masses, dtype=float)
        return cls("empirical-histogram", masses.shape[0] - 1, masses)

    @classmethod
    def uniform(cls, lo: int, hi: int) -> "DelayProcess":
        masses = np.zeros(hi + 1)
        masses[lo : hi + 1] = 1.0 / (hi - lo + 1)
        return cls("empirical-histogram", hi, masses)

    # -- queries -------------------------------------------------------------

    def probs_next(self, prev: int) -> np.ndarray:
        if self.kind == "conditional-table":
            if not 0 <= prev <= self.max_delay:
                raise ValueError(f"conditioning delay {prev} outside 0..{self.max_delay}")
            return self.table[prev]
        return self.table

    def support_next(self, prev: int):
        p = self.probs_next(prev)
        return tuple(int(d) for d in np.nonzero(p > 0)[0])

    def sample_next(self, prev: int, rng) -> int:
        if self.kind == "constant":
            return self._value
        return int(rng.choice(self.max_delay + 1, p=self.probs_next(prev)))

    def is_dirac(self) -> bool:
        if self.kind == "constant":
            return True
        rows = self.table if self.table.ndim == 2 else self.table[None, :]
        return bool(np.all(np.max(rows, axis=1) == 1.0))

    def check_observation_growth(self):
        """Observation delays repeat when nothing arrives, so they can grow
        by at most one per tick; reject tables that claim otherwise."""
        if self.kind != "conditional-table":
            if self.kind == "constant":
                return
            raise ValueError(
                "empirical-histogram processes cannot bound delay growth; "
                "use a conditional table for observation delays"
            )
        for d in range(self.max_delay + 1):
            if np.any(self.table[d, d + 2 :] > 0):
                raise ValueError(
                    f"observation delay row {d} has mass above {d + 1}"
                )


def load_delay_histogram(path, max_delay: int | None = None) -> DelayProcess:
    """Read `delay_ticks,count` CSV rows into a normalized histogram.

    Delays above max_delay fold into the max_delay bin (the clipping used
    for long-tailed measured latencies).
    """
    counts: dict[int, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2:
                raise ParseError(f"expected 'delay_ticks,count', got {line!r}", lineno)
            try:
                delay = int(parts[0])
                count = float(parts[1])
            except ValueError:
                raise ParseError(f"non-numeric fields in {line!r}", lineno)
            if delay < 0:
                raise ParseError(f"negative delay {delay}", lineno)
            if count < 0:
                raise ParseError(f"negative count {count}", lineno)
            counts[delay] = counts.get(delay, 0.0) + count
    if not counts:
        raise ParseError("empty histogram file")
    total = sum(counts.values())
    if total <= 0:
        raise ParseError("histogram has zero total mass")
    if max_delay is None:
        max_delay = max(counts)
    masses = np.zeros(max_delay + 1)
    for delay, count in counts.items():
        masses[min(delay, max_delay)] += count / total
    return DelayProcess.histogram(masses)


# ---------------------------------------------------------------------------
# Undelayed environment protocol
# ---------------------------------------------------------------------------

class FiniteMdpEnv:
    """Functional adapter exposing a FiniteMDP to the delay machinery."""

    def __init__(self, mdp: FiniteMDP):
        self.mdp = mdp
        self.null_action = 0

    def initial_state(self, rng):
        return self.mdp.sample_init(rng)

    def step_from(self, state, action, rng) -> EnvStep:
        return finite_mdp_step(self.mdp, state, action, rng)

    def is_terminal(self, state) -> bool:
        return bool(self.mdp.terminal[state])


# ---------------------------------------------------------------------------
# Variable-step update recursion
# ---------------------------------------------------------------------------

def f_delta_sample(delta: int, x: AugmentedState, a, undelayed, p_beta: DelayProcess, rng):
    """Sample the variable-step update for an observation-delay change of
    delta = alpha - alpha'.

    delta = -1 repeats the observation exactly (zero reward, unchanged
    action delay). delta >= 0 advances the undelayed environment delta+1
    times; level d applies the buffered action at position (alpha - d) +
    beta_d, where the action delay is rechained through p_beta at every
    level, and rewards accumulate across the skipped steps.

    Returns (obs', beta', accumulated reward, terminal flag).
    """
    if delta < -1:
        raise ContractViolation(f"delta={delta} below -1; observation delays grew by >1")
    if delta == -1:
        return x.obs, x.beta, 0.0, False
    obs = x.obs
    beta_prev = x.beta
    total = 0.0
    terminal = False
    for d in range(delta + 1):
        beta_d = p_beta.sample_next(beta_prev, rng)
        if beta_d < 1:
            raise ContractViolation("action delays must stay >= 1")
        action = x.buffer.action_at(x.alpha - d + beta_d, pending=a)
        step = undelayed.step_from(obs, action, rng)
        obs = step.next_observation
        total += step.reward
        beta_prev = beta_d
        if step.terminal:
            terminal = True
            break
    return obs, beta_prev, total, terminal


def rdmdp_step(x: AugmentedState, a, undelayed, p_alpha: DelayProcess,
               p_beta: DelayProcess, rng):
    """One transition of the randomly delayed MDP built over `undelayed`."""
    alpha_next = p_alpha.sample_next(x.alpha, rng)
    if alpha_next > x.alpha + 1:
        raise ContractViolation(
            f"observation delay grew from {x.alpha} to {alpha_next}; "
            "p_alpha must not grow by more than one"
        )
    delta = x.alpha - alpha_next
    obs, beta_next, reward, terminal = f_delta_sample(delta, x, a, undelayed, p_beta, rng)
    state = AugmentedState(obs, x.buffer.push(a), alpha_next, beta_next)
    return state, reward, terminal


def cdmdp_step(x: AugmentedState, a, undelayed, alpha_const: int, beta_const: int, rng):
    """Constant-delay special case: Dirac delay processes, same code path."""
    return rdmdp_step(
        x, a, undelayed,
        DelayProcess.constant(alpha_const),
        DelayProcess.constant(beta_const),
        rng,
    )


def initial_augmented_state(undelayed, max_alpha: int, max_beta: int, rng) -> AugmentedState:
    """Reset state: buffer filled with the null action, delays at maxima."""
    obs = undelayed.initial_state(rng)
    buffer = ActionBuffer.filled(undelayed.null_action, max_alpha + max_beta)
    return AugmentedState(obs, buffer, max_alpha, max_beta, kappa=max_beta - 1)


# ---------------------------------------------------------------------------
# Timestamped channel simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObsPayload:
    observation: object
    cumulative_reward: float
    terminal: bool
    influencing_action_ts: int
    pending_action_ts: int


@dataclass(frozen=True)
class ChannelRecord:
    payload_timestamp: int
    payload: object
    arrival_tick: int

    def __post_init__(self):
        if self.arrival_tick < self.payload_timestamp:
            raise ContractViolation("messages cannot arrive before they are produced")


class DelayChannel:
    """Discrete-time agent/remote-actor loop with per-message latencies.

    Within each tick: action messages reach the remote actor and supersede
    older ones, the current undelayed state is captured and sent back with
    its cumulative reward and action timestamps, observation messages reach
    the agent (newest capture wins), the agent acts, and the remote actor
    advances the undelayed environment by one step.

    Rewards travel as cumulative values and are differenced agent-side, so
    skipped observations deliver their rewards in one lump. The per-tick
    alpha, beta, and kappa are recovered from the message timestamps.

    Episodes open with max_alpha warmup ticks during which null actions are
    sent; the remote actor is therefore already ahead of the agent's first
    observation, matching the kernel's initial state, and with constant
    latencies the emitted states reproduce a cdmdp_step rollout exactly.
    """

    def __init__(self, undelayed, obs_latency: DelayProcess, act_latency: DelayProcess,
                 max_alpha: int | None = None, max_beta: int | None = None):
        self.undelayed = undelayed
        self.obs_latency = obs_latency
        self.act_latency = act_latency
        self.max_alpha = obs_latency.max_delay if max_alpha is None else max_alpha
        self.max_beta = act_latency.max_delay if max_beta is None else max_beta
        if self.max_beta < 1:
            raise ValueError("action latency must be at least one tick")
        self.capacity = self.max_alpha + self.max_beta

    # -- episode control -----------------------------------------------------

    def reset(self, rng) -> AugmentedState:
        self.tick = 0
        self.env_state = self.undelayed.initial_state(rng)
        self.env_terminal = False
        self.cum_reward = 0.0
        self._reward_log: list[float] = []
        null = self.undelayed.null_action
        # Pre-episode fiction: null actions were sent every tick at maximum
        # latency, keeping the remote actor's action stream gapless.
        self.pending_actions = [
            ChannelRecord(-j, null, -j + self.max_beta) for j in range(self.max_beta, 0, -1)
        ]
        self.applied_ts = -self.max_beta - 1
        self.applied_action = null
        self.buffer = ActionBuffer.filled(null, self.capacity)
        self.pending_obs: list[ChannelRecord] = []
        self.held: ChannelRecord | None = None
        self._obs_latency_prev = self.obs_latency.max_delay
        self._act_latency_prev = self.act_latency.max_delay
        # Warmup: the remote actor runs max_alpha ticks ahead under null
        # actions before the agent takes over.
        for _ in range(self.max_alpha):
            self._tick_front(rng)
            self._send(null, rng)
            self._advance_remote(rng)
        self._tick_front(rng)
        state, payload = self._assemble_state()
        self.handover_capture_ts = self.held.payload_timestamp
        self.prev_cum_seen = payload.cumulative_reward
        return state

    # -- tick pipeline pieces --------------------------------------------------

    def _tick_front(self, rng):
        """Arrivals and capture for the current tick."""
        self._prev_applied_ts = self.applied_ts
        self._deliver_actions()
        self._capture_and_send(rng)
        self._deliver_obs()

    def _deliver_actions(self):
        remaining = []
        for rec in self.pending_actions:
            if rec.arrival_tick <= self.tick:
                # later-produced wins; on equal timestamps the later arrival
                # in this ordered scan wins (defensive, cannot occur)
                if rec.payload_timestamp >= self.applied_ts:
                    self.applied_ts = rec.payload_timestamp
                    self.applied_action = rec.payload
            else:
                remaining.append(rec)
        self.pending_actions = remaining

    def _capture_and_send(self, rng):
        payload = ObsPayload(self.env_state, self.cum_reward, self.env_terminal,
                             influencing_action_ts=self._prev_applied_ts,
                             pending_action_ts=self.applied_ts)
        latency = self.obs_latency.sample_next(self._obs_latency_prev, rng)
        self._obs_latency_prev = latency
        self.pending_obs.append(ChannelRecord(self.tick, payload, self.tick + latency))

    def _deliver_obs(self):
        remaining = []
        best = self.held
        for rec in self.pending_obs:
            if rec.arrival_tick <= self.tick:
                if rec.arrival_tick - rec.payload_timestamp > self.max_alpha:
                    continue  # stale beyond the buffer's reach: discard
                if best is None or rec.payload_timestamp > best.payload_timestamp:
                    best = rec
            else:
                remaining.append(rec)
        self.pending_obs = remaining
        self.held = best

    def _send(self, action, rng):
        latency = self.act_latency.sample_next(self._act_latency_prev, rng)
        self._act_latency_prev = latency
        if latency < 1:
            raise ContractViolation("action latency must be at least one tick")
        self.pending_actions.append(ChannelRecord(self.tick, action, self.tick + latency))
        self.buffer = self.buffer.push(action)

    def _advance_remote(self, rng):
        if not self.env_terminal:
            step = self.undelayed.step_from(self.env_state, self.applied_action, rng)
            self.env_state = step.next_observation
            self.cum_reward += step.reward
            self._reward_log.append(step.reward)
            self.env_terminal = step.terminal
        self.tick += 1

    def _assemble_state(self):
        if self.held is None or self.tick - self.held.payload_timestamp > self.max_alpha:
            raise ChannelOverflow(
                f"no observation younger than {self.max_alpha} ticks at tick {self.tick}"
            )
        payload: ObsPayload = self.held.payload
        T = self.held.payload_timestamp
        alpha = self.tick - T
        beta = (T - 1) - payload.influencing_action_ts
        kappa = (T - 1) - payload.pending_action_ts
        if beta > self.max_beta:
            raise ChannelOverflow(
                f"influencing action is {beta} ticks old at capture; exceeds "
                f"max_beta={self.max_beta}"
            )
        state = AugmentedState(payload.observation, self.buffer, alpha, beta, kappa=kappa)
        return state, payload

    def step(self, action, rng):
        """Send `action` for the current tick, advance one tick, and return
        (next augmented state, differenced reward, terminal flag)."""
        self._send(action, rng)
        self._advance_remote(rng)
        self._tick_front(rng)
        state, payload = self._assemble_state()
        reward = payload.cumulative_reward - self.prev_cum_seen
        self.prev_cum_seen = payload.cumulative_reward
        return state, reward, payload.terminal

    @property
    def undelayed_rewards(self):
        """Per-tick rewards of the current episode from the first capture
        the agent saw onward (warmup rewards before it are excluded)."""
        return tuple(self._reward_log[self.handover_capture_ts:])


def channel_simulate(undelayed, agent_policy, obs_latency: DelayProcess,
                     act_latency: DelayProcess, ticks: int, rng,
                     max_alpha: int | None = None, max_beta: int | None = None):
    """Run the channel for `ticks` ticks under `agent_policy`.

    Returns (rows, states, undelayed_rewards): one log row per tick as
    (tick, alpha, beta, kappa, reward, terminal), the emitted augmented
    states, and the ground-truth undelayed reward sequence. Episodes reset
    in place when a terminal observation reaches the agent.
    """
    if ticks < 1:
        raise ValueError("ticks must be >= 1")
    channel = DelayChannel(undelayed, obs_latency, act_latency, max_alpha, max_beta)
    state = channel.reset(rng)
    rows = []
    states = [state]
    ground_truth = []
    for t in range(ticks):
        action, _ = agent_policy.sample(state, rng)
        state, reward, done = channel.step(action, rng)
        rows.append((t + 1, state.alpha, state.beta, state.kappa, reward, done))
        states.append(state)
        if done:
            ground_truth.extend(channel.undelayed_rewards)
            state = channel.reset(rng)
            states.append(state)
    ground_truth.extend(channel.undelayed_rewards)
    return rows, states, ground_truth


def write_episode_log(rows, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("tick,alpha,beta,kappa,reward,terminal\n")
        for tick, alpha, beta, kappa, reward, terminal in rows:
            fh.write(f"{tick},{alpha},{beta},{kappa},{float(reward)!r},{int(terminal)}\n")
