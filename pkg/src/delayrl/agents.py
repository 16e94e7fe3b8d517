"""Training algorithms: the delay-correcting actor-critic with multi-step
resampled backups, the soft actor-critic baseline on augmented
observations, and the shared training loop.

Both agents act through a squashed-Gaussian policy over continuous
actions. The delay-correcting agent regresses twin state-value critics to
the entropy-augmented multi-step estimator computed on freshly resampled
fragments, and improves the policy by backpropagating through the whole
resampling chain (each resampled action feeds every later buffer). The
baseline performs the usual 1-step action-value backup.

Each loss exists twice: a tape build used for training and a plain-array
evaluation used by the finite-difference integrity checks; both consume
the same frozen per-step noises.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import (
    Adam,
    Mlp,
    Tensor,
    backward,
    polyak_update,
    reparameterized_gaussian_sample,
    squashed_gaussian_log_prob,
)
from .errors import ConfigError
from .replay import ReplayMemory

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 3e-4
    gamma: float = 0.99
    batch_size: int = 128
    tau: float = 0.005
    grad_steps_per_env_step: int = 1
    reward_scale: float = 5.0
    entropy_scale: float = 1.0
    replay_capacity: int = 1_000_000
    warmup_samples: int = 10_000
    hidden: tuple = (64, 64)
    activation: str = "softplus"
    fixed_n: int | None = None
    eval_every: int = 1000
    eval_episodes: int = 5


# ---------------------------------------------------------------------------
# Observation encoding
# ---------------------------------------------------------------------------

class ObservationCodec:
    """Flattens an augmented state into one feature vector.

    Layout: [env observation | buffer, newest first | one-hot alpha |
    one-hot beta | one-hot kappa]. The contiguous buffer block lets the
    actor rebuild a resampled state's features from slices. Naive codecs
    drop everything but the raw observation (the Markov-violating
    baseline).
    """

    def __init__(self, task, include_buffer=True, include_delays=True,
                 include_kappa=True):
        self.obs_encoder = task.obs_features
        self.obs_dim = task.obs_dim
        self.action_dim = task.action_dim
        self.max_alpha = task.max_alpha
        self.max_beta = task.max_beta
        self.capacity = task.max_alpha + task.max_beta
        self.include_buffer = include_buffer
        self.include_delays = include_delays
        self.include_kappa = include_kappa
        dim = self.obs_dim
        if include_buffer:
            dim += self.capacity * self.action_dim
        if include_delays:
            dim += (self.max_alpha + 1) + (self.max_beta + 1)
        if include_kappa:
            dim += self.max_beta + 1
        self.dim = dim
        self.buffer_start = self.obs_dim

    def encode(self, x) -> np.ndarray:
        out = np.zeros(self.dim)
        out[: self.obs_dim] = self.obs_encoder(x.obs)
        pos = self.obs_dim
        if self.include_buffer:
            d = self.action_dim
            for entry in x.buffer.entries:
                out[pos : pos + d] = np.asarray(entry, dtype=float).ravel()
                pos += d
        if self.include_delays:
            out[pos + x.alpha] = 1.0
            pos += self.max_alpha + 1
            out[pos + x.beta] = 1.0
            pos += self.max_beta + 1
        if self.include_kappa and x.kappa is not None:
            out[pos + x.kappa] = 1.0
        return out


# ---------------------------------------------------------------------------
# Squashed-Gaussian policy
# ---------------------------------------------------------------------------

class GaussianMlpPolicy:
    kind = "gaussian-mlp"

    def __init__(self, codec: ObservationCodec, hp: Hyperparams, rng):
        self.codec = codec
        self.action_dim = codec.action_dim
        self.net = Mlp([codec.dim, *hp.hidden, 2 * codec.action_dim], rng,
                       activation=hp.activation)

    def heads_array(self, feats: np.ndarray):
        out = self.net.forward_array(feats)
        d = self.action_dim
        mean = out[..., :d]
        log_std = np.clip(out[..., d:], ad.LOG_STD_MIN, ad.LOG_STD_MAX)
        return mean, log_std

    def heads_tape(self, feats: Tensor):
        out = self.net.forward(feats)
        d = self.action_dim
        return ad.slice_cols(out, 0, d), ad.slice_cols(out, d, 2 * d)

    def actions_from_noise(self, feats: np.ndarray, noise: np.ndarray):
        """Tape-free reparameterized actions and log-probs for given noise."""
        mean, log_std = self.heads_array(feats)
        actions = np.tanh(mean + np.exp(log_std) * noise)
        gauss = -0.5 * (noise**2 + LOG_2PI) - log_std
        correction = np.log(1.0 + ad.SQUASH_EPS - actions**2)
        return actions, (gauss - correction).sum(axis=-1)

    def sample_batch(self, feats: np.ndarray, rng):
        noise = rng.standard_normal((feats.shape[0], self.action_dim))
        actions, log_probs = self.actions_from_noise(feats, noise)
        return actions, log_probs, noise

    # single-state policy protocol (shared with the tabular policies) ------

    def sample(self, x, rng):
        feats = self.codec.encode(x)[None, :]
        actions, log_probs, _ = self.sample_batch(feats, rng)
        return actions[0], float(log_probs[0])

    def log_prob(self, x, a) -> float:
        feats = self.codec.encode(x)[None, :]
        mean, log_std = self.heads_array(feats)
        a = np.asarray(a, dtype=float).reshape(1, -1)
        return float(squashed_gaussian_log_prob(mean, log_std, a)[0])

    def mean_action(self, x) -> np.ndarray:
        feats = self.codec.encode(x)[None, :]
        mean, _ = self.heads_array(feats)
        return np.tanh(mean[0])


# ---------------------------------------------------------------------------
# Delay-correcting actor-critic
# ---------------------------------------------------------------------------

@dataclass
class FragmentBatch:
    """A batch of fragments padded to the longest length, with per-element
    masks: live[:, t-1] marks steps that exist, tail_mask[t-1] marks the
    (non-terminal) elements whose bootstrap state is the step-t resampled
    state, and tail_coeff carries gamma^n_i for non-terminal tails."""

    x0_feats: np.ndarray          # (B, dim)
    step_feats: list              # per step t: (B, dim); padded rows are zero
    rewards: np.ndarray           # (B, n_max) zero-padded
    live: np.ndarray              # (B, n_max) 1.0 where the step exists
    tail_mask: list               # per step t: (B,) selects bootstrap states
    tail_mask0: np.ndarray        # (B,) selects x0 itself (forced n=0)
    tail_coeff: np.ndarray        # (B,) gamma^n_i, zero for terminal tails
    lengths: np.ndarray           # (B,) fragment lengths

    @property
    def size(self) -> int:
        return self.x0_feats.shape[0]

    @property
    def n_max(self) -> int:
        return len(self.step_feats)


class DcacAgent:
    name = "dcac"

    def __init__(self, codec: ObservationCodec, hp: Hyperparams, rng):
        if not codec.include_buffer:
            raise ConfigError("the delay-correcting agent needs buffered observations")
        self.codec = codec
        self.hp = hp
        self.policy = GaussianMlpPolicy(codec, hp, rng)
        self.v1 = Mlp([codec.dim, *hp.hidden, 1], rng, activation=hp.activation)
        self.v2 = Mlp([codec.dim, *hp.hidden, 1], rng, activation=hp.activation)
        self.v1_target = self.v1.clone()
        self.v2_target = self.v2.clone()
        self.opt_policy = Adam(self.policy.net.parameters(), lr=hp.learning_rate)
        self.opt_critic = Adam(self.v1.parameters() + self.v2.parameters(),
                               lr=hp.learning_rate)

    # -- acting ---------------------------------------------------------------

    def act(self, x, rng):
        action, _ = self.policy.sample(x, rng)
        return action

    def act_deterministic(self, x):
        return self.policy.mean_action(x)

    # -- fragment batching ------------------------------------------------------

    def collect_batch(self, memory: ReplayMemory, rng) -> FragmentBatch:
        hp = self.hp
        fragments = []
        n_max = 0
        for _ in range(hp.batch_size):
            i = memory.sample_start(rng)
            row0, rows = memory.fragment_rows(i, fixed_n=hp.fixed_n)
            fragments.append((row0, rows))
            n_max = max(n_max, len(rows))
        B = len(fragments)
        dim = self.codec.dim
        x0_feats = np.empty((B, dim))
        step_feats = [np.zeros((B, dim)) for _ in range(n_max)]
        rewards = np.zeros((B, n_max))
        live = np.zeros((B, n_max))
        tail_mask = [np.zeros(B) for _ in range(n_max)]
        tail_mask0 = np.zeros(B)
        tail_coeff = np.zeros(B)
        lengths = np.empty(B, dtype=int)
        for b, (row0, rows) in enumerate(fragments):
            x0_feats[b] = row0.feats
            n = len(rows)
            lengths[b] = n
            for t, rec in enumerate(rows):
                step_feats[t][b] = rec.feats
                rewards[b, t] = rec.reward
            live[b, :n] = 1.0
            if n == 0:
                # forced-zero-length fragment: bootstrap at x0 itself
                tail_mask0[b] = 1.0
                tail_coeff[b] = 1.0
            elif not rows[-1].terminal:
                tail_mask[n - 1][b] = 1.0
                tail_coeff[b] = hp.gamma**n
        return FragmentBatch(x0_feats, step_feats, rewards, live, tail_mask,
                             tail_mask0, tail_coeff, lengths)

    def make_noises(self, batch: FragmentBatch, rng):
        return [rng.standard_normal((batch.size, self.codec.action_dim))
                for _ in range(batch.n_max)]

    def _assemble_step_tape(self, batch, t, action_tensors):
        """Feature tensor of the resampled state x*_t: stored features with
        the t newest buffer slots replaced by the resampled actions."""
        feats_t = batch.step_feats[t - 1]
        d = self.codec.action_dim
        start = self.codec.buffer_start
        parts = [Tensor(feats_t[:, :start])]
        parts.extend(action_tensors[j] for j in range(t - 1, -1, -1))
        parts.append(Tensor(feats_t[:, start + t * d :]))
        return ad.concat(parts, axis=1)

    def _assemble_step_arrays(self, batch, t, actions):
        feats_t = batch.step_feats[t - 1]
        d = self.codec.action_dim
        start = self.codec.buffer_start
        parts = [feats_t[:, :start]]
        parts.extend(actions[j] for j in range(t - 1, -1, -1))
        parts.append(feats_t[:, start + t * d :])
        return np.concatenate(parts, axis=1)

    # -- losses: tape builds and plain-array twins -------------------------------

    def _chain_tape(self, batch: FragmentBatch, noises):
        """Resampling chain on the tape; returns per-step log-prob tensors
        and the mask-selected bootstrap feature tensor."""
        feats_prev = Tensor(batch.x0_feats)
        action_tensors = []
        log_probs = []
        tail_sel = None
        if batch.tail_mask0.any():
            tail_sel = ad.mul(Tensor(batch.tail_mask0[:, None]), feats_prev)
        for t in range(1, batch.n_max + 1):
            mean, log_std = self.policy.heads_tape(feats_prev)
            a_t, logp_t = reparameterized_gaussian_sample(mean, log_std, noises[t - 1])
            action_tensors.append(a_t)
            log_probs.append(logp_t)
            feats_t = self._assemble_step_tape(batch, t, action_tensors)
            mask = batch.tail_mask[t - 1]
            if mask.any():
                picked = ad.mul(Tensor(mask[:, None]), feats_t)
                tail_sel = picked if tail_sel is None else ad.add(tail_sel, picked)
            feats_prev = feats_t
        return log_probs, tail_sel

    def _chain_arrays(self, batch: FragmentBatch, noises):
        feats_prev = batch.x0_feats
        actions = []
        log_probs = []
        tail_sel = batch.tail_mask0[:, None] * batch.x0_feats
        for t in range(1, batch.n_max + 1):
            a_t, logp_t = self.policy.actions_from_noise(feats_prev, noises[t - 1])
            actions.append(a_t)
            log_probs.append(logp_t)
            feats_t = self._assemble_step_arrays(batch, t, actions)
            tail_sel += batch.tail_mask[t - 1][:, None] * feats_t
            feats_prev = feats_t
        return log_probs, tail_sel

    def _reward_part(self, batch: FragmentBatch) -> np.ndarray:
        discounts = self.hp.gamma ** np.arange(batch.n_max)
        return (batch.rewards * self.hp.reward_scale) @ discounts

    def critic_target(self, batch: FragmentBatch, log_prob_values, tail_sel_values):
        """Multi-step soft target: discounted scaled rewards, entropy
        bonuses from the resampled actions, and the clipped twin-target
        bootstrap at the fragment tail."""
        hp = self.hp
        target = self._reward_part(batch)
        for t, logp in enumerate(log_prob_values):
            target = target - hp.entropy_scale * hp.gamma**t * (batch.live[:, t] * logp)
        tail = np.minimum(
            self.v1_target.forward_array(tail_sel_values)[:, 0],
            self.v2_target.forward_array(tail_sel_values)[:, 0],
        )
        return target + batch.tail_coeff * tail

    def critic_loss_tape(self, batch: FragmentBatch, target: np.ndarray):
        x0_tensor = Tensor(batch.x0_feats)
        y = Tensor(target[:, None])
        err1 = ad.sub(self.v1.forward(x0_tensor), y)
        err2 = ad.sub(self.v2.forward(x0_tensor), y)
        return ad.tmean(ad.add(ad.square(err1), ad.square(err2)))

    def critic_loss_value(self, batch: FragmentBatch, target: np.ndarray) -> float:
        e1 = self.v1.forward_array(batch.x0_feats)[:, 0] - target
        e2 = self.v2.forward_array(batch.x0_feats)[:, 0] - target
        return float(np.mean(e1**2 + e2**2))

    def actor_loss_tape(self, batch: FragmentBatch, noises):
        hp = self.hp
        log_probs, tail_sel = self._chain_tape(batch, noises)
        objective = Tensor(self._reward_part(batch))
        for t, logp_t in enumerate(log_probs):
            coeff = hp.entropy_scale * hp.gamma**t * batch.live[:, t]
            objective = ad.sub(objective, ad.mul(Tensor(coeff), logp_t))
        if tail_sel is not None:
            tail = ad.minimum(self.v1.forward(tail_sel), self.v2.forward(tail_sel))
            objective = ad.add(
                objective,
                ad.mul(Tensor(batch.tail_coeff), ad.flatten(ad.slice_cols(tail, 0, 1))),
            )
        return ad.mul(ad.as_tensor(-1.0), ad.tmean(objective))

    def actor_loss_value(self, batch: FragmentBatch, noises) -> float:
        hp = self.hp
        log_probs, tail_sel = self._chain_arrays(batch, noises)
        objective = self._reward_part(batch)
        for t, logp_t in enumerate(log_probs):
            objective = objective - hp.entropy_scale * hp.gamma**t * (
                batch.live[:, t] * logp_t
            )
        tail = np.minimum(self.v1.forward_array(tail_sel)[:, 0],
                          self.v2.forward_array(tail_sel)[:, 0])
        objective = objective + batch.tail_coeff * tail
        return float(-np.mean(objective))

    # -- one gradient step --------------------------------------------------------

    def update(self, memory: ReplayMemory, rng):
        """One resampling pass builds the actor tape; its action values
        (identical to a tape-free replay of the same noises) also define
        the critic target, so both losses share the construction."""
        hp = self.hp
        batch = self.collect_batch(memory, rng)
        noises = self.make_noises(batch, rng)

        log_probs, tail_sel = self._chain_tape(batch, noises)
        objective = Tensor(self._reward_part(batch))
        for t, logp_t in enumerate(log_probs):
            coeff = hp.entropy_scale * hp.gamma**t * batch.live[:, t]
            objective = ad.sub(objective, ad.mul(Tensor(coeff), logp_t))
        logp_values = [lp.value for lp in log_probs]
        if tail_sel is not None:
            tail = ad.minimum(self.v1.forward(tail_sel), self.v2.forward(tail_sel))
            objective = ad.add(
                objective,
                ad.mul(Tensor(batch.tail_coeff), ad.flatten(ad.slice_cols(tail, 0, 1))),
            )
            tail_sel_values = tail_sel.value
        else:
            tail_sel_values = np.zeros_like(batch.x0_feats)
        actor_loss = ad.mul(ad.as_tensor(-1.0), ad.tmean(objective))

        target = self.critic_target(batch, logp_values, tail_sel_values)
        critic_loss = self.critic_loss_tape(batch, target)

        # walk the actor tape before any parameter moves (its closures read
        # the live weight arrays); the critic gradients it deposits on the
        # way are cleared before the critic's own backward pass
        self.opt_policy.zero_grad()
        backward(actor_loss)
        self.opt_policy.step()

        self.opt_critic.zero_grad()
        backward(critic_loss)
        self.opt_critic.step()

        polyak_update(self.v1_target.parameters(), self.v1.parameters(), hp.tau)
        polyak_update(self.v2_target.parameters(), self.v2.parameters(), hp.tau)
        return {
            "critic_loss": float(critic_loss.value),
            "actor_loss": float(actor_loss.value),
            "mean_n": float(batch.lengths.mean()),
        }


# ---------------------------------------------------------------------------
# Soft actor-critic baseline (1-step action-value backup)
# ---------------------------------------------------------------------------

@dataclass
class TransitionBatch:
    x_feats: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    x_next_feats: np.ndarray
    done: np.ndarray
    target: np.ndarray | None = None
    actor_noise: np.ndarray | None = None


class SacAgent:
    name = "sac"

    def __init__(self, codec: ObservationCodec, hp: Hyperparams, rng):
        self.codec = codec
        self.hp = hp
        self.policy = GaussianMlpPolicy(codec, hp, rng)
        in_dim = codec.dim + codec.action_dim
        self.q1 = Mlp([in_dim, *hp.hidden, 1], rng, activation=hp.activation)
        self.q2 = Mlp([in_dim, *hp.hidden, 1], rng, activation=hp.activation)
        self.q1_target = self.q1.clone()
        self.q2_target = self.q2.clone()
        self.opt_policy = Adam(self.policy.net.parameters(), lr=hp.learning_rate)
        self.opt_critic = Adam(self.q1.parameters() + self.q2.parameters(),
                               lr=hp.learning_rate)

    def act(self, x, rng):
        action, _ = self.policy.sample(x, rng)
        return action

    def act_deterministic(self, x):
        return self.policy.mean_action(x)

    def collect_batch(self, memory: ReplayMemory, rng) -> TransitionBatch:
        rows = [memory.sample_transition_rows(rng) for _ in range(self.hp.batch_size)]
        return TransitionBatch(
            x_feats=np.stack([r[0].feats for r in rows]),
            actions=np.stack([np.asarray(r[0].action, dtype=float).ravel() for r in rows]),
            rewards=np.array([r[1].reward for r in rows]),
            x_next_feats=np.stack([r[1].feats for r in rows]),
            done=np.array([r[1].terminal for r in rows], dtype=float),
        )

    def prepare_batch(self, batch: TransitionBatch, rng):
        hp = self.hp
        a_next, logp_next, _ = self.policy.sample_batch(batch.x_next_feats, rng)
        q_in_next = np.concatenate([batch.x_next_feats, a_next], axis=1)
        q_tail = np.minimum(
            self.q1_target.forward_array(q_in_next)[:, 0],
            self.q2_target.forward_array(q_in_next)[:, 0],
        )
        batch.target = hp.reward_scale * batch.rewards + hp.gamma * (1.0 - batch.done) * (
            q_tail - hp.entropy_scale * logp_next
        )
        batch.actor_noise = rng.standard_normal(
            (batch.x_feats.shape[0], self.codec.action_dim)
        )
        return batch

    def critic_loss_tape(self, batch: TransitionBatch):
        q_in = Tensor(np.concatenate([batch.x_feats, batch.actions], axis=1))
        y = Tensor(batch.target[:, None])
        err1 = ad.sub(self.q1.forward(q_in), y)
        err2 = ad.sub(self.q2.forward(q_in), y)
        return ad.tmean(ad.add(ad.square(err1), ad.square(err2)))

    def critic_loss_value(self, batch: TransitionBatch) -> float:
        q_in = np.concatenate([batch.x_feats, batch.actions], axis=1)
        e1 = self.q1.forward_array(q_in)[:, 0] - batch.target
        e2 = self.q2.forward_array(q_in)[:, 0] - batch.target
        return float(np.mean(e1**2 + e2**2))

    def actor_loss_tape(self, batch: TransitionBatch):
        hp = self.hp
        feats_t = Tensor(batch.x_feats)
        mean, log_std = self.policy.heads_tape(feats_t)
        a_new, logp_new = reparameterized_gaussian_sample(mean, log_std, batch.actor_noise)
        q_in_new = ad.concat([feats_t, a_new], axis=1)
        q_min = ad.minimum(self.q1.forward(q_in_new), self.q2.forward(q_in_new))
        return ad.tmean(
            ad.sub(ad.mul(ad.as_tensor(hp.entropy_scale), logp_new),
                   ad.slice_cols(q_min, 0, 1))
        )

    def actor_loss_value(self, batch: TransitionBatch) -> float:
        hp = self.hp
        a_new, logp_new = self.policy.actions_from_noise(batch.x_feats, batch.actor_noise)
        q_in_new = np.concatenate([batch.x_feats, a_new], axis=1)
        q_min = np.minimum(self.q1.forward_array(q_in_new)[:, 0],
                           self.q2.forward_array(q_in_new)[:, 0])
        return float(np.mean(hp.entropy_scale * logp_new - q_min))

    def update(self, memory: ReplayMemory, rng):
        hp = self.hp
        batch = self.prepare_batch(self.collect_batch(memory, rng), rng)

        self.opt_critic.zero_grad()
        critic_loss = self.critic_loss_tape(batch)
        backward(critic_loss)
        self.opt_critic.step()

        self.opt_policy.zero_grad()
        actor_loss = self.actor_loss_tape(batch)
        backward(actor_loss)
        self.opt_policy.step()

        polyak_update(self.q1_target.parameters(), self.q1.parameters(), hp.tau)
        polyak_update(self.q2_target.parameters(), self.q2.parameters(), hp.tau)
        return {
            "critic_loss": float(critic_loss.value),
            "actor_loss": float(actor_loss.value),
            "mean_n": 1.0,
        }


def make_agent(agent_id: str, task, hp: Hyperparams, rng):
    """Agent factory; 'rtac' is the delay-correcting agent pinned to
    1-step fragments (its constant alpha=0, beta=1 channel makes the
    validity length 1 anyway), 'sac-naive' drops the augmentation."""
    if agent_id == "dcac":
        return DcacAgent(ObservationCodec(task), hp, rng)
    if agent_id == "rtac":
        return DcacAgent(ObservationCodec(task), replace(hp, fixed_n=1), rng)
    if agent_id == "sac":
        return SacAgent(ObservationCodec(task), hp, rng)
    if agent_id == "sac-naive":
        codec = ObservationCodec(task, include_buffer=False, include_delays=False,
                                 include_kappa=False)
        return SacAgent(codec, hp, rng)
    raise ConfigError(f"unknown agent id {agent_id!r}")


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def evaluate(agent, channel_factory, episodes: int, rng, deterministic=True,
             max_ticks=100_000) -> float:
    """Mean undiscounted return over fresh evaluation episodes."""
    total = 0.0
    for _ in range(episodes):
        channel = channel_factory()
        x = channel.reset(rng)
        ret = 0.0
        for _ in range(max_ticks):
            a = agent.act_deterministic(x) if deterministic else agent.act(x, rng)
            x, r, done = channel.step(a, rng)
            ret += r
            if done:
                break
        total += ret
    return total / episodes


def train(channel_factory, agent, hp: Hyperparams, steps: int, seed: int,
          metrics_path=None):
    """Interleave channel stepping with gradient updates.

    Emits one metrics row per evaluation:
    (step, eval_return, critic_loss, actor_loss, mean_n, alpha_mean, beta_mean).
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7261]))
    channel = channel_factory()
    memory = ReplayMemory(hp.replay_capacity)
    codec = agent.codec
    x = channel.reset(rng)
    memory.start_episode(x, feats=codec.encode(x))
    d = codec.action_dim
    rows = []
    losses = {"critic_loss": float("nan"), "actor_loss": float("nan"), "mean_n": 0.0}
    alpha_sum = beta_sum = 0.0
    for step in range(1, steps + 1):
        if step <= hp.warmup_samples:
            action = rng.uniform(-1.0, 1.0, d)
        else:
            action = agent.act(x, rng)
        x, reward, done = channel.step(action, rng)
        memory.record(action, reward, x, done, feats=codec.encode(x))
        alpha_sum += x.alpha
        beta_sum += x.beta
        if done:
            x = channel.reset(rng)
            memory.start_episode(x, feats=codec.encode(x))
        if step > hp.warmup_samples:
            for _ in range(hp.grad_steps_per_env_step):
                losses = agent.update(memory, rng)
        if step % hp.eval_every == 0:
            eval_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE7A1, step]))
            eval_return = evaluate(agent, channel_factory, hp.eval_episodes, eval_rng)
            rows.append(
                (step, eval_return, losses["critic_loss"], losses["actor_loss"],
                 losses["mean_n"], alpha_sum / step, beta_sum / step)
            )
    if metrics_path is not None:
        write_metrics(rows, metrics_path)
    return rows


def write_metrics(rows, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,eval_return,critic_loss,actor_loss,mean_n,alpha_mean,beta_mean\n")
        for step, ret, cl, al, mn, am, bm in rows:
            fh.write(f"{step},{float(ret)!r},{float(cl)!r},{float(al)!r},"
                     f"{float(mn)!r},{float(am)!r},{float(bm)!r}\n")
