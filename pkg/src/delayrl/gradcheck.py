"""Finite-difference integrity checks for every composite loss the agents
train on, including the actor loss with backpropagation through a 3-step
resampling chain, on tiny 2x8-unit networks."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .agents import DcacAgent, FragmentBatch, Hyperparams, ObservationCodec, SacAgent, TransitionBatch
from .autodiff import Mlp, Tensor, backward


class _TinyTask:
    """Synthetic codec source: 2-feature observations, 1-D actions,
    max_alpha=1, max_beta=2 (a 3-slot buffer)."""

    obs_dim = 2
    action_dim = 1
    max_alpha = 1
    max_beta = 2

    def obs_features(self, obs):
        return np.asarray(obs, dtype=float)


def _finite_difference(fn, params, h=1e-5):
    grads = []
    for p in params:
        g = np.zeros_like(p.value)
        flat = p.value.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn()
            flat[i] = orig - h
            down = fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def _max_rel_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.zeros_like(n) if a is None else a
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def _grads(loss, params):
    for p in params:
        p.grad = None
    backward(loss)
    return [p.grad for p in params]


def _synthetic_fragment_batch(codec, rng, batch=4, n=3) -> FragmentBatch:
    """Random stored fragment with constant alpha=1, beta=2, so the chain
    depth n=3 stays valid."""
    dim = codec.dim
    x0_feats = rng.normal(size=(batch, dim))
    step_feats = [rng.normal(size=(batch, dim)) for _ in range(n)]
    rewards = rng.normal(size=(batch, n))
    live = np.ones((batch, n))
    tail_mask = [np.zeros(batch) for _ in range(n)]
    tail_mask[n - 1][:] = 1.0
    gamma = 0.99
    tail_mask0 = np.zeros(batch)
    tail_coeff = np.full(batch, gamma**n)
    lengths = np.full(batch, n, dtype=int)
    return FragmentBatch(x0_feats, step_feats, rewards, live, tail_mask,
                         tail_mask0, tail_coeff, lengths)


def _synthetic_transition_batch(codec, rng, batch=6) -> TransitionBatch:
    dim = codec.dim
    b = TransitionBatch(
        x_feats=rng.normal(size=(batch, dim)),
        actions=rng.uniform(-1, 1, size=(batch, codec.action_dim)),
        rewards=rng.normal(size=batch),
        x_next_feats=rng.normal(size=(batch, dim)),
        done=np.zeros(batch),
    )
    return b


def run_gradient_checks(seed=0, tolerance=1e-3):
    """Run the whole suite; returns (name, max relative error, passed)."""
    rng = np.random.default_rng(seed)
    results = []

    # plain network regression loss against finite differences
    net = Mlp([3, 8, 8, 1], rng)
    x = rng.normal(size=(5, 3))
    y = rng.normal(size=(5, 1))
    loss = ad.tmean(ad.square(ad.sub(net.forward(Tensor(x)), Tensor(y))))
    analytic = _grads(loss, net.parameters())
    numeric = _finite_difference(
        lambda: float(np.mean((net.forward_array(x) - y) ** 2)), net.parameters()
    )
    err = _max_rel_error(analytic, numeric)
    results.append(("mlp-regression", err, err < 1e-4))

    task = _TinyTask()
    hp = Hyperparams(hidden=(8, 8))
    codec = ObservationCodec(task)

    # delay-correcting agent: critic loss, then actor loss through the
    # 3-step resampling chain
    agent = DcacAgent(codec, hp, np.random.default_rng(seed + 1))
    batch = _synthetic_fragment_batch(codec, rng)
    noises = agent.make_noises(batch, rng)
    log_probs, tail_sel = agent._chain_arrays(batch, noises)
    target = agent.critic_target(batch, log_probs, tail_sel)

    critic_params = agent.v1.parameters() + agent.v2.parameters()
    loss = agent.critic_loss_tape(batch, target)
    analytic = _grads(loss, critic_params)
    numeric = _finite_difference(lambda: agent.critic_loss_value(batch, target),
                                 critic_params)
    err = _max_rel_error(analytic, numeric)
    results.append(("dcac-critic", err, err < tolerance))

    policy_params = agent.policy.net.parameters()
    loss = agent.actor_loss_tape(batch, noises)
    analytic = _grads(loss, policy_params)
    numeric = _finite_difference(lambda: agent.actor_loss_value(batch, noises),
                                 policy_params)
    err = _max_rel_error(analytic, numeric)
    results.append(("dcac-actor-3step-chain", err, err < tolerance))

    # baseline agent: 1-step action-value losses
    sac = SacAgent(codec, hp, np.random.default_rng(seed + 2))
    tb = _synthetic_transition_batch(codec, rng)
    tb = sac.prepare_batch(tb, rng)
    critic_params = sac.q1.parameters() + sac.q2.parameters()
    loss = sac.critic_loss_tape(tb)
    analytic = _grads(loss, critic_params)
    numeric = _finite_difference(lambda: sac.critic_loss_value(tb), critic_params)
    err = _max_rel_error(analytic, numeric)
    results.append(("sac-critic", err, err < tolerance))

    policy_params = sac.policy.net.parameters()
    loss = sac.actor_loss_tape(tb)
    analytic = _grads(loss, policy_params)
    numeric = _finite_difference(lambda: sac.actor_loss_value(tb), policy_params)
    err = _max_rel_error(analytic, numeric)
    results.append(("sac-actor", err, err < tolerance))

    return results
