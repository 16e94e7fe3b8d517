"""Multi-step state-value estimators, their entropy-augmented variants, the
1-step action-value baseline, and exact bias measurement against the
enumeration oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .resampling import Fragment, FragmentStep, ValidSubTrajectory


# ---------------------------------------------------------------------------
# Value-function adapters
# ---------------------------------------------------------------------------

class TabularValueFunction:
    """Vector of values over an AugmentedFiniteMDP's dense state indices."""

    kind = "tabular"

    def __init__(self, aug, values):
        self.aug = aug
        self.values = np.asarray(values, dtype=float)

    def value(self, x) -> float:
        return float(self.values[self.aug.index_of(x)])


class ConstantBiasValueFunction:
    """Wraps another value function and shifts it by a constant."""

    kind = "constant-bias-injected"

    def __init__(self, base, bias: float):
        self.base = base
        self.bias = float(bias)

    def value(self, x) -> float:
        return self.base.value(x) + self.bias


class FnValueFunction:
    kind = "fn"

    def __init__(self, fn):
        self.fn = fn

    def value(self, x) -> float:
        return float(self.fn(x))


@dataclass(frozen=True)
class EstimateReport:
    estimate: float
    n_used: int
    entropy_terms: tuple
    discount: float


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def v_hat_n(x0, fragment: Fragment, v0, gamma: float) -> float:
    """Discounted reward sum over the fragment plus the bootstrapped tail;
    terminal tails bootstrap with 0."""
    total = 0.0
    scale = 1.0
    for step in fragment.steps:
        total += scale * step.reward
        scale *= gamma
    if fragment.n == 0:
        return total + scale * v0.value(x0)
    if fragment.ends_terminal:
        return total
    return total + scale * v0.value(fragment.steps[-1].state)


def v_hat_soft_n(x0, fragment: ValidSubTrajectory, resampled_log_probs, v0,
                 gamma: float, entropy_scale: float) -> float:
    """v_hat_n with per-step entropy bonuses from the resampled actions'
    log-probabilities (the first conditioned on x0)."""
    if len(resampled_log_probs) != fragment.n:
        raise ValueError(
            f"{len(resampled_log_probs)} log-probs for a fragment of length {fragment.n}"
        )
    total = v_hat_n(x0, fragment, v0, gamma)
    scale = 1.0
    for logp in resampled_log_probs:
        total -= entropy_scale * scale * logp
        scale *= gamma
    return total


def soft_estimate_report(x0, fragment, resampled_log_probs, v0, gamma,
                         entropy_scale) -> EstimateReport:
    est = v_hat_soft_n(x0, fragment, resampled_log_probs, v0, gamma, entropy_scale)
    return EstimateReport(est, fragment.n, tuple(resampled_log_probs), gamma)


def q_hat_1(s_state, a, successor, reward: float, q0, pi, gamma: float) -> float:
    """1-step action-value estimate: reward plus the discounted expected
    next value under pi, computed exactly for enumerable policies."""
    if gamma == 0.0:
        return float(reward)
    if hasattr(pi, "probs"):
        probs = np.asarray(pi.probs(successor), dtype=float)
        exp_next = sum(
            probs[a_next] * q0(successor, a_next)
            for a_next in np.nonzero(probs > 0)[0]
        )
    else:
        exp_next = q0(successor, pi.action)
    return float(reward) + gamma * float(exp_next)


# ---------------------------------------------------------------------------
# Exact expectations against the oracle
# ---------------------------------------------------------------------------

def fragment_from_key(aug, x0_index: int, key) -> Fragment:
    """Materialize an oracle trajectory key into an estimator fragment."""
    steps = tuple(FragmentStep(aug.state(j), reward, False) for j, reward in key)
    return Fragment(aug.state(x0_index), steps)


def expected_v_hat_n(aug, dist, x0_index: int, v0, gamma: float) -> float:
    """Expectation of the actual v_hat_n estimator under an exact
    trajectory distribution from the oracle."""
    x0 = aug.state(x0_index)
    total = 0.0
    for key, p in dist.table.items():
        fragment = fragment_from_key(aug, x0_index, key)
        total += p * v_hat_n(x0, fragment, v0, gamma)
    return total


@dataclass
class BiasFixture:
    """Start state plus policies on an exactly enumerable delayed MDP; mu
    set means expectations run over mu-trajectories pushed through the
    resampling operator."""

    aug: object
    pi: object
    x0: int
    mu: object = None


def measure_bias_reduction(fixture: BiasFixture, injected_bias: float, n: int,
                           gamma: float) -> float:
    """(E[v_hat_n] - v_pi) / injected_bias with v0 = exact v_pi plus the
    injected constant; equals gamma^n by the bias-contraction result."""
    if injected_bias == 0.0:
        raise ValueError("injected_bias must be nonzero")
    from .oracle import apply_sigma_exact, enumerate_p_n, policy_value_exact

    aug, pi, x0 = fixture.aug, fixture.pi, fixture.x0
    v_pi = policy_value_exact(aug, pi, gamma)
    v0 = ConstantBiasValueFunction(TabularValueFunction(aug, v_pi), injected_bias)
    if fixture.mu is None:
        dist = enumerate_p_n(aug, pi, x0, n)
    else:
        dist, _ = apply_sigma_exact(aug, pi, fixture.mu, x0, n)
    expected = expected_v_hat_n(aug, dist, x0, v0, gamma)
    return (expected - float(v_pi[x0])) / injected_bias


def steady_state_bias_ratio(aug, pi, bias_vector, n: int, gamma: float) -> float:
    """E_ss[bias of v_hat_n] / E_ss[bias of v_hat_0] with an arbitrary
    per-state bias vector; the identity predicts gamma^n."""
    from .oracle import policy_matrices, steady_state

    M, _ = policy_matrices(aug, pi)
    b = np.asarray(bias_vector, dtype=float)
    ss = steady_state(aug, pi)
    # bias of v_hat_n at x equals gamma^n * E[b(x_n) | x]
    propagated = b.copy()
    for _ in range(n):
        propagated = M @ propagated
    numerator = gamma**n * float(ss @ propagated)
    denominator = float(ss @ b)
    if denominator == 0.0:
        raise ValueError("bias vector has zero steady-state mean")
    return numerator / denominator
