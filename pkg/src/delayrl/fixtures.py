"""Shipped verification fixtures: small finite MDPs, delay configurations,
and behavior/current policy pairs for the exact resampling certificate.

The matrix crosses {2,3}-state bases with constant(1,1), constant(1,2), and
random (max_alpha=1, max_beta=2) delays, under deterministic and stochastic
mu != pi pairs. Each cell certifies the largest n its delays keep valid:
with independent delay components, a random-delay trajectory can always
contain a step with total delay 1, so the random cells certify n=1 and the
constant cells carry the deeper n=2 and n=3 checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_mdp import ConstantPolicy, FiniteMDP, TabularPolicy
from .delay_channel import DelayProcess
from .oracle import apply_sigma_exact, build_augmented


def base_mdp(num_states: int) -> FiniteMDP:
    """Ergodic base with all-positive rows and distinct rewards."""
    rows = {
        2: np.array(
            [
                [[0.75, 0.25], [0.25, 0.75]],
                [[0.4, 0.6], [0.9, 0.1]],
            ]
        ),
        3: np.array(
            [
                [[0.6, 0.25, 0.15], [0.2, 0.5, 0.3]],
                [[0.1, 0.7, 0.2], [0.3, 0.3, 0.4]],
                [[0.25, 0.25, 0.5], [0.5, 0.3, 0.2]],
            ]
        ),
    }
    trans = rows[num_states]
    n_s, n_a = trans.shape[0], trans.shape[1]
    reward = np.array(
        [[(3 * s + 2 * a + 1) / 8.0 for a in range(n_a)] for s in range(n_s)]
    )
    init = np.zeros(n_s)
    init[0] = 1.0
    return FiniteMDP(trans, reward, init, [False] * n_s)


def chain_base(num_states: int = 3) -> FiniteMDP:
    """Deterministic two-action walk on a line, ergodic via wrap-around."""
    n = num_states
    trans = np.zeros((n, 2, n))
    reward = np.zeros((n, 2))
    for s in range(n):
        trans[s, 0, (s - 1) % n] = 1.0
        trans[s, 1, (s + 1) % n] = 1.0
        reward[s, 1] = 1.0
    init = np.zeros(n)
    init[0] = 1.0
    return FiniteMDP(trans, reward, init, [False] * n)


def random_delay_processes():
    p_alpha = DelayProcess.conditional([[0.7, 0.3], [0.4, 0.6]])
    p_beta = DelayProcess.conditional(
        [[0.0, 1.0, 0.0], [0.0, 0.6, 0.4], [0.0, 0.5, 0.5]]
    )
    return p_alpha, p_beta


def delay_configs():
    p_alpha_r, p_beta_r = random_delay_processes()
    return (
        ("constant(1,1)", DelayProcess.constant(1), DelayProcess.constant(1), 1, 1, 2),
        ("constant(1,2)", DelayProcess.constant(1), DelayProcess.constant(2), 1, 2, 3),
        ("random(1,2)", p_alpha_r, p_beta_r, 1, 2, 1),
    )


def policy_pairs(num_states: int, num_actions: int = 2):
    det = (ConstantPolicy(0), ConstantPolicy(1))
    mu_rows = np.array([[0.8 - 0.1 * s, 0.2 + 0.1 * s] for s in range(num_states)])
    mu = TabularPolicy(mu_rows, conditioning="obs")
    # pi conditions on the newest buffered action so each resampled action
    # feeds the next action distribution
    pi_rows = np.array(
        [
            [0.3 + 0.05 * r, 0.7 - 0.05 * r]
            for r in range(num_states * num_actions)
        ]
    )
    pi = TabularPolicy(pi_rows, conditioning="obs+u1", num_obs=num_states)
    return (("deterministic", det[0], det[1]), ("stochastic", mu, pi))


@dataclass(frozen=True)
class Theorem1Fixture:
    name: str
    aug: object
    mu: object
    pi: object
    x0: int
    n: int


def theorem1_fixtures():
    fixtures = []
    for num_states in (2, 3):
        base = base_mdp(num_states)
        for delay_name, p_alpha, p_beta, max_a, max_b, n_max in delay_configs():
            aug = build_augmented(base, p_alpha, p_beta, max_a, max_b)
            x0 = aug.initial_state_index()
            for pair_name, mu, pi in policy_pairs(num_states):
                name = f"{num_states}state/{delay_name}/{pair_name}"
                for n in range(1, n_max + 1):
                    fixtures.append(Theorem1Fixture(f"{name}/n={n}", aug, mu, pi, x0, n))
    return fixtures


def fig4_trajectory():
    """1D-world walkthrough fixture: K=3, behavior policy 'always left',
    delays chosen so the resampling condition holds exactly up to n=2."""
    from .core_mdp import Trajectory
    from .delay_channel import ActionBuffer, AugmentedState

    L = 0
    traj = Trajectory(
        start=AugmentedState(3, ActionBuffer((L, L, L)), 1, 2),
        behavior_policy_id="always-left",
    )
    delays = [(0, 1), (1, 1), (1, 1)]
    positions = [2, 1, 0]
    for (alpha, beta), pos in zip(delays, positions):
        traj.append(AugmentedState(pos, ActionBuffer((L, L, L)), alpha, beta), 0.0, False)
    return traj


def fig4_walkthrough():
    """Resample the walkthrough fixture under 'always right' and lay the
    before/after buffers out for display and assertions."""
    from .core_mdp import ConstantPolicy
    from .resampling import fragment_from, resample_partial, validity_length

    traj = fig4_trajectory()
    n = validity_length(traj, 0)
    fragment = fragment_from(traj, 0, n)
    resampled, log_probs = resample_partial(
        ConstantPolicy(1), fragment.start, fragment, np.random.default_rng(0)
    )
    rows = []
    for t, (old, new) in enumerate(zip(fragment.steps, resampled.steps), start=1):
        rows.append({
            "t": t,
            "obs": old.state.obs,
            "alpha": old.state.alpha,
            "beta": old.state.beta,
            "reward": old.reward,
            "stored": old.state.buffer.entries,
            "resampled": new.state.buffer.entries,
        })
    return {"n": n, "rows": rows, "log_probs": log_probs}


def run_theorem1_matrix():
    """Exact resampling certificate over the shipped matrix.

    Returns rows (fixture_name, max_abs_error, passed) with the pointwise
    tolerance 1e-12.
    """
    rows = []
    for fx in theorem1_fixtures():
        lhs, rhs = apply_sigma_exact(fx.aug, fx.pi, fx.mu, fx.x0, fx.n)
        err = lhs.max_abs_difference(rhs)
        rows.append((fx.name, err, err <= 1e-12))
    return rows
