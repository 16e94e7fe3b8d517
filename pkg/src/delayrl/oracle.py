"""Exact computation on small finite delayed MDPs.

Builds the full augmented-state transition tensor (expanding the
variable-step update recursion without sampling), enumerates n-step
trajectory distributions, evaluates policies by (soft) value iteration,
and applies the resampling operator symbolically so that the
off-policy-to-on-policy transformation can be certified pointwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .core_mdp import FiniteMDP
from .delay_channel import ActionBuffer, AugmentedState, DelayProcess
from .errors import CapacityError, ContractViolation

SIZE_GUARD = 10**6


def f_delta_exact(base: FiniteMDP, p_beta: DelayProcess, obs: int, buffer: tuple,
                  alpha: int, beta: int, action: int, delta: int) -> dict:
    """Exact distribution of the variable-step update: maps
    (obs', beta', accumulated reward) to probability.

    delta = -1 is the repeat case (point mass on the inputs with zero
    reward); delta >= 0 expands delta+1 undelayed steps by dynamic
    programming over the recursion depth, rechaining the action delay at
    every level.
    """
    if delta < -1:
        raise ContractViolation(f"delta={delta} below -1")
    if delta == -1:
        return {(obs, beta, 0.0): 1.0}
    cur = {(obs, beta, 0.0): 1.0}
    for d in range(delta + 1):
        nxt: dict = {}
        for (s, b, r), q in cur.items():
            probs_b = p_beta.probs_next(b)
            for b_next in np.nonzero(probs_b > 0)[0]:
                b_next = int(b_next)
                if b_next < 1:
                    raise ContractViolation("action delay support must stay >= 1")
                index = alpha - d + b_next
                if index == 0:
                    act = action
                elif 1 <= index <= len(buffer):
                    act = buffer[index - 1]
                else:
                    raise ContractViolation(
                        f"buffer index {index} outside 0..{len(buffer)}"
                    )
                qb = q * probs_b[b_next]
                row = base.trans[s, act]
                reward = r + base.reward[s, act]
                for s_next in np.nonzero(row > 0)[0]:
                    key = (int(s_next), b_next, reward)
                    nxt[key] = nxt.get(key, 0.0) + qb * row[s_next]
        cur = nxt
    return cur


class AugmentedFiniteMDP:
    """Dense enumeration of a randomly delayed finite MDP.

    States are tuples (s, u, alpha, beta) with u a K-tuple of action
    indices, bijected onto dense indices. Transitions map (state index,
    action) to a merged list of (next index, reward atom, probability).
    Reward atoms are exact sums of base rewards accumulated in recursion
    order, so trajectory-distribution comparisons are exact.
    """

    def __init__(self, base, p_alpha, p_beta, max_alpha, max_beta, states, index, trans):
        self.base = base
        self.p_alpha = p_alpha
        self.p_beta = p_beta
        self.max_alpha = max_alpha
        self.max_beta = max_beta
        self.capacity = max_alpha + max_beta
        self.states = states
        self.index = index
        self.trans = trans
        self.num_states = len(states)
        self.num_actions = base.num_actions
        self._aug_cache = [None] * len(states)

    def state(self, i: int) -> AugmentedState:
        cached = self._aug_cache[i]
        if cached is None:
            s, u, alpha, beta = self.states[i]
            cached = AugmentedState(s, ActionBuffer(u), alpha, beta)
            self._aug_cache[i] = cached
        return cached

    def index_of(self, x: AugmentedState) -> int:
        return self.index[(x.obs, x.buffer.entries, x.alpha, x.beta)]

    def initial_state_index(self, s0: int | None = None, null_action: int = 0) -> int:
        if s0 is None:
            s0 = int(np.argmax(self.base.init))
        u = (null_action,) * self.capacity
        return self.index[(s0, u, self.max_alpha, self.max_beta)]


def build_augmented(base: FiniteMDP, p_alpha: DelayProcess, p_beta: DelayProcess,
                    max_alpha: int, max_beta: int) -> AugmentedFiniteMDP:
    """Expand the delayed MDP over `base` into an exact tabular MDP."""
    if np.any(base.terminal):
        raise ValueError("the enumeration oracle requires a terminal-free base MDP")
    if max_beta < 1:
        raise ValueError("max_beta must be at least 1")
    if p_alpha.max_delay > max_alpha or p_beta.max_delay > max_beta:
        raise ValueError("delay process maxima exceed the declared bounds")
    capacity = max_alpha + max_beta

    def closure(proc, start):
        reach = {start}
        frontier = [start]
        while frontier:
            d = frontier.pop()
            for d_next in proc.support_next(d):
                if d_next not in reach:
                    reach.add(d_next)
                    frontier.append(d_next)
        return sorted(reach)

    # delays start at their maxima; only values reachable from there exist
    alphas = closure(p_alpha, max_alpha)
    betas = closure(p_beta, max_beta)
    if any(a > max_alpha for a in alphas) or any(b > max_beta for b in betas):
        raise ValueError("delay processes reach values above the declared maxima")
    if any(b < 1 for b in betas):
        raise ValueError("p_beta must keep action delays >= 1")
    # observation delays may grow by at most one per step
    for alpha in alphas:
        if any(d > alpha + 1 for d in p_alpha.support_next(alpha)):
            raise ValueError(
                f"p_alpha(.|{alpha}) has mass above {alpha + 1}; observation "
                "delays can grow by at most one"
            )
    total = base.num_states * base.num_actions**capacity * len(alphas) * len(betas)
    if total > SIZE_GUARD:
        raise CapacityError(f"{total} augmented states exceed the {SIZE_GUARD} guard")

    states = []
    index = {}
    for s in range(base.num_states):
        for u in product(range(base.num_actions), repeat=capacity):
            for alpha in alphas:
                for beta in betas:
                    index[(s, u, alpha, beta)] = len(states)
                    states.append((s, u, alpha, beta))

    trans = {}
    f_cache = {}
    for i, (s, u, alpha, beta) in enumerate(states):
        alpha_probs = p_alpha.probs_next(alpha)
        for a in range(base.num_actions):
            u_next = (a,) + u[:-1]
            out = {}
            for alpha_next in np.nonzero(alpha_probs > 0)[0]:
                alpha_next = int(alpha_next)
                pa = alpha_probs[alpha_next]
                delta = alpha - alpha_next
                key = (s, u, alpha, beta, a, delta)
                fdist = f_cache.get(key)
                if fdist is None:
                    fdist = f_delta_exact(base, p_beta, s, u, alpha, beta, a, delta)
                    f_cache[key] = fdist
                for (s_next, beta_next, reward), pf in fdist.items():
                    j = index[(s_next, u_next, alpha_next, beta_next)]
                    k = (j, reward)
                    out[k] = out.get(k, 0.0) + pa * pf
            mass = sum(out.values())
            if abs(mass - 1.0) > 1e-12:
                raise ContractViolation(
                    f"transition row for state {i} action {a} sums to {mass!r}"
                )
            trans[(i, a)] = tuple(sorted(out.items()))
    return AugmentedFiniteMDP(base, p_alpha, p_beta, max_alpha, max_beta,
                              states, index, trans)


# ---------------------------------------------------------------------------
# Trajectory distributions
# ---------------------------------------------------------------------------

@dataclass
class TrajectoryDistribution:
    """Exact probabilities over length-n trajectories, keyed by the full
    ((state index, reward atom), ...) sequence."""

    horizon: int
    table: dict

    def total(self) -> float:
        return sum(self.table.values())

    def marginal_drop_last(self) -> "TrajectoryDistribution":
        out: dict = {}
        for key, p in self.table.items():
            short = key[:-1]
            out[short] = out.get(short, 0.0) + p
        return TrajectoryDistribution(self.horizon - 1, out)

    def max_abs_difference(self, other: "TrajectoryDistribution") -> float:
        keys = set(self.table) | set(other.table)
        return max(
            (abs(self.table.get(k, 0.0) - other.table.get(k, 0.0)) for k in keys),
            default=0.0,
        )


def _policy_action_probs(aug: AugmentedFiniteMDP, pi, i: int) -> np.ndarray:
    x = aug.state(i)
    if hasattr(pi, "probs"):
        return np.asarray(pi.probs(x), dtype=float)
    # point-mass policies expose only sample/log_prob
    probs = np.zeros(aug.num_actions)
    probs[int(pi.action)] = 1.0
    return probs


def enumerate_p_n(aug: AugmentedFiniteMDP, pi, x0: int, n: int) -> TrajectoryDistribution:
    """Exact n-step state-reward distribution from state index x0 under pi."""
    table: dict = {}

    def recurse(i: int, depth: int, prefix: tuple, prob: float):
        if depth == n:
            table[prefix] = table.get(prefix, 0.0) + prob
            if len(table) > SIZE_GUARD:
                raise CapacityError("trajectory support exceeds the size guard")
            return
        probs = _policy_action_probs(aug, pi, i)
        for a in np.nonzero(probs > 0)[0]:
            pa = probs[a]
            for (j, reward), pt in aug.trans[(i, int(a))]:
                recurse(j, depth + 1, prefix + ((j, reward),), prob * pa * pt)

    recurse(x0, 0, (), 1.0)
    return TrajectoryDistribution(n, table)


def apply_sigma_exact(aug: AugmentedFiniteMDP, pi, mu, x0: int, n: int):
    """Push the mu-trajectory distribution through the resampling operator
    and enumerate the pi-trajectory distribution from the same start.

    Returns (lhs, rhs): lhs is the exact expectation over mu-trajectories
    of the resampling operator's output distribution, rhs the direct
    on-policy enumeration. They agree pointwise when the validity
    condition holds over the entire mu-support (checked; violations raise
    naming the offending step).
    """
    mu_dist = enumerate_p_n(aug, mu, x0, n)
    for key in mu_dist.table:
        for t, (j, _r) in enumerate(key, start=1):
            s, u, alpha, beta = aug.states[j]
            if alpha + beta < t:
                raise ContractViolation(
                    f"validity condition violated at step t={t}: "
                    f"alpha+beta={alpha + beta} < {t}"
                )

    lhs: dict = {}

    def resample(prefix_key, t, prev_idx, mu_key, prob):
        if t > n:
            lhs[prefix_key] = lhs.get(prefix_key, 0.0) + prob
            return
        j, reward = mu_key[t - 1]
        s, _u, alpha, beta = aug.states[j]
        _s0, u_prev, _a0, _b0 = aug.states[prev_idx]
        probs = _policy_action_probs(aug, pi, prev_idx)
        for a in np.nonzero(probs > 0)[0]:
            u_new = (int(a),) + u_prev[:-1]
            j_new = aug.index[(s, u_new, alpha, beta)]
            resample(prefix_key + ((j_new, reward),), t + 1, j_new, mu_key,
                     prob * probs[a])

    for mu_key, q in mu_dist.table.items():
        resample((), 1, x0, mu_key, q)

    rhs = enumerate_p_n(aug, pi, x0, n)
    return TrajectoryDistribution(n, lhs), rhs


# ---------------------------------------------------------------------------
# Policy evaluation
# ---------------------------------------------------------------------------

def policy_matrices(aug: AugmentedFiniteMDP, pi):
    """Dense transition matrix and expected one-step reward under pi."""
    n = aug.num_states
    M = np.zeros((n, n))
    r = np.zeros(n)
    for i in range(n):
        probs = _policy_action_probs(aug, pi, i)
        for a in np.nonzero(probs > 0)[0]:
            pa = probs[a]
            for (j, reward), pt in aug.trans[(i, int(a))]:
                M[i, j] += pa * pt
                r[i] += pa * pt * reward
    return M, r


def policy_entropy(aug: AugmentedFiniteMDP, pi) -> np.ndarray:
    h = np.zeros(aug.num_states)
    for i in range(aug.num_states):
        probs = _policy_action_probs(aug, pi, i)
        nz = probs[probs > 0]
        h[i] = -float(np.sum(nz * np.log(nz)))
    return h


def value_iteration(aug: AugmentedFiniteMDP, pi, gamma: float, tol: float) -> np.ndarray:
    """Iterate the policy-evaluation Bellman operator to sup-norm tol."""
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1) for convergence")
    if tol <= 0:
        raise ValueError("tol must be positive")
    M, r = policy_matrices(aug, pi)
    v = np.zeros(aug.num_states)
    for _ in range(10**6):
        v_next = r + gamma * (M @ v)
        if np.max(np.abs(v_next - v)) <= tol:
            return v_next
        v = v_next
    raise ArithmeticError("value iteration did not converge within 10^6 sweeps")


def soft_value_iteration(aug: AugmentedFiniteMDP, pi, gamma: float,
                         entropy_scale: float, tol: float) -> np.ndarray:
    """Fixed point of the entropy-augmented evaluation operator: each sweep
    adds the policy's entropy bonus on top of the expected reward."""
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1) for convergence")
    if tol <= 0:
        raise ValueError("tol must be positive")
    M, r = policy_matrices(aug, pi)
    bonus = r + entropy_scale * policy_entropy(aug, pi)
    v = np.zeros(aug.num_states)
    for _ in range(10**6):
        v_next = bonus + gamma * (M @ v)
        if np.max(np.abs(v_next - v)) <= tol:
            return v_next
        v = v_next
    raise ArithmeticError("soft value iteration did not converge within 10^6 sweeps")


def policy_value_exact(aug: AugmentedFiniteMDP, pi, gamma: float,
                       entropy_scale: float = 0.0) -> np.ndarray:
    """Solve the evaluation fixed point directly, then polish with a few
    Bellman sweeps so the residual sits at the rounding floor."""
    M, r = policy_matrices(aug, pi)
    target = r if entropy_scale == 0.0 else r + entropy_scale * policy_entropy(aug, pi)
    v = np.linalg.solve(np.eye(aug.num_states) - gamma * M, target)
    for _ in range(60):
        v_next = target + gamma * (M @ v)
        if np.array_equal(v_next, v):
            break
        v = v_next
    return v


def steady_state(aug: AugmentedFiniteMDP, pi, tol: float = 1e-14) -> np.ndarray:
    """Stationary distribution of the pi-chain by power iteration."""
    M, _ = policy_matrices(aug, pi)
    dist = np.full(aug.num_states, 1.0 / aug.num_states)
    for _ in range(10**6):
        nxt = dist @ M
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - dist)) <= tol:
            return nxt
        dist = nxt
    raise ArithmeticError("power iteration did not converge within 10^6 sweeps")
