"""Partial trajectory resampling: the validity condition and the operator
that rewrites stored action buffers under the current policy.

A stored sub-trajectory stays usable under a new policy exactly as long as
every recorded step's total delay covers its depth (alpha_t + beta_t >= t):
none of the observations, delays, or rewards in such a fragment were
influenced by the actions being replaced, so only the buffers need
rewriting.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core_mdp import Trajectory, policy_sample
from .errors import ContractViolation, EmptyReplayError


@dataclass(frozen=True)
class FragmentStep:
    state: object  # AugmentedState
    reward: float
    terminal: bool


@dataclass(frozen=True)
class Fragment:
    """A start state plus n following (state, reward, terminal) steps with
    terminals allowed only at the final position. On-policy estimators run
    on any fragment; the resampling operator additionally needs the delay
    condition checked by ValidSubTrajectory."""

    start: object
    steps: tuple

    def __post_init__(self):
        for t, step in enumerate(self.steps, start=1):
            if step.terminal and t != len(self.steps):
                raise ContractViolation(f"interior terminal at step {t}")

    @property
    def n(self) -> int:
        return len(self.steps)

    @property
    def ends_terminal(self) -> bool:
        return bool(self.steps) and self.steps[-1].terminal


@dataclass(frozen=True)
class ValidSubTrajectory(Fragment):
    """Fragment whose every step satisfies alpha_t + beta_t >= t, so none
    of its observations depend on the actions a resampling would replace."""

    def __post_init__(self):
        super().__post_init__()
        for t, step in enumerate(self.steps, start=1):
            if step.state.alpha + step.state.beta < t:
                raise ContractViolation(
                    f"step {t} has total delay {step.state.alpha + step.state.beta} < {t}"
                )


def validity_length(traj: Trajectory, start_index: int) -> int:
    """Largest n such that the n records after `start_index` all satisfy
    alpha_t + beta_t >= t with no interior terminal, capped at the buffer
    capacity K."""
    records = traj.records
    if not 0 <= start_index < len(records) + 1:
        raise ValueError(f"start_index {start_index} out of range")
    start_state = traj.start if start_index == 0 else records[start_index - 1].state
    if start_index > 0 and records[start_index - 1].terminal:
        return 0
    cap = start_state.buffer.capacity
    n = 0
    for t in range(1, len(records) - start_index + 1):
        rec = records[start_index + t - 1]
        if rec.state.alpha + rec.state.beta < t or n >= cap:
            break
        n = t
        if rec.terminal:
            break
    return n


def fragment_from(traj: Trajectory, start_index: int, n: int) -> ValidSubTrajectory:
    start_state = traj.start if start_index == 0 else traj.records[start_index - 1].state
    steps = tuple(
        FragmentStep(rec.state, rec.reward, rec.terminal)
        for rec in traj.records[start_index : start_index + n]
    )
    return ValidSubTrajectory(start_state, steps)


def resample_partial(pi, x0, traj: ValidSubTrajectory, rng):
    """Rewrite the fragment's buffers with fresh actions from `pi`.

    Observations, delays, and rewards are copied verbatim; buffer t becomes
    (a_{t-1}, u*_{t-1}[:-1]) with a_{t-1} drawn from pi at the previously
    resampled state. Returns the resampled fragment and the log
    probabilities of the drawn actions (first conditioned on x0).
    """
    prev_state = x0
    new_steps = []
    log_probs = []
    for step in traj.steps:
        action, logp = policy_sample(pi, prev_state, rng)
        new_state = type(step.state)(
            obs=step.state.obs,
            buffer=prev_state.buffer.push(action),
            alpha=step.state.alpha,
            beta=step.state.beta,
            kappa=step.state.kappa,
        )
        new_steps.append(FragmentStep(new_state, step.reward, step.terminal))
        log_probs.append(logp)
        prev_state = new_state
    return ValidSubTrajectory(x0, tuple(new_steps)), log_probs


def sample_valid_fragment(memory, rng, fixed_n: int | None = None):
    """Draw a start uniformly over stored steps that have at least one
    valid successor, and return the maximal valid fragment from it (or a
    truncation to fixed_n when requested)."""
    i = memory.sample_start(rng)
    x0, steps = memory.fragment_at(i, fixed_n=fixed_n)
    return x0, ValidSubTrajectory(x0, steps)
