"""Undelayed environments, policies, and trajectory containers.

Tabular environments are kept exact (probability tensors validated at
construction) so the enumeration oracle can certify distributional results
without sampling error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, ParseError

PROB_TOL = 1e-12

NEG_INF = float("-inf")


@dataclass(frozen=True)
class EnvStep:
    next_observation: object
    reward: float
    terminal: bool

    def __post_init__(self):
        if not math.isfinite(self.reward):
            raise ValueError(f"non-finite reward {self.reward!r}")


class FiniteMDP:
    """Tabular MDP with state-action rewards r(s, a).

    trans[s, a, s'] is the next-state distribution, validated to sum to 1
    per (s, a) row. init is the initial-state distribution. terminal marks
    absorbing states that must not be stepped.
    """

    def __init__(self, trans, reward, init, terminal):
        trans = np.asarray(trans, dtype=float)
        reward = np.asarray(reward, dtype=float)
        init = np.asarray(init, dtype=float)
        terminal = np.asarray(terminal, dtype=bool)
        if trans.ndim != 3 or trans.shape[0] != trans.shape[2]:
            raise ValueError(f"trans must have shape (S, A, S), got {trans.shape}")
        n_s, n_a, _ = trans.shape
        if reward.shape != (n_s, n_a):
            raise ValueError(f"reward must have shape ({n_s}, {n_a}), got {reward.shape}")
        if init.shape != (n_s,) or terminal.shape != (n_s,):
            raise ValueError("init and terminal must be vectors over states")
        if np.any(trans < -PROB_TOL) or np.any(trans > 1 + PROB_TOL):
            raise ValueError("transition probabilities must lie in [0, 1]")
        if np.any(init < -PROB_TOL) or np.any(init > 1 + PROB_TOL):
            raise ValueError("initial probabilities must lie in [0, 1]")
        row_sums = trans.sum(axis=2)
        bad = np.argwhere(np.abs(row_sums - 1.0) > PROB_TOL)
        # Terminal states never get stepped, so their rows may be anything
        # row-normalized; we still require proper rows for non-terminal states.
        for s, a in bad:
            if not terminal[s]:
                raise ValueError(
                    f"transition row P[{s}][{a}] sums to {row_sums[s, a]!r}, expected 1"
                )
        if abs(init.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"init sums to {init.sum()!r}, expected 1")
        self.trans = trans
        self.reward = reward
        self.init = init
        self.terminal = terminal
        self.num_states = n_s
        self.num_actions = n_a

    def sample_init(self, rng) -> int:
        return int(rng.choice(self.num_states, p=self.init))


def finite_mdp_step(mdp: FiniteMDP, s: int, a: int, rng) -> EnvStep:
    """Draw one transition of the undelayed tabular environment."""
    if not (0 <= s < mdp.num_states and 0 <= a < mdp.num_actions):
        raise ValueError(f"state/action out of range: s={s}, a={a}")
    if mdp.terminal[s]:
        raise ContractViolation(f"cannot step terminal state {s}")
    s_next = int(rng.choice(mdp.num_states, p=mdp.trans[s, a]))
    return EnvStep(s_next, float(mdp.reward[s, a]), bool(mdp.terminal[s_next]))


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

def _actions_equal(a, b) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.array_equal(np.asarray(a), np.asarray(b))
    return a == b


class ConstantPolicy:
    """Point-mass policy that always emits the same action."""

    kind = "deterministic-constant"

    def __init__(self, action):
        self.action = action

    def sample(self, x, rng):
        return self.action, 0.0

    def log_prob(self, x, a) -> float:
        return 0.0 if _actions_equal(a, self.action) else NEG_INF


class TabularPolicy:
    """Stochastic policy with one categorical row per conditioning key.

    conditioning selects which part of the augmented state indexes the
    table: "obs" uses the delayed observation alone, "obs+u1" additionally
    conditions on the most recent buffered action (so resampled buffers
    feed back into later action distributions).
    """

    kind = "tabular-stochastic"

    def __init__(self, table, conditioning="obs", num_obs=None):
        table = np.asarray(table, dtype=float)
        if table.ndim != 2:
            raise ValueError("table must be 2-D (rows x actions)")
        row_sums = table.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > PROB_TOL):
            raise ValueError("every conditional action distribution must sum to 1")
        if np.any(table < 0):
            raise ValueError("action probabilities must be nonnegative")
        if conditioning not in ("obs", "obs+u1"):
            raise ValueError(f"unknown conditioning {conditioning!r}")
        if conditioning == "obs+u1" and num_obs is None:
            raise ValueError("obs+u1 conditioning needs num_obs")
        self.table = table
        self.conditioning = conditioning
        self.num_obs = num_obs
        self.num_actions = table.shape[1]

    @classmethod
    def uniform(cls, num_obs, num_actions, conditioning="obs"):
        rows = num_obs if conditioning == "obs" else num_obs * num_actions
        table = np.full((rows, num_actions), 1.0 / num_actions)
        return cls(table, conditioning=conditioning, num_obs=num_obs)

    def _row(self, x) -> int:
        if self.conditioning == "obs":
            return int(x.obs)
        return int(x.buffer.entries[0]) * self.num_obs + int(x.obs)

    def probs(self, x) -> np.ndarray:
        return self.table[self._row(x)]

    def sample(self, x, rng):
        p = self.probs(x)
        a = int(rng.choice(self.num_actions, p=p))
        return a, math.log(p[a])

    def log_prob(self, x, a) -> float:
        p = self.probs(x)[int(a)]
        return math.log(p) if p > 0.0 else NEG_INF


def policy_sample(pi, x, rng):
    """Draw a ~ pi(.|x); returns (action, log-probability)."""
    action, logp = pi.sample(x, rng)
    if logp == NEG_INF or not math.isfinite(logp):
        raise ContractViolation("sampled action has non-finite log-probability")
    return action, logp


def policy_log_prob(pi, x, a) -> float:
    return pi.log_prob(x, a)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryRecord:
    state: object
    reward: float
    terminal: bool


@dataclass
class Trajectory:
    """Ordered (state, reward, terminal) records after a start state.

    Records mirror the paper-style indexing: record t holds the state
    reached by step t and the reward delivered with it. Appending is the
    only mutation path; a record may not follow a terminal one.
    """

    start: object
    behavior_policy_id: str = ""
    _records: list = field(default_factory=list)

    def append(self, state, reward: float, terminal: bool):
        if self._records and self._records[-1].terminal:
            raise ContractViolation("cannot append past a terminal record")
        self._records.append(TrajectoryRecord(state, float(reward), bool(terminal)))

    @property
    def records(self):
        return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)


# ---------------------------------------------------------------------------
# Plain-text tabular MDP format
# ---------------------------------------------------------------------------

def load_finite_mdp(path) -> FiniteMDP:
    """Read a tabular MDP from the plain-text matrix format.

    Header `states=N actions=M`, one `s a r p0 .. pN-1` line per (s, a),
    then `init p0 .. pN-1` and `terminal b0 .. bN-1`.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    rows = [(i + 1, ln.strip()) for i, ln in enumerate(lines) if ln.strip()]
    if not rows:
        raise ParseError("empty file")
    lineno, header = rows[0]
    parts = header.split()
    try:
        kv = dict(p.split("=", 1) for p in parts)
        n_s = int(kv["states"])
        n_a = int(kv["actions"])
    except (ValueError, KeyError):
        raise ParseError(f"bad header {header!r}, expected 'states=N actions=M'", lineno)
    expected = n_s * n_a
    if len(rows) != 1 + expected + 2:
        raise ParseError(
            f"expected {expected} transition lines plus init and terminal, got {len(rows) - 1}"
        )
    trans = np.zeros((n_s, n_a, n_s))
    reward = np.zeros((n_s, n_a))
    seen = set()
    for lineno, ln in rows[1 : 1 + expected]:
        toks = ln.split()
        if len(toks) != 3 + n_s:
            raise ParseError(f"expected 's a r p0..p{n_s - 1}', got {len(toks)} fields", lineno)
        try:
            s, a = int(toks[0]), int(toks[1])
            r = float(toks[2])
            probs = [float(t) for t in toks[3:]]
        except ValueError as exc:
            raise ParseError(str(exc), lineno)
        if not (0 <= s < n_s and 0 <= a < n_a):
            raise ParseError(f"state/action out of range: {s} {a}", lineno)
        if (s, a) in seen:
            raise ParseError(f"duplicate row for ({s}, {a})", lineno)
        seen.add((s, a))
        trans[s, a] = probs
        reward[s, a] = r
    lineno, ln = rows[1 + expected]
    toks = ln.split()
    if toks[0] != "init" or len(toks) != 1 + n_s:
        raise ParseError("expected 'init p0 .. pN-1'", lineno)
    init = [float(t) for t in toks[1:]]
    lineno, ln = rows[2 + expected]
    toks = ln.split()
    if toks[0] != "terminal" or len(toks) != 1 + n_s:
        raise ParseError("expected 'terminal b0 .. bN-1'", lineno)
    if any(t not in ("0", "1") for t in toks[1:]):
        raise ParseError("terminal flags must be 0 or 1", lineno)
    terminal = [t == "1" for t in toks[1:]]
    try:
        return FiniteMDP(trans, reward, init, terminal)
    except ValueError as exc:
        raise ParseError(str(exc))


def dump_finite_mdp(mdp: FiniteMDP, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"states={mdp.num_states} actions={mdp.num_actions}\n")
        for s in range(mdp.num_states):
            for a in range(mdp.num_actions):
                probs = " ".join(repr(float(p)) for p in mdp.trans[s, a])
                fh.write(f"{s} {a} {float(mdp.reward[s, a])!r} {probs}\n")
        fh.write("init " + " ".join(repr(float(p)) for p in mdp.init) + "\n")
        fh.write("terminal " + " ".join("1" if t else "0" for t in mdp.terminal) + "\n")
