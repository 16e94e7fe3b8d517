"""Replay memory: a ring buffer of per-tick records with episode markers.

Row i holds the augmented state reached at some tick, the reward delivered
with it, its terminal flag, and the action taken from it (filled in by the
following record). Rows optionally carry the state's encoded feature
vector so training never re-encodes stored data. Fragments for multi-step
backups are read out of consecutive rows of one episode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyReplayError
from .resampling import FragmentStep


@dataclass
class ReplayRow:
    state: object
    action: object  # action taken from this state; None until known
    reward: float
    terminal: bool
    episode: int
    feats: np.ndarray | None = None


class ReplayMemory:
    def __init__(self, capacity: int):
        if capacity < 2:
            raise ValueError("capacity must be at least 2")
        self.capacity = capacity
        self._rows: list[ReplayRow] = []
        self._head = 0  # index of the logically oldest row
        self._episode = -1

    def __len__(self) -> int:
        return len(self._rows)

    def row(self, i: int) -> ReplayRow:
        return self._rows[(self._head + i) % len(self._rows)]

    def _push(self, row: ReplayRow):
        if len(self._rows) < self.capacity:
            self._rows.append(row)
        else:
            self._rows[self._head] = row
            self._head = (self._head + 1) % self.capacity

    def start_episode(self, state, feats=None):
        self._episode += 1
        self._push(ReplayRow(state, None, 0.0, False, self._episode, feats))

    def record(self, action, reward: float, next_state, terminal: bool, feats=None):
        """Attach `action` to the newest row and append its successor."""
        if not self._rows:
            raise RuntimeError("start_episode must be called first")
        last = self.row(len(self._rows) - 1)
        if last.terminal:
            raise RuntimeError("cannot extend past a terminal record")
        last.action = action
        self._push(
            ReplayRow(next_state, None, float(reward), bool(terminal), last.episode, feats)
        )

    # -- fragment access -------------------------------------------------------

    def is_fragment_start(self, i: int) -> bool:
        if not 0 <= i < len(self._rows) - 1:
            return False
        row = self.row(i)
        nxt = self.row(i + 1)
        return not row.terminal and nxt.episode == row.episode

    def sample_start(self, rng) -> int:
        """Uniform over rows that begin at least a one-step fragment."""
        size = len(self._rows)
        if size < 2:
            raise EmptyReplayError("replay memory has no fragment to sample")
        for _ in range(64):
            i = int(rng.integers(size))
            if self.is_fragment_start(i):
                return i
        starts = [i for i in range(size) if self.is_fragment_start(i)]
        if not starts:
            raise EmptyReplayError("no stored step has a valid successor")
        return starts[int(rng.integers(len(starts)))]

    def fragment_rows(self, i: int, fixed_n: int | None = None):
        """Maximal valid fragment as raw rows: (start row, step rows)."""
        data = self._rows
        size = len(data)
        head = self._head
        row = data[(head + i) % size]
        cap = row.state.buffer.capacity
        if fixed_n is not None:
            cap = min(cap, fixed_n)
        episode = row.episode
        rows = []
        t = 1
        while i + t < size and t <= cap:
            rec = data[(head + i + t) % size]
            state = rec.state
            if rec.episode != episode or state.alpha + state.beta < t:
                break
            rows.append(rec)
            if rec.terminal:
                break
            t += 1
        return row, rows

    def fragment_at(self, i: int, fixed_n: int | None = None):
        """Maximal valid fragment starting at row i: (x0, steps)."""
        row, rows = self.fragment_rows(i, fixed_n)
        steps = tuple(FragmentStep(r.state, r.reward, r.terminal) for r in rows)
        return row.state, steps

    def transition_rows_at(self, i: int):
        return self.row(i), self.row(i + 1)

    def sample_transition_rows(self, rng):
        i = self.sample_start(rng)
        return self.transition_rows_at(i)

    def transition_at(self, i: int):
        """1-step view (x, a, r', x', done') for action-value backups."""
        row, nxt = self.transition_rows_at(i)
        return row.state, row.action, nxt.reward, nxt.state, nxt.terminal

    def sample_transition(self, rng):
        return self.transition_at(self.sample_start(rng))
