import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delayrl.core_mdp import (
    ConstantPolicy,
    FiniteMDP,
    TabularPolicy,
    Trajectory,
    dump_finite_mdp,
    finite_mdp_step,
    load_finite_mdp,
    policy_log_prob,
    policy_sample,
)
from delayrl.delay_channel import ActionBuffer, AugmentedState
from delayrl.errors import ContractViolation, ParseError


def chain_mdp():
    # 0 -> 1 -> 2 (absorbing terminal), reward 1 on (0, 0)
    trans = np.zeros((3, 1, 3))
    trans[0, 0, 1] = 1.0
    trans[1, 0, 2] = 1.0
    trans[2, 0, 2] = 1.0
    reward = np.zeros((3, 1))
    reward[0, 0] = 1.0
    return FiniteMDP(trans, reward, [1, 0, 0], [False, False, True])


def coin_mdp():
    trans = np.zeros((2, 1, 2))
    trans[0, 0] = [0.5, 0.5]
    trans[1, 0] = [0.5, 0.5]
    reward = np.zeros((2, 1))
    return FiniteMDP(trans, reward, [1, 0], [False, False])


def aug(obs=0, entries=(0, 0), alpha=1, beta=1):
    return AugmentedState(obs, ActionBuffer(entries), alpha, beta)


class TestFiniteMDP:
    def test_deterministic_chain_step(self):
        mdp = chain_mdp()
        step = finite_mdp_step(mdp, 0, 0, np.random.default_rng(0))
        assert step.next_observation == 1
        assert step.reward == 1.0
        assert not step.terminal

    def test_empirical_frequency_matches_tensor(self):
        # Monte-Carlo against the stored transition row
        mdp = coin_mdp()
        rng = np.random.default_rng(7)
        hits = sum(finite_mdp_step(mdp, 0, 0, rng).next_observation == 1 for _ in range(10**5))
        assert abs(hits / 10**5 - 0.5) < 0.01

    def test_step_into_terminal_sets_flag(self):
        mdp = chain_mdp()
        step = finite_mdp_step(mdp, 1, 0, np.random.default_rng(0))
        assert step.next_observation == 2
        assert step.terminal

    def test_out_of_range_rejected(self):
        mdp = chain_mdp()
        with pytest.raises(ValueError):
            finite_mdp_step(mdp, 5, 0, np.random.default_rng(0))
        with pytest.raises(ValueError):
            finite_mdp_step(mdp, 0, 3, np.random.default_rng(0))

    def test_stepping_terminal_is_contract_violation(self):
        mdp = chain_mdp()
        with pytest.raises(ContractViolation):
            finite_mdp_step(mdp, 2, 0, np.random.default_rng(0))

    def test_bad_row_sum_rejected(self):
        trans = np.zeros((2, 1, 2))
        trans[0, 0] = [0.5, 0.4]
        trans[1, 0] = [0.5, 0.5]
        with pytest.raises(ValueError):
            FiniteMDP(trans, np.zeros((2, 1)), [1, 0], [False, False])

    def test_bad_init_rejected(self):
        mdp = coin_mdp()
        with pytest.raises(ValueError):
            FiniteMDP(mdp.trans, mdp.reward, [0.9, 0.2], [False, False])


class TestPolicies:
    def test_constant_policy_log_prob(self):
        pi = ConstantPolicy(1)
        action, logp = policy_sample(pi, aug(), np.random.default_rng(0))
        assert action == 1 and logp == 0.0
        assert policy_log_prob(pi, aug(), 1) == 0.0
        assert policy_log_prob(pi, aug(), 0) == -math.inf

    def test_tabular_uniform_log_prob(self):
        pi = TabularPolicy.uniform(num_obs=2, num_actions=2)
        _, logp = policy_sample(pi, aug(obs=1), np.random.default_rng(3))
        assert abs(logp - math.log(0.5)) < 1e-9

    def test_tabular_quarter_mass(self):
        pi = TabularPolicy([[0.25, 0.75]])
        assert abs(policy_log_prob(pi, aug(obs=0), 0) - math.log(0.25)) < 1e-15

    def test_sample_log_prob_consistency(self):
        pi = TabularPolicy([[0.3, 0.7], [0.9, 0.1]])
        rng = np.random.default_rng(11)
        for _ in range(1000):
            x = aug(obs=int(rng.integers(2)))
            a, logp = policy_sample(pi, x, rng)
            assert abs(policy_log_prob(pi, x, a) - logp) < 1e-9

    def test_obs_u1_conditioning_uses_buffer(self):
        table = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [0.5, 0.5]])
        pi = TabularPolicy(table, conditioning="obs+u1", num_obs=2)
        # row = u1 * num_obs + obs
        assert policy_log_prob(pi, aug(obs=0, entries=(0, 0)), 0) == 0.0
        assert policy_log_prob(pi, aug(obs=1, entries=(0, 0)), 1) == 0.0

    def test_rows_must_normalize(self):
        with pytest.raises(ValueError):
            TabularPolicy([[0.5, 0.4]])


class TestTrajectory:
    def test_append_only_and_terminal_guard(self):
        traj = Trajectory(start=aug(), behavior_policy_id="mu")
        traj.append(aug(obs=1), 0.5, False)
        traj.append(aug(obs=2), 0.0, True)
        with pytest.raises(ContractViolation):
            traj.append(aug(obs=0), 0.0, False)
        assert len(traj) == 2
        assert traj.records[0].reward == 0.5

    def test_records_view_is_immutable(self):
        traj = Trajectory(start=aug())
        traj.append(aug(obs=1), 0.0, False)
        view = traj.records
        assert isinstance(view, tuple)


class TestTextFormat:
    def test_round_trip(self, tmp_path):
        mdp = coin_mdp()
        path = tmp_path / "coin.mdp"
        dump_finite_mdp(mdp, path)
        loaded = load_finite_mdp(path)
        assert np.array_equal(loaded.trans, mdp.trans)
        assert np.array_equal(loaded.reward, mdp.reward)
        assert np.array_equal(loaded.init, mdp.init)
        assert np.array_equal(loaded.terminal, mdp.terminal)

    def test_parse_error_carries_line(self, tmp_path):
        path = tmp_path / "bad.mdp"
        path.write_text("states=2 actions=1\n0 0 0.0 0.5 0.5\n1 0 oops 0.5 0.5\ninit 1 0\nterminal 0 0\n")
        with pytest.raises(ParseError) as err:
            load_finite_mdp(path)
        assert err.value.line == 3

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.mdp"
        path.write_text("states=x actions=1\n")
        with pytest.raises(ParseError):
            load_finite_mdp(path)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=0.05, max_value=10.0), min_size=2, max_size=5))
def test_generated_rows_normalize(weights):
    # any generator in the library normalizes rows to 1 within 1e-12
    row = np.array(weights) / sum(weights)
    n = len(row)
    trans = np.tile(row, (n, 1, 1)).reshape(n, 1, n)
    mdp = FiniteMDP(trans, np.zeros((n, 1)), row, [False] * n)
    assert np.all(np.abs(mdp.trans.sum(axis=2) - 1.0) <= 1e-12)
