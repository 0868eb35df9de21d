import numpy as np
import pytest

from ipdlab.errors import ContractViolationError
from ipdlab.game import (
    Action,
    EpisodeConfig,
    Observation,
    PayoffMatrix,
    env_step,
    joint_to_observation,
    observation_to_joint,
    payoff,
    play_episode,
    trajectory_from_json,
    trajectory_to_json,
)
from ipdlab.tabular import named, policy_fn

C, D = Action.COOPERATE, Action.DEFECT


def test_payoff_table_defaults():
    m = PayoffMatrix()
    assert payoff(C, C, m) == (1, 1)
    assert payoff(C, D, m) == (-1, 2)
    assert payoff(D, C, m) == (2, -1)
    assert payoff(D, D, m) == (0, 0)


def test_payoff_symmetry():
    m = PayoffMatrix()
    for a in (C, D):
        for b in (C, D):
            assert payoff(a, b, m)[0] == payoff(b, a, m)[1]


def test_step_perspectives():
    m = PayoffMatrix()
    o1, o2, r1, r2 = env_step(C, D, m)
    assert (o1, o2) == (Observation.CD, Observation.DC)
    assert (r1, r2) == (-1, 2)
    o1, o2, r1, r2 = env_step(C, C, m)
    assert o1 == o2 == Observation.CC and r1 == r2 == 1
    o1, o2, r1, r2 = env_step(D, D, m)
    assert o1 == o2 == Observation.DD and r1 == r2 == 0


def test_observation_encoding_roundtrip():
    for own in (0, 1):
        for other in (0, 1):
            obs = joint_to_observation(own, other)
            assert observation_to_joint(obs) == (own, other)
    with pytest.raises(ContractViolationError):
        observation_to_joint(Observation.START)


@pytest.mark.parametrize(
    "name1,name2,want",
    [
        ("AllC", "AllC", (100.0, 100.0)),
        ("AllD", "AllC", (200.0, -100.0)),
        # TFT is exploited once, then mutual defection: hand-simulated.
        ("TFT", "AllD", (-1.0, 2.0)),
    ],
)
def test_play_episode_deterministic_matchups(name1, name2, want):
    cfg = EpisodeConfig(horizon=100)
    rng = np.random.default_rng(0)
    t1, t2 = play_episode(policy_fn(named(name1)), policy_fn(named(name2)), cfg, rng)
    assert (t1.total_return(), t2.total_return()) == want
    t1.validate(cfg)
    t2.validate(cfg)


def test_play_episode_perspective_consistency():
    cfg = EpisodeConfig(horizon=60)
    rng = np.random.default_rng(7)
    t1, t2 = play_episode(policy_fn(named("Random50")), policy_fn(named("Random50")), cfg, rng)
    for t in range(1, cfg.horizon):
        own1, other1 = observation_to_joint(t1.steps[t].obs)
        own2, other2 = observation_to_joint(t2.steps[t].obs)
        assert own1 == t1.steps[t - 1].action and other1 == t2.steps[t - 1].action
        assert own2 == t2.steps[t - 1].action and other2 == t1.steps[t - 1].action


def test_play_episode_reward_mirror():
    cfg = EpisodeConfig(horizon=40)
    rng = np.random.default_rng(3)
    t1, t2 = play_episode(policy_fn(named("Random50")), policy_fn(named("Random50")), cfg, rng)
    m = cfg.payoff
    for s1, s2 in zip(t1.steps, t2.steps):
        assert s1.reward == m.reward(s1.action, s2.action)
        assert s2.reward == m.reward(s2.action, s1.action)


def test_play_episode_bit_identical_reruns():
    cfg = EpisodeConfig(horizon=50)
    a = play_episode(
        policy_fn(named("Random50")), policy_fn(named("Random50")), cfg, np.random.default_rng(42)
    )
    b = play_episode(
        policy_fn(named("Random50")), policy_fn(named("Random50")), cfg, np.random.default_rng(42)
    )
    assert a[0].steps == b[0].steps and a[1].steps == b[1].steps


def test_play_episode_rejects_bad_distribution():
    cfg = EpisodeConfig(horizon=5)

    def bad_policy(_steps, _obs):
        return np.array([0.7, 0.7])

    with pytest.raises(ContractViolationError):
        play_episode(bad_policy, policy_fn(named("AllC")), cfg, np.random.default_rng(0))


def test_trajectory_json_roundtrip():
    cfg = EpisodeConfig(horizon=20)
    t1, _ = play_episode(
        policy_fn(named("Random50")), policy_fn(named("TFT")), cfg, np.random.default_rng(5)
    )
    line = trajectory_to_json(t1, phase=3)
    back, phase = trajectory_from_json(line)
    assert phase == 3
    assert back.agent_index == t1.agent_index
    assert back.steps == t1.steps


def test_horizon_must_be_positive():
    with pytest.raises(ContractViolationError):
        EpisodeConfig(horizon=0)
