import math
from typing import List

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svoarena.svo import (
    HALF_PI, SmoothedRewards, SvoError, SvoParams, SvoRewardTransform, angular_distance,
    reward_angle, reward_angles, svo_utility, transform_step_rewards, update_smoothing
)


def test_reward_angle_quadrants() -> None:
    assert reward_angle([1, 0], 0) == 0.0
    assert reward_angle([0, 1], 0) == pytest.approx(HALF_PI)
    assert reward_angle([1, 1, 1], 2) == pytest.approx(math.pi / 4)
    assert reward_angle([-1, 0], 0) == pytest.approx(math.pi)
    assert reward_angle([0, -1], 0) == pytest.approx(-HALF_PI)


def test_reward_angle_uses_mean_of_others() -> None:
    # Others' mean is (2 + 4) / 2 = 3.
    assert reward_angle([3, 2, 4], 0) == pytest.approx(math.pi / 4)


def test_reward_angle_degenerate() -> None:
    assert math.isnan(reward_angle([0, 0, 0], 1))
    assert reward_angle([0, 0], 0, fallback=0.5) == 0.5


def test_reward_angle_needs_two_agents() -> None:
    with pytest.raises(SvoError):
        reward_angle([1.0], 0)
    with pytest.raises(SvoError):
        reward_angles([1.0], np.zeros(1))


def test_angular_distance_wraps() -> None:
    assert angular_distance(0.1, 2 * math.pi - 0.1) == pytest.approx(0.2)
    assert angular_distance(-HALF_PI, HALF_PI) == pytest.approx(math.pi)
    assert angular_distance(0.3, 0.3) == 0.0


def test_svo_params_range() -> None:
    with pytest.raises(SvoError):
        SvoParams(-0.1)
    with pytest.raises(SvoError):
        SvoParams(HALF_PI + 0.01)
    with pytest.raises(SvoError):
        SvoParams(0.0, weight=-1)
    assert SvoParams.fromDegrees(45).theta == pytest.approx(math.pi / 4)
    assert SvoParams(math.pi / 4).degrees == pytest.approx(45)


def test_prosocial_agents_equal_rewards_cost_nothing() -> None:
    params = [SvoParams(math.pi / 4, 0.2)] * 3
    utilities = transform_step_rewards([1, 1, 1], params, SmoothedRewards(3))
    assert list(utilities) == [1.0, 1.0, 1.0]


def test_individualist_penalised_for_others_gain() -> None:
    params = [SvoParams(0.0, 0.2)] * 2
    utilities = transform_step_rewards([1, 0], params, SmoothedRewards(2))
    assert utilities[0] == pytest.approx(1.0)
    assert utilities[1] == pytest.approx(-0.2 * HALF_PI)


def test_all_zero_outcome_observes_own_target() -> None:
    params = [SvoParams(0.3, 0.5), SvoParams(1.2, 0.5)]
    utilities = transform_step_rewards([0, 0], params, SmoothedRewards(2))
    assert list(utilities) == [0.0, 0.0]


def test_smoothing_carries_past_rewards() -> None:
    transform = SvoRewardTransform([SvoParams(0.0, 1.0)] * 2, smoothing=0.5)
    transform([0, 4])
    # Traces are now [0, 2]: agent 0 still sees only the other's reward.
    utilities = transform([0, 0])
    assert utilities[0] == pytest.approx(-HALF_PI)
    assert transform.smoothed.traces[1] == pytest.approx(2.0)
    transform.reset()
    assert not transform.smoothed.traces.any()


def test_update_smoothing() -> None:
    memoryless = update_smoothing(SmoothedRewards(2, smoothing=0.0), [3, -1])
    assert list(memoryless.traces) == [3.0, -1.0]
    assert list(update_smoothing(memoryless, [0, 2]).traces) == [0.0, 2.0]
    smoothed = SmoothedRewards(1)
    for _ in range(300):
        update_smoothing(smoothed, [1])
    assert smoothed.traces[0] == pytest.approx(40.0, abs=0.1)
    quiet = SmoothedRewards(3)
    for _ in range(10):
        update_smoothing(quiet, [0, 0, 0])
    assert not quiet.traces.any()


def test_smoothed_rewards_size_mismatch() -> None:
    with pytest.raises(SvoError):
        SmoothedRewards(3).update([1, 2])
    with pytest.raises(SvoError):
        SmoothedRewards(2, smoothing=1.0)
    with pytest.raises(SvoError):
        transform_step_rewards([1, 2], [SvoParams(0.0)], SmoothedRewards(2))


rewards_strategy = st.lists(st.integers(-60, 20), min_size=2, max_size=8)


@given(rewards_strategy, st.floats(0, HALF_PI), st.floats(0, 2))
@settings(max_examples=200, deadline=None)
def test_utility_never_exceeds_reward(rewards: List[int], theta: float, weight: float) -> None:
    params = [SvoParams(theta, weight)] * len(rewards)
    utilities = transform_step_rewards(rewards, params, SmoothedRewards(len(rewards)))
    penalties = np.asarray(rewards, dtype=float) - utilities
    assert (penalties >= -1e-12).all()
    assert (penalties <= weight * math.pi + 1e-9).all()


@given(rewards_strategy)
@settings(max_examples=200, deadline=None)
def test_vectorised_angles_agree(rewards: List[int]) -> None:
    fallback = np.full(len(rewards), 0.25)
    vectorised = reward_angles(rewards, fallback)
    for i in range(len(rewards)):
        assert vectorised[i] == pytest.approx(reward_angle(rewards, i, fallback=0.25))


def test_svo_utility() -> None:
    assert svo_utility(2.0, SvoParams(HALF_PI, 0.1), 0.0) == pytest.approx(2.0 - 0.1 * HALF_PI)


def test_two_agent_smoothed_example() -> None:
    smoothed = SmoothedRewards(2)
    smoothed.traces[:] = 40.0
    params = [SvoParams(0.0, 0.2), SvoParams(HALF_PI, 0.2)]
    utilities = transform_step_rewards([0, 0], params, smoothed)
    # Both observe 45 degrees, a quarter turn of pi/4 from either target.
    assert list(utilities) == pytest.approx([-0.2 * math.pi / 4] * 2)


def test_smoothing_matches_the_unrolled_sum() -> None:
    rng = np.random.default_rng(7)
    steps, smoothing = 1000, 0.975
    rewards = rng.integers(-5, 6, size=(steps, 3)).astype(float)
    smoothed = SmoothedRewards(3, smoothing)
    for step_rewards in rewards:
        update_smoothing(smoothed, step_rewards)
    weights = smoothing ** np.arange(steps - 1, -1, -1)
    unrolled = (weights[:, None] * rewards).sum(axis=0)
    assert np.abs(smoothed.traces - unrolled).max() < 1e-10


def test_reward_angle_ignores_scale() -> None:
    rng = np.random.default_rng(11)
    for _ in range(10_000):
        n = int(rng.integers(2, 9))
        rewards = rng.uniform(-50, 50, size=n)
        rewards[0] = rng.uniform(0.01, 50)
        c = 10 ** rng.uniform(-3, 3)
        assert abs(reward_angle(c * rewards, 0) - reward_angle(rewards, 0)) < 1e-9


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=7), st.floats(0.01, 1e3),
       st.floats(1e-3, 1e3))
@settings(max_examples=300, deadline=None)
def test_reward_angle_scale_property(others: List[float], own: float, c: float) -> None:
    rewards = np.array([own, *others])
    assert abs(reward_angle(c * rewards, 0) - reward_angle(rewards, 0)) < 1e-9
