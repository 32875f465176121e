"""Social Value Orientation: reward angles and the SVO utility.

An agent's SVO is a target angle in the plane spanned by its own reward and
the mean reward of the others in its group: 0 is individualistic, pi/4
prosocial and pi/2 altruistic. Each step the agent is penalised by the
distance between its target and the angle of the temporally smoothed
reward distribution it observes::

    U_i = r_i - w * |theta_svo - theta(R)|

Angles are in radians throughout this module.
"""

import math
from typing import List, Sequence

import attr
import numpy as np

HALF_PI = math.pi / 2
DEGENERATE_EPSILON = 1e-9


class SvoError(ValueError):
    """Raised for SVO parameters out of range or mismatched reward vectors."""


def _check_theta(instance: object, attribute: 'attr.Attribute[float]', value: float) -> None:
    if not -1e-12 <= value <= HALF_PI + 1e-12:
        raise SvoError(f"SVO angle {value!r} is outside [0, pi/2]")


def _check_weight(instance: object, attribute: 'attr.Attribute[float]', value: float) -> None:
    if value < 0:
        raise SvoError(f"SVO weight {value!r} is negative")


@attr.s(auto_attribs=True, frozen=True)
class SvoParams:
    theta: float = attr.ib(validator=_check_theta)
    """Target reward angle in radians."""

    weight: float = attr.ib(default=0.0, validator=_check_weight)

    @classmethod
    def fromDegrees(cls, degrees: float, weight: float = 0.0) -> 'SvoParams':
        return cls(math.radians(degrees), weight)

    @property
    def degrees(self) -> float:
        return math.degrees(self.theta)


class SmoothedRewards:
    """
    Per-agent reward traces C{e_j <- smoothing * e_j + r_j}.
    """

    def __init__(self, n: int, smoothing: float = 0.975):
        if not 0 <= smoothing < 1:
            raise SvoError(f"smoothing {smoothing!r} is outside [0, 1)")
        self.smoothing = smoothing
        self.traces = np.zeros(n, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.traces)

    def reset(self) -> None:
        self.traces[:] = 0.0

    def update(self, step_rewards: Sequence[float]) -> np.ndarray:
        """
        @raise SvoError: If the number of rewards is not the group size.
        """
        rewards = np.asarray(step_rewards, dtype=np.float64)
        if rewards.shape != self.traces.shape:
            raise SvoError(f"expected {len(self.traces)} rewards, got {rewards.size}")
        self.traces *= self.smoothing
        self.traces += rewards
        return self.traces


def update_smoothing(smoothed: SmoothedRewards, step_rewards: Sequence[float]) -> SmoothedRewards:
    smoothed.update(step_rewards)
    return smoothed


def reward_angle(
        rewards: Sequence[float],
        i: int,
        fallback: float = math.nan,
        eps: float = DEGENERATE_EPSILON,
        ) -> float:
    """
    The reward angle of a group reward vector from agent C{i}'s point of
    view: C{atan2(mean of the others' rewards, own reward)}, in (-pi, pi].

    @param fallback: Returned when both the agent's own reward and the
        others' mean are within C{eps} of zero.
    @raise SvoError: If the group has fewer than two members.
    """
    values = np.asarray(rewards, dtype=np.float64)
    n = len(values)
    if n < 2:
        raise SvoError(f"a reward angle needs at least 2 agents, got {n}")
    own = float(values[i])
    others = (float(values.sum()) - own) / (n - 1)
    if abs(own) < eps and abs(others) < eps:
        return fallback
    angle = math.atan2(others, own)
    return math.pi if angle == -math.pi else angle


def reward_angles(rewards: Sequence[float], fallback: np.ndarray,
                  eps: float = DEGENERATE_EPSILON) -> np.ndarray:
    """Vectorised L{reward_angle} for every agent of the group."""
    values = np.asarray(rewards, dtype=np.float64)
    n = len(values)
    if n < 2:
        raise SvoError(f"a reward angle needs at least 2 agents, got {n}")
    others = (values.sum() - values) / (n - 1)
    angles = np.arctan2(others, values)
    angles[angles == -math.pi] = math.pi
    degenerate = (np.abs(values) < eps) & (np.abs(others) < eps)
    return np.where(degenerate, fallback, angles)


def angular_distance(a: float, b: float) -> float:
    """Absolute difference of two angles, wrapped to [0, pi]."""
    d = abs(a - b) % (2 * math.pi)
    return min(d, 2 * math.pi - d)


def svo_utility(reward: float, params: SvoParams, observed_angle: float) -> float:
    return reward - params.weight * angular_distance(params.theta, observed_angle)


def transform_step_rewards(
        step_rewards: Sequence[float],
        all_params: Sequence[SvoParams],
        smoothed: SmoothedRewards,
        ) -> np.ndarray:
    """
    Turn one step of extrinsic rewards into per-agent utilities.

    The traces are updated with C{step_rewards} first; each agent's angle is
    then taken over the updated traces. An agent facing an all-zero
    distribution observes its own target and pays no penalty.

    @raise SvoError: If the sizes of C{step_rewards}, C{all_params} and
        C{smoothed} disagree.
    """
    if len(all_params) != len(smoothed):
        raise SvoError(f"{len(all_params)} SVO parameters for a group of {len(smoothed)}")
    rewards = np.asarray(step_rewards, dtype=np.float64)
    traces = smoothed.update(rewards)
    thetas = np.array([p.theta for p in all_params])
    weights = np.array([p.weight for p in all_params])
    angles = reward_angles(traces, fallback=thetas)
    d = np.abs(thetas - angles) % (2 * math.pi)
    d = np.minimum(d, 2 * math.pi - d)
    return rewards - weights * d


class SvoRewardTransform:
    """
    The utility function of one arena: the members' SVO parameters and their
    shared reward traces.
    """

    def __init__(self, params: Sequence[SvoParams], smoothing: float = 0.975):
        self.params: List[SvoParams] = list(params)
        self.smoothed = SmoothedRewards(len(self.params), smoothing)

    def reset(self) -> None:
        self.smoothed.reset()

    def __call__(self, step_rewards: Sequence[float]) -> np.ndarray:
        return transform_step_rewards(step_rewards, self.params, self.smoothed)
