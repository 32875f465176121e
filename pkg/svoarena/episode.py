"""
Running one arena episode and recording what the metrics need.
"""

from typing import Callable, Dict, List, Optional, Sequence

import attr
import numpy as np

from svoarena.grid import PUNISH, GridEvent, GridWorld, Resource
from svoarena.harvestpatch import HarvestPatchDynamics
from svoarena.policy import ActResult, Actor
from svoarena.policy.learner import Trajectory

REGION_OTHER = 0
REGION_ORCHARD = 1
REGION_RIVER = 2

_REGION_OF_TERRAIN = np.array([REGION_OTHER, REGION_OTHER, REGION_ORCHARD, REGION_RIVER],
                              dtype=np.int8)


@attr.s(auto_attribs=True, eq=False)
class EpisodeRecord:
    """
    Everything observable about one finished episode.

    Per-step arrays are indexed by step, then by slot in the arena (not by
    population id). Arrays of states have one more row than there are
    steps: row 0 is the state before the first step.
    """

    environment: str
    seed: int
    episode_length: int
    agent_ids: List[int]
    """Population ids of the arena's members, in slot order."""

    actions: np.ndarray
    """Shape (T, n), dtype uint8."""

    rewards: np.ndarray
    """Extrinsic rewards, shape (T, n), dtype int64."""

    utilities: np.ndarray
    """Rewards after the SVO transformation, shape (T, n)."""

    positions: np.ndarray
    """Avatar positions, shape (T+1, n, 2)."""

    regions: np.ndarray
    """Region under each avatar, shape (T+1, n): REGION_OTHER, REGION_ORCHARD or REGION_RIVER."""

    apples_in_view: np.ndarray
    """Apples within each avatar's observation window, shape (T+1, n)."""

    events: List[GridEvent]
    patch_count: int = 0
    """Number of apple patches; 0 outside HarvestPatch."""

    initial_hash: str = ''
    final_hash: str = ''
    trajectories: Dict[int, Trajectory] = attr.ib(factory=dict)
    """Learning trajectories, by slot."""

    @property
    def n_agents(self) -> int:
        return len(self.agent_ids)

    @property
    def returns(self) -> np.ndarray:
        """Episode extrinsic return per slot."""
        return self.rewards.sum(axis=0)

    @property
    def utility_returns(self) -> np.ndarray:
        return self.utilities.sum(axis=0)

    @property
    def collective_return(self) -> int:
        return int(self.rewards.sum())

    def events_of(self, slot: int, kind: str) -> List[GridEvent]:
        return [e for e in self.events if e.agent_id == slot and e.kind == kind]

    def punish_counts(self) -> np.ndarray:
        counts = np.zeros(self.n_agents, dtype=np.int64)
        for e in self.events:
            if e.kind == PUNISH:
                counts[e.agent_id] += 1
        return counts


def apples_in_windows(world: GridWorld) -> np.ndarray:
    """Count the apples in every avatar's observation window."""
    r = world.window_size // 2
    apples = np.pad((world.resources == Resource.APPLE).astype(np.int32), r)
    integral = np.zeros((apples.shape[0] + 1, apples.shape[1] + 1), dtype=np.int32)
    integral[1:, 1:] = apples.cumsum(0).cumsum(1)
    pos = world.positions().astype(np.int64)
    top, left = pos[:, 0], pos[:, 1]
    size = world.window_size
    return (integral[top + size, left + size] - integral[top, left + size]
            - integral[top + size, left] + integral[top, left])


def _regions(world: GridWorld) -> np.ndarray:
    pos = world.positions().astype(np.int64)
    return _REGION_OF_TERRAIN[world.terrain[pos[:, 0], pos[:, 1]]]


class _TrajectoryBuffer:

    def __init__(self, steps: int, window: int):
        self.windows = np.zeros((steps, window, window, 3), dtype=np.uint8)
        self.orientations = np.zeros(steps, dtype=np.int64)
        self.actions = np.zeros(steps, dtype=np.int64)
        self.log_probs = np.zeros(steps, dtype=np.float64)
        self.values = np.zeros(steps, dtype=np.float64)

    def add(self, t: int, window: np.ndarray, orientation: int, result: ActResult) -> None:
        self.windows[t] = window
        self.orientations[t] = orientation
        self.actions[t] = result.action
        self.log_probs[t] = result.log_prob
        self.values[t] = result.value

    def finish(self, rewards: np.ndarray, utilities: np.ndarray) -> Trajectory:
        return Trajectory(self.windows, self.orientations, self.actions, self.log_probs,
                          self.values, rewards.astype(np.float64), utilities)


def run_episode(
        world: GridWorld,
        actors: Sequence[Actor],
        transform: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        rng: Optional[np.random.Generator] = None,
        episode_length: int = 1000,
        agent_ids: Optional[Sequence[int]] = None,
        learners: Sequence[int] = (),
        ) -> EpisodeRecord:
    """
    Play one episode.

    @param transform: Maps a step's extrinsic rewards to utilities, see
        L{svoarena.svo.SvoRewardTransform}. Utilities equal rewards if not
        given.
    @param rng: Generator handed to the actors for sampling actions.
    @param agent_ids: Population ids of the actors, for the record.
    @param learners: Slots whose trajectories are recorded for learning.
    """
    n = world.n_agents
    if len(actors) != n:
        raise ValueError(f"{len(actors)} actors for {n} avatars")
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(world.seed))
    steps = episode_length
    actions = np.zeros((steps, n), dtype=np.uint8)
    rewards = np.zeros((steps, n), dtype=np.int64)
    utilities = np.zeros((steps, n), dtype=np.float64)
    positions = np.zeros((steps + 1, n, 2), dtype=np.int16)
    regions = np.zeros((steps + 1, n), dtype=np.int8)
    in_view = np.zeros((steps + 1, n), dtype=np.int16)
    events: List[GridEvent] = []
    buffers = {i: _TrajectoryBuffer(steps, world.window_size) for i in learners}

    initial_hash = world.state_hash()
    observations = world.observe_all()
    states = [actor.initial_state() for actor in actors]
    positions[0] = world.positions()
    regions[0] = _regions(world)
    in_view[0] = apples_in_windows(world)

    for t in range(steps):
        results = [actor.act(world, i, observations[i], states[i], rng)
                   for i, actor in enumerate(actors)]
        joint = [r.action for r in results]
        for i, buffer in buffers.items():
            buffer.add(t, observations[i].window, int(observations[i].orientation), results[i])
        outcome = world.step(joint)
        actions[t] = joint
        rewards[t] = outcome.rewards
        utilities[t] = transform(outcome.rewards) if transform is not None else outcome.rewards
        events.extend(outcome.events)
        observations = outcome.observations
        states = [r.state for r in results]
        positions[t + 1] = world.positions()
        regions[t + 1] = _regions(world)
        in_view[t + 1] = apples_in_windows(world)

    dynamics = world.dynamics
    patch_count = dynamics.patch_count if isinstance(dynamics, HarvestPatchDynamics) else 0
    record = EpisodeRecord(
        environment=dynamics.name,
        seed=world.seed,
        episode_length=steps,
        agent_ids=list(agent_ids) if agent_ids is not None else list(range(n)),
        actions=actions,
        rewards=rewards,
        utilities=utilities,
        positions=positions,
        regions=regions,
        apples_in_view=in_view,
        events=events,
        patch_count=patch_count,
        initial_hash=initial_hash,
        final_hash=world.state_hash(),
        )
    for i, buffer in buffers.items():
        record.trajectories[i] = buffer.finish(rewards[:, i], utilities[:, i])
    return record
