"""
Rule-based actors, used as baselines and as oracles for the metrics.

Scripted actors read the world directly instead of the pixel observation.
"""

from collections import deque
from typing import AbstractSet, Any, Callable, Deque, Dict, Optional, Set, Tuple

import numpy as np

from svoarena.config import ConfigurationError
from svoarena.grid import Action, GridWorld, Observation, Position, Resource
from svoarena.harvestpatch import HarvestPatchDynamics
from svoarena.policy import ActResult, Actor

SCRIPTED_KINDS = ('random', 'greedy-harvester', 'sustainable-harvester', 'dedicated-cleaner')

_DIRECTIONS = ((-1, 0), (0, 1), (1, 0), (0, -1))

# Movement action for a heading change, in quarter turns clockwise.
_MOVE_FOR_TURN = (Action.MOVE_FORWARD, Action.STRAFE_RIGHT,
                  Action.MOVE_BACKWARD, Action.STRAFE_LEFT)


def move_towards(orientation: int, direction: int) -> Action:
    """The movement action that steps in absolute C{direction}."""
    return _MOVE_FOR_TURN[(direction - orientation) % 4]


def first_step(
        world: GridWorld,
        start: Position,
        is_goal: Callable[[Position], bool],
        radius: Optional[int] = None,
        avoid: AbstractSet[Position] = frozenset(),
        ) -> Optional[int]:
    """
    Breadth-first search over walkable, unoccupied cells.

    @param radius: Only search cells within this Chebyshev distance of
        C{start}, such as the observation window.
    @return: The absolute direction (0-3, north first, clockwise) of the
        first step of a shortest path to the nearest goal, or C{None} if no
        goal is reachable.
    """
    seen = {start}
    queue: Deque[Tuple[Position, int]] = deque()
    for d, (dr, dc) in enumerate(_DIRECTIONS):
        queue.append(((start[0] + dr, start[1] + dc), d))
    while queue:
        pos, direction = queue.popleft()
        if pos in seen:
            continue
        seen.add(pos)
        if not (0 <= pos[0] < world.height and 0 <= pos[1] < world.width):
            continue
        if radius is not None and max(abs(pos[0] - start[0]), abs(pos[1] - start[1])) > radius:
            continue
        if not world._walkable(pos) or world.occupancy[pos] >= 0 or pos in avoid:
            continue
        if is_goal(pos):
            return direction
        for dr, dc in _DIRECTIONS:
            queue.append(((pos[0] + dr, pos[1] + dc), direction))
    return None


class RandomActor:
    """Uniformly random actions."""

    def __init__(self, action_count: int):
        self.action_count = action_count

    def initial_state(self) -> Any:
        return None

    def act(self, world: GridWorld, agent_id: int, obs: Observation, state: Any,
            rng: np.random.Generator) -> ActResult:
        return ActResult(int(rng.integers(self.action_count)))


class GreedyHarvester:
    """
    Walks along a shortest path to the nearest apple within view and
    wanders at random when none is visible.
    """

    def __init__(self, action_count: int):
        self.action_count = action_count

    def initial_state(self) -> Any:
        return None

    def _avoid(self, world: GridWorld, agent_id: int) -> Set[Position]:
        return set()

    def act(self, world: GridWorld, agent_id: int, obs: Observation, state: Any,
            rng: np.random.Generator) -> ActResult:
        avatar = world.avatars[agent_id]
        avoid = self._avoid(world, agent_id)
        direction = first_step(
            world, avatar.position,
            lambda pos: world.resources[pos] == Resource.APPLE,
            radius=world.window_size // 2,
            avoid=avoid)
        if direction is None:
            choices = []
            for d, (dr, dc) in enumerate(_DIRECTIONS):
                target = (avatar.position[0] + dr, avatar.position[1] + dc)
                if target not in avoid:
                    choices.append(d)
            if not choices:
                return ActResult(int(Action.NOOP))
            direction = choices[int(rng.integers(len(choices)))]
        return ActResult(int(move_towards(avatar.orientation, direction)))


class SustainableHarvester(GreedyHarvester):
    """
    A greedy harvester that never takes an endangered apple.

    Moves are simultaneous, so an apple next to another avatar counts as
    taken already. The apples of a patch are left alone while at most
    C{reserve} of them are out of every other avatar's reach.
    """

    def __init__(self, action_count: int, reserve: int = 1):
        super().__init__(action_count)
        self.reserve = reserve

    def _avoid(self, world: GridWorld, agent_id: int) -> Set[Position]:
        dynamics = world.dynamics
        if not isinstance(dynamics, HarvestPatchDynamics):
            return set()
        patches = dynamics.patches
        contested: Set[Position] = set()
        for other in world.avatars:
            if other.agent_id == agent_id:
                continue
            row, col = other.position
            for dr, dc in _DIRECTIONS:
                if patches.has_apple((row + dr, col + dc)):
                    contested.add((row + dr, col + dc))
        avoid: Set[Position] = set()
        for patch in patches.patches:
            live = [site for site in patch.sites if patches.has_apple(site)]
            spare = len([site for site in live if site not in contested])
            if live and spare <= self.reserve:
                avoid.update(live)
        return avoid


class DedicatedCleaner:
    """
    Cleans the river: fires the cleaning beam when pollution is in range
    ahead, turns towards pollution in range to the side, and otherwise walks
    towards the nearest polluted cell.
    """

    action_count = 9

    def initial_state(self) -> Any:
        return None

    def _pollution_ahead(self, world: GridWorld, position: Position, direction: int) -> bool:
        dr, dc = _DIRECTIONS[direction]
        row, col = position
        for _ in range(world.clean_beam_length):
            row, col = row + dr, col + dc
            if not world._walkable((row, col)):
                return False
            if world.resources[row, col] == Resource.POLLUTION:
                return True
        return False

    def act(self, world: GridWorld, agent_id: int, obs: Observation, state: Any,
            rng: np.random.Generator) -> ActResult:
        avatar = world.avatars[agent_id]
        heading = int(avatar.orientation)
        if self._pollution_ahead(world, avatar.position, heading):
            return ActResult(int(Action.FIRE_CLEAN))
        for turn, action in ((1, Action.ROTATE_RIGHT), (3, Action.ROTATE_LEFT),
                             (2, Action.ROTATE_RIGHT)):
            if self._pollution_ahead(world, avatar.position, (heading + turn) % 4):
                return ActResult(int(action))
        direction = first_step(
            world, avatar.position,
            lambda pos: world.resources[pos] == Resource.POLLUTION)
        if direction is None:
            return ActResult(int(Action.NOOP))
        return ActResult(int(move_towards(heading, direction)))


def scripted_policy(kind: str, environment: str) -> Actor:
    """
    Create a scripted actor.

    @raise ConfigurationError: For an unknown kind, or a cleaner in an
        environment without a river.
    """
    action_count = 8 if environment == 'harvestpatch' else 9
    factories: Dict[str, Callable[[], Actor]] = {
        'random': lambda: RandomActor(action_count),
        'greedy-harvester': lambda: GreedyHarvester(action_count),
        'sustainable-harvester': lambda: SustainableHarvester(action_count),
        'dedicated-cleaner': DedicatedCleaner,
        }
    if kind not in factories:
        raise ConfigurationError([('policy_kind',
            f"unknown policy kind {kind!r}, expected one of {', '.join(SCRIPTED_KINDS)}")])
    if kind == 'dedicated-cleaner' and environment != 'cleanup':
        raise ConfigurationError([('policy_kind',
            f"a dedicated cleaner needs a river, {environment} has none")])
    return factories[kind]()
