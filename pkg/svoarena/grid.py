"""The gridworld substrate shared by HarvestPatch and Cleanup.

A L{GridWorld} owns the terrain of a L{GameMap}, the per-cell resource layer,
the agent avatars and a seeded generator. Environment specific resource
dynamics are delegated to a L{Dynamics} object, see L{svoarena.harvestpatch}
and L{svoarena.cleanup}.

Map legend, one character per cell::

    W        wall
    . or ' ' open ground
    P        open ground, avatar spawn point
    O        orchard ground (Cleanup apples grow here)
    A        orchard ground holding an apple at episode start
    R        river
    0-9 a-z  open ground that is an apple site of the patch with that
             base-36 id (HarvestPatch)
"""

import hashlib
import json
from enum import Enum, IntEnum
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Sequence, Tuple, Union

import attr
import numpy as np

from svoarena.config import ConfigurationError

if TYPE_CHECKING:
    from typing_extensions import Protocol
else:
    Protocol = object

Position = Tuple[int, int]


class MapError(ConfigurationError):
    """Raised when a map text is malformed or unusable."""


class ActionError(ConfigurationError):
    """Raised when a joint action does not fit the active environment."""


class Orientation(IntEnum):
    NORTH = 0
    EAST = 1
    SOUTH = 2
    WEST = 3

    @property
    def delta(self) -> Position:
        return _DELTAS[self]


_DELTAS: Tuple[Position, ...] = ((-1, 0), (0, 1), (1, 0), (0, -1))


class Action(IntEnum):
    """
    The action set. HarvestPatch uses the first eight actions, Cleanup all
    nine.
    """
    MOVE_FORWARD = 0
    MOVE_BACKWARD = 1
    STRAFE_LEFT = 2
    STRAFE_RIGHT = 3
    ROTATE_LEFT = 4
    ROTATE_RIGHT = 5
    NOOP = 6
    FIRE_PUNISH = 7
    FIRE_CLEAN = 8


# Heading change for each movement action, in quarter turns clockwise.
_MOVE_TURNS: Dict[int, int] = {
    Action.MOVE_FORWARD: 0,
    Action.STRAFE_RIGHT: 1,
    Action.MOVE_BACKWARD: 2,
    Action.STRAFE_LEFT: 3,
    }


class Terrain(IntEnum):
    OPEN = 0
    WALL = 1
    ORCHARD = 2
    RIVER = 3


class Resource(IntEnum):
    EMPTY = 0
    APPLE = 1
    POLLUTION = 2


class BeamKind(Enum):
    PUNISH = 'punish'
    CLEAN = 'clean'


# Observation palette. Categories 0-6 are fixed, avatars use
# AVATAR_CATEGORY + (agent_id % len(AVATAR_COLORS)).
PADDING_CATEGORY = 0
OPEN_CATEGORY = 1
WALL_CATEGORY = 2
ORCHARD_CATEGORY = 3
RIVER_CATEGORY = 4
POLLUTION_CATEGORY = 5
APPLE_CATEGORY = 6
AVATAR_CATEGORY = 7

AVATAR_COLORS: Tuple[Tuple[int, int, int], ...] = (
    (45, 110, 220), (230, 180, 30), (210, 60, 200), (30, 190, 190),
    (240, 110, 40), (130, 80, 200), (250, 130, 170), (120, 200, 60),
    (160, 100, 50), (250, 250, 110), (60, 60, 120), (200, 40, 60),
    (100, 150, 140), (180, 150, 240), (70, 130, 60), (255, 200, 150),
    )

PALETTE = np.array([
    (0, 0, 0),          # padding, outside the map
    (200, 200, 200),    # open ground
    (110, 110, 110),    # wall
    (150, 125, 80),     # orchard ground
    (80, 150, 230),     # clean river
    (100, 110, 50),     # polluted river
    (30, 200, 50),      # apple
    ] + list(AVATAR_COLORS), dtype=np.uint8)

_TERRAIN_CATEGORY = np.array(
    [OPEN_CATEGORY, WALL_CATEGORY, ORCHARD_CATEGORY, RIVER_CATEGORY],
    dtype=np.int16)

_LEGEND: Dict[str, Terrain] = {
    'W': Terrain.WALL,
    '.': Terrain.OPEN,
    ' ': Terrain.OPEN,
    'P': Terrain.OPEN,
    'O': Terrain.ORCHARD,
    'A': Terrain.ORCHARD,
    'R': Terrain.RIVER,
    }


@attr.s(auto_attribs=True, eq=False)
class GameMap:
    """
    A parsed ASCII map.

    Use L{GameMap.fromText} or L{load_map} to create one.
    """

    name: str
    text: str
    terrain: np.ndarray
    """Terrain tags, shape (height, width)."""

    patch_ids: np.ndarray
    """Apple-site patch ids, -1 where the cell is not a site."""

    spawn_points: List[Position]
    initial_apples: List[Position]

    @property
    def height(self) -> int:
        return int(self.terrain.shape[0])

    @property
    def width(self) -> int:
        return int(self.terrain.shape[1])

    @property
    def digest(self) -> str:
        """SHA-256 of the normalised map text."""
        return hashlib.sha256(self.text.encode('utf-8')).hexdigest()

    def cells(self, terrain: Terrain) -> List[Position]:
        rows, cols = np.nonzero(self.terrain == terrain)
        return [(int(r), int(c)) for r, c in zip(rows, cols)]

    @classmethod
    def fromText(cls, text: str, name: str = '<string>') -> 'GameMap':
        """
        Parse a map.

        @raise MapError: If the grid is empty or ragged, uses characters
            outside the legend, or has no spawn point.
        """
        lines = [line.rstrip('\n') for line in text.splitlines()]
        while lines and not lines[-1].strip():
            lines.pop()
        while lines and not lines[0].strip():
            lines.pop(0)
        if not lines:
            raise MapError([('map', f"{name}: map is empty")])
        width = len(lines[0])
        for r, line in enumerate(lines):
            if len(line) != width:
                raise MapError([('map',
                    f"{name}: row {r} has {len(line)} cells, expected {width}")])

        terrain = np.full((len(lines), width), Terrain.OPEN, dtype=np.int8)
        patch_ids = np.full((len(lines), width), -1, dtype=np.int16)
        spawn_points: List[Position] = []
        initial_apples: List[Position] = []
        for r, line in enumerate(lines):
            for c, ch in enumerate(line):
                if ch in _LEGEND:
                    terrain[r, c] = _LEGEND[ch]
                    if ch == 'P':
                        spawn_points.append((r, c))
                    elif ch == 'A':
                        initial_apples.append((r, c))
                elif ch.isdigit() or 'a' <= ch <= 'z':
                    patch_ids[r, c] = int(ch, 36)
                else:
                    raise MapError([('map',
                        f"{name}: unknown map character {ch!r} at row {r}, column {c}")])
        if not spawn_points:
            raise MapError([('map', f"{name}: map has no spawn point 'P'")])
        normalised = '\n'.join(lines) + '\n'
        return cls(name, normalised, terrain, patch_ids, spawn_points, initial_apples)


def load_map(path: Union[str, Path]) -> GameMap:
    """
    Load a map file.

    @raise MapError: If the file cannot be read or does not parse.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise MapError([('map', f"cannot read map file {path}: {e.strerror}")]) from e
    return GameMap.fromText(text, name=str(path))


@attr.s(auto_attribs=True)
class AgentAvatar:
    agent_id: int
    position: Position
    orientation: Orientation
    last_action: Action = Action.NOOP
    frozen_steps: int = 0
    """Remaining steps during which a punished avatar ignores its actions."""


@attr.s(auto_attribs=True, eq=False)
class Observation:
    window: np.ndarray
    """Egocentric RGB window, shape (size, size, 3), dtype uint8."""

    orientation: Orientation


@attr.s(auto_attribs=True)
class BeamResult:
    origin: int
    kind: BeamKind
    hit_cells: List[Position] = attr.ib(factory=list)
    hit_agents: List[int] = attr.ib(factory=list)


HARVEST = 'harvest'
CLEAN = 'clean'
PUNISH = 'punish'
PUNISHED = 'punished'


@attr.s(auto_attribs=True, frozen=True)
class GridEvent:
    """Something an agent did or suffered during one step."""

    step: int
    """The step index at which the event happened, starting at 0."""

    agent_id: int
    kind: str
    amount: int = 0
    endangered: bool = False
    """For harvest events: the apple was the last one of its patch."""


@attr.s(auto_attribs=True, eq=False)
class StepOutcome:
    rewards: np.ndarray
    """Extrinsic rewards in agent order, dtype int64."""

    observations: List[Observation]
    beams: List[BeamResult]
    events: List[GridEvent]


class Dynamics(Protocol):
    """
    Environment specific resource dynamics plugged into a L{GridWorld}.
    """

    name: str
    action_count: int

    def reset(self, world: 'GridWorld') -> None:
        """
        Lay out the initial resources. Called once, after the avatars
        have been placed.
        """

    def on_enter(self, world: 'GridWorld', agent_id: int, position: Position) -> int:
        """
        An avatar moved onto C{position}.

        @return: The extrinsic reward earned.
        """

    def on_beam(self, world: 'GridWorld', beam: BeamResult) -> None:
        """
        A beam other than punishment was resolved.
        """

    def after_step(self, world: 'GridWorld') -> None:
        """
        Advance the resource dynamics by one step.
        """

    def digest_parts(self) -> Sequence[bytes]:
        """
        State not visible in the resource layer, for L{GridWorld.state_hash}.
        """


class GridWorld:
    """
    A deterministic, seedable gridworld.

    Identical map, dynamics parameters, seed and joint-action sequence
    produce a bit-identical state trajectory.
    """

    def __init__(
            self,
            game_map: GameMap,
            dynamics: Dynamics,
            n_agents: int,
            seed: int,
            *,
            punish_beam_length: int = 10,
            clean_beam_length: int = 3,
            punish_penalty: int = -50,
            punish_cost: int = -1,
            punish_timeout: int = 0,
            window_size: int = 15,
            ):
        if window_size % 2 != 1:
            raise ConfigurationError([('window_size', "must be odd")])
        if n_agents < 1:
            raise ConfigurationError([('group_size', "must be at least 1")])
        if len(game_map.spawn_points) < n_agents:
            raise MapError([('map',
                f"{game_map.name}: {len(game_map.spawn_points)} spawn points "
                f"for {n_agents} agents")])
        self.game_map = game_map
        self.dynamics = dynamics
        self.seed = seed
        self.punish_beam_length = punish_beam_length
        self.clean_beam_length = clean_beam_length
        self.punish_penalty = punish_penalty
        self.punish_cost = punish_cost
        self.punish_timeout = punish_timeout
        self.window_size = window_size

        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.step_index = 0
        self.resources = np.zeros(game_map.terrain.shape, dtype=np.int8)
        self.occupancy = np.full(game_map.terrain.shape, -1, dtype=np.int16)
        self.returns = np.zeros(n_agents, dtype=np.int64)
        self.replay_log: List[bytes] = []
        """Packed joint actions, one entry per step."""
        self.events: List[GridEvent] = []
        """Events of the most recent step."""

        spawn = self.rng.choice(len(game_map.spawn_points), size=n_agents, replace=False)
        headings = self.rng.integers(0, 4, size=n_agents)
        self.avatars: List[AgentAvatar] = []
        for agent_id, (k, heading) in enumerate(zip(spawn, headings)):
            pos = game_map.spawn_points[int(k)]
            self.avatars.append(AgentAvatar(agent_id, pos, Orientation(int(heading))))
            self.occupancy[pos] = agent_id

        dynamics.reset(self)

    @property
    def n_agents(self) -> int:
        return len(self.avatars)

    @property
    def height(self) -> int:
        return self.game_map.height

    @property
    def width(self) -> int:
        return self.game_map.width

    @property
    def terrain(self) -> np.ndarray:
        return self.game_map.terrain

    def positions(self) -> np.ndarray:
        """Avatar positions in agent order, shape (n, 2)."""
        return np.array([a.position for a in self.avatars], dtype=np.int16).reshape(-1, 2)

    def _in_bounds(self, pos: Position) -> bool:
        return 0 <= pos[0] < self.height and 0 <= pos[1] < self.width

    def _walkable(self, pos: Position) -> bool:
        return self._in_bounds(pos) and self.terrain[pos] != Terrain.WALL

    def _validate(self, joint_action: Sequence[int]) -> np.ndarray:
        actions = np.asarray(joint_action)
        if actions.shape != (self.n_agents,):
            raise ActionError([('joint_action',
                f"expected {self.n_agents} actions, got {actions.size}")])
        count = self.dynamics.action_count
        bad = (actions < 0) | (actions >= count)
        if bad.any():
            agent = int(np.argmax(bad))
            raise ActionError([('joint_action',
                f"action {int(actions[agent])} of agent {agent} is out of range "
                f"for {self.dynamics.name} ({count} actions)")])
        return actions.astype(np.int64)

    def step(self, joint_action: Sequence[int], observe: bool = True) -> StepOutcome:
        """
        Advance the world by one step.

        All agents act simultaneously: rotations first, then movement in a
        seeded random priority order (an avatar whose target cell is taken
        stays put), then beams on the post-movement positions, then the
        environment's resource dynamics.

        @param observe: Render the observations of the new state. Actors
            that do not look at pixels can skip the cost.
        @raise ActionError: If the joint action has the wrong length or an
            action index is out of range for the environment.
        """
        actions = self._validate(joint_action)
        self.replay_log.append(actions.astype(np.uint8).tobytes())
        self.events = []
        rewards = np.zeros(self.n_agents, dtype=np.int64)

        frozen = [a.frozen_steps > 0 for a in self.avatars]
        for avatar, action, is_frozen in zip(self.avatars, actions, frozen):
            avatar.last_action = Action(int(action))
            if is_frozen:
                continue
            if action == Action.ROTATE_LEFT:
                avatar.orientation = Orientation((avatar.orientation + 3) % 4)
            elif action == Action.ROTATE_RIGHT:
                avatar.orientation = Orientation((avatar.orientation + 1) % 4)

        order = self.rng.permutation(self.n_agents)
        for agent_id in order:
            avatar = self.avatars[agent_id]
            turns = _MOVE_TURNS.get(int(actions[agent_id]))
            if turns is None or frozen[agent_id]:
                continue
            dr, dc = _DELTAS[(avatar.orientation + turns) % 4]
            target = (avatar.position[0] + dr, avatar.position[1] + dc)
            if not self._walkable(target) or self.occupancy[target] >= 0:
                continue
            self.occupancy[avatar.position] = -1
            self.occupancy[target] = agent_id
            avatar.position = target
            rewards[agent_id] += self.dynamics.on_enter(self, int(agent_id), target)

        beams: List[BeamResult] = []
        for agent_id, action in enumerate(actions):
            if frozen[agent_id]:
                continue
            if action == Action.FIRE_PUNISH:
                beam = self.resolve_beam(agent_id, BeamKind.PUNISH)
                rewards[agent_id] += self.punish_cost
                self.events.append(GridEvent(self.step_index, agent_id, PUNISH))
                for victim in beam.hit_agents:
                    rewards[victim] += self.punish_penalty
                    self.events.append(GridEvent(self.step_index, victim, PUNISHED))
                beams.append(beam)
            elif action == Action.FIRE_CLEAN:
                beam = self.resolve_beam(agent_id, BeamKind.CLEAN)
                self.dynamics.on_beam(self, beam)
                beams.append(beam)

        self.dynamics.after_step(self)

        for avatar, was_frozen in zip(self.avatars, frozen):
            if was_frozen:
                avatar.frozen_steps -= 1
        for beam in beams:
            for victim in beam.hit_agents:
                self.avatars[victim].frozen_steps = self.punish_timeout

        self.step_index += 1
        self.returns += rewards
        observations = self.observe_all() if observe else []
        return StepOutcome(rewards, observations, beams, self.events)

    def resolve_beam(self, origin: int, kind: BeamKind) -> BeamResult:
        """
        Trace a single-cell-wide beam from the cell in front of an avatar.

        A punishment beam stops at the first wall or avatar, the avatar
        being hit. A cleaning beam stops only at walls.
        """
        avatar = self.avatars[origin]
        length = self.punish_beam_length if kind is BeamKind.PUNISH else self.clean_beam_length
        dr, dc = avatar.orientation.delta
        result = BeamResult(origin, kind)
        row, col = avatar.position
        for _ in range(length):
            row, col = row + dr, col + dc
            if not self._walkable((row, col)):
                break
            result.hit_cells.append((row, col))
            occupant = int(self.occupancy[row, col])
            if kind is BeamKind.PUNISH and occupant >= 0:
                result.hit_agents.append(occupant)
                break
        return result

    def categories(self) -> np.ndarray:
        """Render the whole map to palette categories, shape (height, width)."""
        cats = _TERRAIN_CATEGORY[self.terrain]
        cats[self.resources == Resource.APPLE] = APPLE_CATEGORY
        cats[self.resources == Resource.POLLUTION] = POLLUTION_CATEGORY
        for avatar in self.avatars:
            cats[avatar.position] = AVATAR_CATEGORY + avatar.agent_id % len(AVATAR_COLORS)
        return cats

    def _padded_categories(self) -> np.ndarray:
        r = self.window_size // 2
        return np.pad(self.categories(), r, constant_values=PADDING_CATEGORY)

    def _window(self, padded: np.ndarray, avatar: AgentAvatar) -> Observation:
        row, col = avatar.position
        size = self.window_size
        cats = padded[row:row + size, col:col + size]
        return Observation(PALETTE[cats], avatar.orientation)

    def observe(self, agent_id: int) -> Observation:
        """
        The axis-aligned egocentric window of an agent. Cells outside the
        map are padding (black).

        @raise IndexError: If there is no avatar with this id.
        """
        if not 0 <= agent_id < self.n_agents:
            raise IndexError(f"no avatar with id {agent_id}")
        return self._window(self._padded_categories(), self.avatars[agent_id])

    def observe_all(self) -> List[Observation]:
        padded = self._padded_categories()
        return [self._window(padded, avatar) for avatar in self.avatars]

    def state_hash(self) -> str:
        """SHA-256 over every piece of mutable state, including the generator."""
        h = hashlib.sha256()
        h.update(self.game_map.digest.encode('ascii'))
        h.update(self.step_index.to_bytes(8, 'little'))
        h.update(self.resources.tobytes())
        h.update(np.array(
            [(a.position[0], a.position[1], int(a.orientation), a.frozen_steps)
             for a in self.avatars], dtype=np.int64).tobytes())
        h.update(self.returns.tobytes())
        h.update(json.dumps(self.rng.bit_generator.state, sort_keys=True).encode('ascii'))
        for part in self.dynamics.digest_parts():
            h.update(part)
        return h.hexdigest()

    def to_text(self) -> str:
        """
        Render the current state with the map legend. Apples are drawn as
        C{'@'}, pollution as C{'~'} and avatars as their id in base 36.
        """
        rows = []
        for r in range(self.height):
            line = []
            for c in range(self.width):
                occupant = int(self.occupancy[r, c])
                if occupant >= 0:
                    line.append(np.base_repr(occupant, 36).lower())
                elif self.resources[r, c] == Resource.APPLE:
                    line.append('@')
                elif self.resources[r, c] == Resource.POLLUTION:
                    line.append('~')
                else:
                    line.append(_TERRAIN_CHARS[int(self.terrain[r, c])])
            rows.append(''.join(line))
        return '\n'.join(rows)


_TERRAIN_CHARS = {
    Terrain.OPEN: '.',
    Terrain.WALL: 'W',
    Terrain.ORCHARD: 'O',
    Terrain.RIVER: 'R',
    }
