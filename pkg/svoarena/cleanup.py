"""Cleanup: a public-goods game.

Pollution accumulates in a river at a constant rate. Apples grow in an
orchard at a rate that falls as the river gets dirtier and stops altogether
past a depletion threshold. Cleaning the river with the cleaning beam is
costly to the cleaner in time, and benefits everyone who harvests.
"""

from typing import Dict, Optional, Sequence

import attr
import numpy as np

from svoarena.grid import (
    CLEAN, HARVEST, BeamKind, BeamResult, GameMap, GridEvent, GridWorld,
    MapError, Position, Resource, Terrain
)

GROWTH_PROFILES = ('linear', 'stepwise')


def _cell_index(cells: np.ndarray) -> Dict[Position, int]:
    return {(int(r), int(c)): i for i, (r, c) in enumerate(cells)}


@attr.s(auto_attribs=True, eq=False)
class RiverState:
    """
    River cells and which of them are polluted. C{polluted} is a per-cell
    flag array aligned with C{river_cells}.
    """

    river_cells: np.ndarray
    polluted: np.ndarray
    pollution_spawn_prob: float = 0.5

    def __attrs_post_init__(self) -> None:
        self._index = _cell_index(self.river_cells)

    @classmethod
    def fromGameMap(cls, game_map: GameMap, pollution_spawn_prob: float = 0.5) -> 'RiverState':
        cells = np.array(game_map.cells(Terrain.RIVER), dtype=np.int64).reshape(-1, 2)
        if not len(cells):
            raise MapError([('map', f"{game_map.name}: Cleanup map has no river cells 'R'")])
        return cls(cells, np.zeros(len(cells), dtype=bool), pollution_spawn_prob)

    @property
    def pollution_fraction(self) -> float:
        return float(self.polluted.mean()) if len(self.polluted) else 0.0

    def is_polluted(self, position: Position) -> bool:
        index = self._index.get(position)
        return index is not None and bool(self.polluted[index])


@attr.s(auto_attribs=True, eq=False)
class OrchardState:
    orchard_cells: np.ndarray
    apples: np.ndarray
    depletion_threshold: float = 0.4
    max_spawn_prob: float = 0.05
    growth_profile: str = 'linear'

    def __attrs_post_init__(self) -> None:
        self._index = _cell_index(self.orchard_cells)

    @classmethod
    def fromGameMap(cls, game_map: GameMap, **kwargs: object) -> 'OrchardState':
        cells = np.array(game_map.cells(Terrain.ORCHARD), dtype=np.int64).reshape(-1, 2)
        if not len(cells):
            raise MapError([('map', f"{game_map.name}: Cleanup map has no orchard cells 'O'")])
        orchard = cls(cells, np.zeros(len(cells), dtype=bool), **kwargs)  # type: ignore[arg-type]
        for pos in game_map.initial_apples:
            orchard.apples[orchard._index[pos]] = True
        return orchard

    def has_apple(self, position: Position) -> bool:
        index = self._index.get(position)
        return index is not None and bool(self.apples[index])

    def harvest(self, position: Position) -> int:
        index = self._index.get(position)
        if index is None or not self.apples[index]:
            return 0
        self.apples[index] = False
        return 1


def pollute(river: RiverState, rng: np.random.Generator) -> Optional[int]:
    """
    With probability C{river.pollution_spawn_prob}, pollute one uniformly
    chosen clean river cell.

    Exactly one variate is drawn to decide, and a second only if a cell is
    polluted.

    @return: The index of the newly polluted cell, or C{None}.
    """
    if rng.random() >= river.pollution_spawn_prob:
        return None
    clean_cells = np.flatnonzero(~river.polluted)
    if not len(clean_cells):
        return None
    index = int(clean_cells[rng.integers(len(clean_cells))])
    river.polluted[index] = True
    return index


def orchard_growth_rate(
        river: RiverState,
        depletion_threshold: float = 0.4,
        max_spawn_prob: float = 0.05,
        profile: str = 'linear',
        ) -> float:
    """
    Per-cell apple growth probability given the river's state.

    The C{linear} profile falls from C{max_spawn_prob} on a clean river to 0
    at the depletion threshold; the C{stepwise} profile is C{max_spawn_prob}
    below the threshold and 0 from it on.
    """
    fraction = river.pollution_fraction
    if fraction >= depletion_threshold:
        return 0.0
    if profile == 'stepwise':
        return max_spawn_prob
    if profile != 'linear':
        raise ValueError(f"unknown growth profile {profile!r}")
    return max_spawn_prob * max(0.0, 1.0 - fraction / depletion_threshold)


def grow_apples(
        orchard: OrchardState,
        rate: float,
        rng: np.random.Generator,
        blocked: Optional[np.ndarray] = None,
        ) -> np.ndarray:
    """
    Each empty orchard cell gains an apple with probability C{rate}.

    @param blocked: Per-cell flags for cells that may not grow this step.
    @return: Indices of the cells that gained an apple.
    """
    draws = rng.random(len(orchard.apples))
    grown = ~orchard.apples & (draws < rate)
    if blocked is not None:
        grown &= ~blocked
    indices = np.flatnonzero(grown)
    orchard.apples[indices] = True
    return indices


def clean(river: RiverState, beam: BeamResult) -> int:
    """
    Remove the pollution under a cleaning beam.

    @return: The number of cells cleaned.
    """
    cleaned = 0
    for pos in beam.hit_cells:
        index = river._index.get(pos)
        if index is not None and river.polluted[index]:
            river.polluted[index] = False
            cleaned += 1
    return cleaned


class CleanupDynamics:
    """L{svoarena.grid.Dynamics} for Cleanup: nine actions, with cleaning."""

    name = 'cleanup'
    action_count = 9

    def __init__(
            self,
            pollution_spawn_prob: float = 0.5,
            depletion_threshold: float = 0.4,
            max_spawn_prob: float = 0.05,
            growth_profile: str = 'linear',
            initial_pollution: float = 1.0,
            ):
        if growth_profile not in GROWTH_PROFILES:
            raise MapError([('growth_profile', f"unknown growth profile {growth_profile!r}")])
        self.pollution_spawn_prob = pollution_spawn_prob
        self.depletion_threshold = depletion_threshold
        self.max_spawn_prob = max_spawn_prob
        self.growth_profile = growth_profile
        self.initial_pollution = initial_pollution
        self.river: RiverState
        self.orchard: OrchardState
        self.growth_rate = 0.0
        """The orchard growth rate used in the most recent step."""

    def reset(self, world: GridWorld) -> None:
        self.river = RiverState.fromGameMap(world.game_map, self.pollution_spawn_prob)
        self.orchard = OrchardState.fromGameMap(
            world.game_map,
            depletion_threshold=self.depletion_threshold,
            max_spawn_prob=self.max_spawn_prob,
            growth_profile=self.growth_profile)
        count = int(round(self.initial_pollution * len(self.river.river_cells)))
        if count:
            chosen = world.rng.choice(len(self.river.river_cells), size=count, replace=False)
            self.river.polluted[chosen] = True
        self._sync(world)

    def _sync(self, world: GridWorld) -> None:
        rows, cols = self.river.river_cells.T
        world.resources[rows, cols] = np.where(
            self.river.polluted, Resource.POLLUTION, Resource.EMPTY)
        rows, cols = self.orchard.orchard_cells.T
        world.resources[rows, cols] = np.where(
            self.orchard.apples, Resource.APPLE, Resource.EMPTY)

    def on_enter(self, world: GridWorld, agent_id: int, position: Position) -> int:
        reward = self.orchard.harvest(position)
        if reward:
            world.resources[position] = Resource.EMPTY
            world.events.append(GridEvent(world.step_index, agent_id, HARVEST, reward))
        return reward

    def on_beam(self, world: GridWorld, beam: BeamResult) -> None:
        if beam.kind is not BeamKind.CLEAN:
            return
        cleaned = clean(self.river, beam)
        for pos in beam.hit_cells:
            if world.resources[pos] == Resource.POLLUTION and not self.river.is_polluted(pos):
                world.resources[pos] = Resource.EMPTY
        world.events.append(GridEvent(world.step_index, beam.origin, CLEAN, cleaned))

    def after_step(self, world: GridWorld) -> None:
        index = pollute(self.river, world.rng)
        if index is not None:
            world.resources[tuple(self.river.river_cells[index])] = Resource.POLLUTION
        self.growth_rate = orchard_growth_rate(
            self.river, self.depletion_threshold, self.max_spawn_prob, self.growth_profile)
        rows, cols = self.orchard.orchard_cells.T
        grown = grow_apples(self.orchard, self.growth_rate, world.rng,
                            blocked=world.occupancy[rows, cols] >= 0)
        world.resources[rows[grown], cols[grown]] = Resource.APPLE

    def digest_parts(self) -> Sequence[bytes]:
        return [self.river.polluted.tobytes(), self.orchard.apples.tobytes()]
