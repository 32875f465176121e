from typing import List

import numpy as np
import pytest

from svoarena.cleanup import (
    CleanupDynamics, RiverState, grow_apples, orchard_growth_rate, pollute
)
from svoarena.config import MAPS_DIR
from svoarena.episode import EpisodeRecord, run_episode
from svoarena.grid import CLEAN, HARVEST, Action, GridWorld, MapError, Orientation, Resource, load_map
from svoarena.policy.scripted import scripted_policy

from . import micro_environment, place

MICRO = MAPS_DIR / 'cleanup-micro.txt'


def river(polluted: int, total: int = 10, prob: float = 0.5) -> RiverState:
    cells = np.array([(0, c) for c in range(total)])
    flags = np.zeros(total, dtype=bool)
    flags[:polluted] = True
    return RiverState(cells, flags, prob)


def cleanup_world(n_agents: int = 1, seed: int = 0, **options: object) -> GridWorld:
    return GridWorld(load_map(MICRO), CleanupDynamics(**options), n_agents, seed)  # type: ignore[arg-type]


def test_linear_growth_profile() -> None:
    assert orchard_growth_rate(river(0), 0.4, 0.05) == pytest.approx(0.05)
    assert orchard_growth_rate(river(2), 0.4, 0.05) == pytest.approx(0.025)
    assert orchard_growth_rate(river(4), 0.4, 0.05) == 0.0
    assert orchard_growth_rate(river(9), 0.4, 0.05) == 0.0


def test_stepwise_growth_profile() -> None:
    assert orchard_growth_rate(river(3), 0.4, 0.05, 'stepwise') == pytest.approx(0.05)
    assert orchard_growth_rate(river(4), 0.4, 0.05, 'stepwise') == 0.0
    with pytest.raises(ValueError):
        orchard_growth_rate(river(0), profile='cubic')


def test_pollution_accumulates() -> None:
    r = river(0, prob=1.0)
    rng = np.random.default_rng(0)
    for expected in range(1, 11):
        assert pollute(r, rng) is not None
        assert r.polluted.sum() == expected
    # Nothing left to pollute.
    assert pollute(r, rng) is None
    assert pollute(river(0, prob=0.0), rng) is None


def test_pollution_frequency() -> None:
    r = river(0, total=100, prob=0.5)
    rng = np.random.default_rng(3)
    steps = 10_000
    events = 0
    for _ in range(steps):
        if pollute(r, rng) is not None:
            events += 1
        r.polluted[:] = False
    assert abs(events / steps - 0.5) < 0.02


def test_grow_apples_respects_rate_and_blocking() -> None:
    from svoarena.cleanup import OrchardState
    cells = np.array([(0, c) for c in range(6)])
    orchard = OrchardState(cells, np.zeros(6, dtype=bool))
    rng = np.random.default_rng(0)
    assert not len(grow_apples(orchard, 0.0, rng))
    blocked = np.zeros(6, dtype=bool)
    blocked[2] = True
    grown = grow_apples(orchard, 1.0, rng, blocked)
    assert list(grown) == [0, 1, 3, 4, 5]


def test_map_without_river() -> None:
    from svoarena.grid import GameMap
    game_map = GameMap.fromText("WWWW\nWPOW\nWWWW\n")
    with pytest.raises(MapError):
        GridWorld(game_map, CleanupDynamics(), 1, 0)


def test_initial_pollution() -> None:
    world = cleanup_world(initial_pollution=1.0)
    assert isinstance(world.dynamics, CleanupDynamics)
    assert world.dynamics.river.polluted.all()
    world = cleanup_world(initial_pollution=0.0)
    assert isinstance(world.dynamics, CleanupDynamics)
    assert not world.dynamics.river.polluted.any()


def test_cleaning_beam() -> None:
    world = cleanup_world(initial_pollution=1.0, pollution_spawn_prob=0.0)
    dynamics = world.dynamics
    assert isinstance(dynamics, CleanupDynamics)
    # The river is columns 1 and 2; the beam reaches both from column 3.
    place(world, 0, (1, 3), Orientation.WEST)
    outcome = world.step([Action.FIRE_CLEAN], observe=False)
    cleaned = [e for e in outcome.events if e.kind == CLEAN]
    assert len(cleaned) == 1 and cleaned[0].amount == 2
    assert list(outcome.rewards) == [0]
    assert world.resources[1, 1] == Resource.EMPTY
    assert world.resources[1, 2] == Resource.EMPTY
    assert not dynamics.river.is_polluted((1, 1))
    assert dynamics.river.is_polluted((2, 1))
    # Cleaning clean cells cleans nothing.
    outcome = world.step([Action.FIRE_CLEAN], observe=False)
    assert [e.amount for e in outcome.events if e.kind == CLEAN] == [0]


def test_harvesting_orchard_apple() -> None:
    world = cleanup_world(initial_pollution=1.0)
    # (1, 10) holds an apple at episode start.
    assert world.resources[1, 10] == Resource.APPLE
    place(world, 0, (1, 9), Orientation.EAST)
    outcome = world.step([Action.MOVE_FORWARD], observe=False)
    assert list(outcome.rewards) == [1]
    assert [e.kind for e in outcome.events] == [HARVEST]
    assert world.resources[1, 10] == Resource.EMPTY


def test_polluted_river_stops_growth() -> None:
    # Pollution only ever rises from just above the threshold.
    world = cleanup_world(initial_pollution=0.5, depletion_threshold=0.4)
    dynamics = world.dynamics
    assert isinstance(dynamics, CleanupDynamics)
    dynamics.orchard.apples[:] = False
    for _ in range(500):
        world.step([Action.NOOP], observe=False)
        assert dynamics.river.pollution_fraction >= 0.4
        assert dynamics.growth_rate == 0.0
        assert not dynamics.orchard.apples.any()


def test_clean_river_grows_apples() -> None:
    world = cleanup_world(initial_pollution=0.0, pollution_spawn_prob=0.0, max_spawn_prob=0.5)
    dynamics = world.dynamics
    assert isinstance(dynamics, CleanupDynamics)
    dynamics.orchard.apples[:] = False
    for _ in range(50):
        world.step([Action.NOOP], observe=False)
    assert dynamics.growth_rate == pytest.approx(0.5)
    assert dynamics.orchard.apples.sum() > 0


def test_unknown_growth_profile() -> None:
    with pytest.raises(MapError):
        CleanupDynamics(growth_profile='cubic')


def cleanup_episode(kinds: List[str], seed: int = 0, steps: int = 1000) -> EpisodeRecord:
    environment = micro_environment('cleanup', map=str(MAPS_DIR / 'cleanup.txt'),
                                    initial_pollution=1.0, episode_length=steps)
    world = environment.make_world(len(kinds), seed)
    return run_episode(world, [scripted_policy(kind, 'cleanup') for kind in kinds],
                       episode_length=steps)


def test_cleaning_is_a_public_good() -> None:
    harvesters_only = cleanup_episode(['greedy-harvester'] * 5)
    # A polluted river grows nothing: only the apples of the map are eaten.
    initial_apples = len(load_map(MAPS_DIR / 'cleanup.txt').initial_apples)
    assert harvesters_only.collective_return <= initial_apples
    assert harvesters_only.rewards[500:].sum() < harvesters_only.rewards[:500].sum()

    kinds = ['dedicated-cleaner'] * 2 + ['greedy-harvester'] * 3
    mixed = cleanup_episode(kinds)
    assert mixed.rewards[500:].sum() > 0
    assert mixed.collective_return > harvesters_only.collective_return
    # Yet cleaning does not pay for the cleaner.
    returns = mixed.returns
    assert returns[:2].max() < returns[2:].mean()
