"""svoarena's test suite."""

import os
from pathlib import Path
from typing import TYPE_CHECKING, Any, List, Sequence, Tuple

import pytest

from svoarena.config import MAPS_DIR, RunConfig
from svoarena.environment import EnvironmentSpec
from svoarena.grid import GameMap, GridWorld, Orientation, Position
from svoarena.policy.network import ArchitectureSpec


# Because pytest 6.1 does not yet export types for fixtures, we define
# approximations that are good enough for our test cases:

if TYPE_CHECKING:
    from typing_extensions import Protocol

    class CaptureResult(Protocol):
        out: str
        err: str

    class CapSys(Protocol):
        def readouterr(self) -> CaptureResult: ...

    from _pytest.monkeypatch import MonkeyPatch
else:
    CaptureResult = CapSys = object
    MonkeyPatch = object


slow = pytest.mark.skipif(not os.environ.get('SVOARENA_SLOW_TESTS'),
                          reason="long-running; set SVOARENA_SLOW_TESTS=1")


MICRO_MAPS = {
    'harvestpatch': MAPS_DIR / 'harvestpatch-micro.txt',
    'cleanup': MAPS_DIR / 'cleanup-micro.txt',
    }


class RecordingLogger:
    """A logger callable that keeps what it is told."""

    def __init__(self) -> None:
        self.records: List[Tuple[str, str, int]] = []

    def __call__(self, section: str, msg: str, thresh: int = 0, **kw: object) -> None:
        self.records.append((section, msg, thresh))

    @property
    def problems(self) -> List[str]:
        return [msg for _, msg, thresh in self.records if thresh < 0]


class StaticDynamics:
    """Dynamics without resources, for testing movement and beams."""

    name = 'static'
    action_count = 9

    def reset(self, world: GridWorld) -> None:
        pass

    def on_enter(self, world: GridWorld, agent_id: int, position: Position) -> int:
        return 0

    def on_beam(self, world: GridWorld, beam: object) -> None:
        pass

    def after_step(self, world: GridWorld) -> None:
        pass

    def digest_parts(self) -> Sequence[bytes]:
        return []


def static_world(text: str, n_agents: int = 1, seed: int = 0, **options: Any) -> GridWorld:
    return GridWorld(GameMap.fromText(text), StaticDynamics(), n_agents, seed, **options)


def place(world: GridWorld, agent_id: int, position: Position,
          orientation: Orientation = Orientation.NORTH) -> None:
    """Move an avatar, bypassing the rules."""
    avatar = world.avatars[agent_id]
    if world.occupancy[avatar.position] == agent_id:
        world.occupancy[avatar.position] = -1
    avatar.position = position
    avatar.orientation = orientation
    world.occupancy[position] = agent_id


def micro_run_config(environment: str = 'harvestpatch', **values: Any) -> RunConfig:
    raw = {
        'environment': environment,
        'map': str(MICRO_MAPS[environment]),
        'episode_length': '20',
        'population_size': '4',
        'group_size': '2',
        'hidden_size': '8',
        'conv_channels': '2',
        'arenas': '2',
        'rounds': '2',
        'deterministic': 'true',
        }
    raw.update({k: str(v) for k, v in values.items()})
    return RunConfig.fromMapping(raw)


def micro_environment(environment: str = 'harvestpatch', **values: Any) -> EnvironmentSpec:
    return EnvironmentSpec.fromConfig(micro_run_config(environment, **values))


def write_config(path: Path, config: RunConfig) -> Path:
    path.write_text(config.to_text(), encoding='utf-8')
    return path


def tiny_architecture(action_count: int = 8) -> ArchitectureSpec:
    return ArchitectureSpec(window=15, conv_channels=2, hidden=8, recurrent=8,
                            action_count=action_count)
