import json
from pathlib import Path
from typing import Tuple

import numpy as np
import pytest

from svoarena.environment import EnvironmentSpec
from svoarena.episode import EpisodeRecord, run_episode
from svoarena.policy.scripted import RandomActor
from svoarena.replay import (
    MAGIC, IntegrityError, ReplayWriter, iter_replay, read_replay, replay_episode
)

from . import micro_environment


def recorded_episode(environment: str = 'cleanup', steps: int = 30) -> Tuple[EnvironmentSpec, EpisodeRecord]:
    spec = micro_environment(environment, episode_length=steps)
    world = spec.make_world(2, 17)
    action_count = spec.action_count
    record = run_episode(world, [RandomActor(action_count), RandomActor(action_count)],
                         rng=np.random.default_rng(0), episode_length=steps)
    return spec, record


def write(path: Path, spec: EnvironmentSpec, record: EpisodeRecord) -> Path:
    return ReplayWriter().write(path, spec, record.seed, record.actions,
                                record.initial_hash, record.final_hash, extra={'round': 3})


@pytest.mark.parametrize('environment', ['harvestpatch', 'cleanup'])
def test_replay_reproduces_final_hash(tmp_path: Path, environment: str) -> None:
    spec, record = recorded_episode(environment)
    path = tmp_path / 'episode.replay'
    write(path, spec, record)
    replay = read_replay(path)
    assert replay.steps == 30
    assert replay.n_agents == 2
    assert replay.header['round'] == 3
    assert replay_episode(replay) == record.final_hash


def test_iter_replay_yields_every_state(tmp_path: Path) -> None:
    spec, record = recorded_episode()
    path = tmp_path / 'episode.replay'
    write(path, spec, record)
    steps = [step for step, world in iter_replay(read_replay(path))]
    assert steps == list(range(31))


def test_mirror(tmp_path: Path) -> None:
    spec, record = recorded_episode()
    mirror = write(tmp_path / 'episode.replay', spec, record)
    lines = mirror.read_text().splitlines()
    assert len(lines) == 32
    header = json.loads(lines[0])['header']
    assert header['environment'] == 'cleanup'
    assert header['map_hash'] == spec.game_map.digest
    assert json.loads(lines[1]) == {'step': 0, 'actions': record.actions[0].tolist()}
    assert json.loads(lines[-1]) == {'final_hash': record.final_hash}


def test_truncated_replay_names_the_step(tmp_path: Path) -> None:
    spec, record = recorded_episode()
    path = tmp_path / 'episode.replay'
    write(path, spec, record)
    data = path.read_bytes()
    # Each step record is a tag, a 4 byte length and 2 actions; the final
    # record is 1 + 4 + 64 bytes.
    path.write_bytes(data[:-(69 + 7 * 10 + 3)])
    with pytest.raises(IntegrityError) as exc:
        read_replay(path)
    assert 'truncated at step 19' in str(exc.value)


def test_tampered_action_fails_hash_check(tmp_path: Path) -> None:
    spec, record = recorded_episode()
    actions = record.actions.copy()
    actions[5, 0] = (actions[5, 0] + 1) % spec.action_count
    path = tmp_path / 'episode.replay'
    ReplayWriter().write(path, spec, record.seed, actions, record.initial_hash, record.final_hash)
    with pytest.raises(IntegrityError) as exc:
        replay_episode(read_replay(path))
    assert 'final state hash mismatch' in str(exc.value)


def test_not_a_replay(tmp_path: Path) -> None:
    path = tmp_path / 'episode.replay'
    path.write_bytes(b'hello world')
    with pytest.raises(IntegrityError):
        read_replay(path)
    with pytest.raises(IntegrityError):
        read_replay(tmp_path / 'missing.replay')
    path.write_bytes(MAGIC + b'\x05\x00\x00\x00{nope')
    with pytest.raises(IntegrityError):
        read_replay(path)


def test_map_hash_mismatch(tmp_path: Path) -> None:
    spec, record = recorded_episode()
    path = tmp_path / 'episode.replay'
    write(path, spec, record)
    data = path.read_bytes()
    # Swap an open cell of the embedded map for a wall.
    tampered = data.replace(b'WRR..P', b'WRRW.P', 1)
    assert tampered != data
    path.write_bytes(tampered)
    with pytest.raises(IntegrityError) as exc:
        read_replay(path)
    assert 'map hash mismatch' in str(exc.value)


def test_replays_reproduce_across_seeds(tmp_path: Path) -> None:
    spec = micro_environment('harvestpatch', episode_length=15)
    rng = np.random.default_rng(0)
    for seed in range(100):
        world = spec.make_world(3, seed)
        record = run_episode(world, [RandomActor(8)] * 3, rng=rng, episode_length=15)
        write(tmp_path / f'{seed}.replay', spec, record)
        replay = read_replay(tmp_path / f'{seed}.replay')
        assert replay.seed == seed
        assert replay_episode(replay) == record.final_hash
