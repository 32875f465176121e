import math
from pathlib import Path
from typing import Any, Dict

import numpy as np
import pytest

from svoarena.config import ConfigurationError
from svoarena.environment import EnvironmentSpec
from svoarena.export import AGENTS_NAME, TRAINING_LOG_NAME, read_csv, read_training_log
from svoarena.policy import PolicyHandle
from svoarena.policy.checkpoint import CheckpointError, read_manifest
from svoarena.policy.learner import LearnerConfig
from svoarena.policy.scripted import RandomActor, scripted_policy
from svoarena.population import (
    PopulationSpec, Trainer, evaluate, latest_checkpoint, load_population,
    materialize_population, sample_arena
)
from svoarena.replay import read_replay, replay_episode
from svoarena.svo import HALF_PI

from . import RecordingLogger, micro_environment, slow, tiny_architecture


def population_spec(environment: EnvironmentSpec, **changes: object) -> PopulationSpec:
    values = dict(size=4, group_size=2, distribution='homogeneous', svo_mean=math.pi / 4,
                  weight=0.2, seed=3, architecture=tiny_architecture(environment.action_count))
    values.update(changes)
    return PopulationSpec(**values)  # type: ignore[arg-type]


def test_homogeneous_population() -> None:
    pop = materialize_population(PopulationSpec(size=5, group_size=2, svo_mean=math.pi / 2, weight=0.1),
                                 lambda agent_id, seed: RandomActor(8))
    assert len(pop) == 5
    assert all(slot.svo.theta == math.pi / 2 for slot in pop.slots)
    assert all(slot.svo.weight == 0.1 for slot in pop.slots)
    assert pop.svo_degrees == [90.0] * 5


def test_normal_draws_are_clipped() -> None:
    spec = PopulationSpec(size=200, group_size=2, distribution='normal', svo_mean=0.1, svo_std=1.0)
    thetas = np.array([slot.svo.theta for slot in
                       materialize_population(spec, lambda agent_id, seed: RandomActor(8)).slots])
    assert thetas.min() == 0.0
    assert thetas.max() == HALF_PI
    assert ((thetas >= 0) & (thetas <= HALF_PI)).all()


def test_same_seed_same_population() -> None:
    spec = PopulationSpec(size=8, group_size=3, distribution='normal', svo_mean=0.7,
                          svo_std=0.2, seed=12)
    a = materialize_population(spec, lambda agent_id, seed: RandomActor(8))
    b = materialize_population(spec, lambda agent_id, seed: RandomActor(8))
    assert a.svo_degrees == b.svo_degrees
    assert [s.seed for s in a.slots] == [s.seed for s in b.slots]
    assert len({s.seed for s in a.slots}) == 8
    assert sample_arena(a, a.rng) == sample_arena(b, b.rng)


def test_sample_arena_draws_distinct_members() -> None:
    pop = materialize_population(PopulationSpec(size=6, group_size=5),
                                 lambda agent_id, seed: RandomActor(8))
    for arena_id in range(50):
        assignment = sample_arena(pop, pop.rng, arena_id)
        assert assignment.arena_id == arena_id
        assert len(set(assignment.members)) == 5
        assert all(0 <= m < 6 for m in assignment.members)
        assert 0 <= assignment.seed < 2 ** 32


def test_arena_inclusion_frequency() -> None:
    pop = materialize_population(PopulationSpec(size=30, group_size=5),
                                 lambda agent_id, seed: RandomActor(8))
    counts = np.zeros(30)
    samples = 100_000
    for _ in range(samples):
        counts[list(sample_arena(pop, pop.rng).members)] += 1
    assert np.abs(counts / samples - 1 / 6).max() < 0.005


@pytest.mark.parametrize('changes', [
    dict(group_size=1),
    dict(group_size=7),
    dict(distribution='uniform'),
    dict(svo_mean=2.0),
    dict(svo_std=-0.1),
    dict(weight=-1.0),
    ])
def test_invalid_spec(changes: Dict[str, Any]) -> None:
    with pytest.raises(ConfigurationError):
        materialize_population(PopulationSpec(**{**dict(size=6, group_size=2), **changes}))


def test_trainer_writes_run_files(tmp_path: Path) -> None:
    environment = micro_environment('harvestpatch')
    pop = materialize_population(population_spec(environment))
    logger = RecordingLogger()
    trainer = Trainer(pop, environment, LearnerConfig(), arenas=2, deterministic=True,
                      output=tmp_path, checkpoint_every=1, replay_every=1, logger=logger)
    rows = trainer.train(2)
    assert trainer.round == 2
    # 2 rounds x 2 arenas x 2 members.
    assert len(rows) == 8
    assert read_training_log(tmp_path / TRAINING_LOG_NAME) == rows
    agents = read_csv(tmp_path / AGENTS_NAME)
    assert len(agents) == 8
    assert sum(int(a['episodes']) for a in agents if a['round'] == '1') == 8
    assert all(r.policy_loss is not None for r in rows)

    assert latest_checkpoint(tmp_path) == tmp_path / 'checkpoints' / 'round-000002'
    manifest = read_manifest(tmp_path / 'checkpoints' / 'round-000001')
    assert manifest['round'] == 1
    assert manifest['map_hash'] == environment.game_map.digest
    assert [a['agent_id'] for a in manifest['agents']] == [0, 1, 2, 3]

    replays = tmp_path / 'replays'
    assert sorted(p.name for p in replays.glob('*.replay')) == [
        'round-000000-arena-000.replay', 'round-000001-arena-000.replay']
    replay = read_replay(replays / 'round-000000-arena-000.replay')
    assert replay_episode(replay) == replay.final_hash
    assert any(section == 'checkpoint' for section, _, _ in logger.records)


def test_resume_continues_the_run(tmp_path: Path) -> None:
    environment = micro_environment('cleanup')
    spec = population_spec(environment, distribution='normal', svo_std=0.2)

    full = Trainer(materialize_population(spec), environment, LearnerConfig(), arenas=2,
                   deterministic=True, output=tmp_path / 'full', checkpoint_every=1)
    expected = full.train(2)

    interrupted = tmp_path / 'interrupted'
    first = Trainer(materialize_population(spec), environment, LearnerConfig(), arenas=2,
                    deterministic=True, output=interrupted, checkpoint_every=1)
    first.train(2)

    resumed = Trainer(materialize_population(spec), environment, LearnerConfig(), arenas=2,
                      deterministic=True, output=interrupted, checkpoint_every=1)
    resumed.resume(interrupted / 'checkpoints' / 'round-000001')
    assert resumed.round == 1
    # Rows of round 1 were dropped and get logged again.
    assert {r.round for r in read_training_log(interrupted / TRAINING_LOG_NAME)} == {0}
    again = resumed.train(1)
    assert [r.round for r in again] == [1] * 4
    assert again == expected[4:]
    assert read_training_log(interrupted / TRAINING_LOG_NAME) == expected


def test_resume_from_an_older_checkpoint_drops_later_rows(tmp_path: Path) -> None:
    environment = micro_environment('harvestpatch')
    spec = population_spec(environment)
    first = Trainer(materialize_population(spec), environment, LearnerConfig(), arenas=1,
                    deterministic=True, output=tmp_path, checkpoint_every=2)
    first.train(3)
    assert sorted({a['round'] for a in read_csv(tmp_path / AGENTS_NAME)}) == ['0', '1', '2']

    resumed = Trainer(materialize_population(spec), environment, LearnerConfig(), arenas=1,
                      deterministic=True, output=tmp_path, checkpoint_every=2)
    resumed.resume(tmp_path / 'checkpoints' / 'round-000002')
    assert [a['round'] for a in read_csv(tmp_path / AGENTS_NAME)] == ['0'] * 4 + ['1'] * 4
    resumed.train(2)

    rows = read_training_log(tmp_path / TRAINING_LOG_NAME)
    keys = [(r.round, r.arena, r.agent_id) for r in rows]
    assert len(keys) == len(set(keys))
    assert sorted({r.round for r in rows}) == [0, 1, 2, 3]
    agents = [(a['round'], a['agent_id']) for a in read_csv(tmp_path / AGENTS_NAME)]
    assert len(agents) == len(set(agents)) == 16


def test_resume_rejects_other_population(tmp_path: Path) -> None:
    environment = micro_environment('harvestpatch')
    trainer = Trainer(materialize_population(population_spec(environment)), environment,
                      LearnerConfig(), arenas=1, deterministic=True, output=tmp_path)
    trainer.train(1)
    checkpoint = latest_checkpoint(tmp_path)
    assert checkpoint is not None

    other = Trainer(materialize_population(population_spec(environment, svo_mean=0.0)),
                    environment, LearnerConfig(), arenas=1)
    with pytest.raises(CheckpointError):
        other.resume(checkpoint)
    cleanup = micro_environment('cleanup')
    elsewhere = Trainer(materialize_population(population_spec(cleanup)), cleanup,
                        LearnerConfig(), arenas=1)
    with pytest.raises(CheckpointError):
        elsewhere.resume(checkpoint)


def test_load_population_for_evaluation(tmp_path: Path) -> None:
    environment = micro_environment('harvestpatch')
    spec = population_spec(environment)
    trainer = Trainer(materialize_population(spec), environment, LearnerConfig(), arenas=1,
                      deterministic=True, output=tmp_path)
    trainer.train(1)
    checkpoint = latest_checkpoint(tmp_path)
    assert checkpoint is not None
    pop = load_population(checkpoint, environment, spec, greedy=True)
    assert len(pop) == 4
    assert pop.svo_degrees == trainer.population.svo_degrees
    assert all(isinstance(s.policy, PolicyHandle) and s.policy.greedy for s in pop.slots)
    results = evaluate(pop, environment, 3)
    assert [a.arena_id for a, _ in results] == [0, 1, 2]
    assert all(record.trajectories == {} for _, record in results)


def test_evaluate_scripted_population() -> None:
    environment = micro_environment('cleanup', episode_length=30)
    spec = PopulationSpec(size=4, group_size=2, seed=1)
    pop = materialize_population(
        spec, lambda agent_id, seed: scripted_policy('greedy-harvester', 'cleanup'))
    logger = RecordingLogger()
    results = evaluate(pop, environment, 4, logger=logger)
    assert len(results) == 4
    for assignment, record in results:
        assert len(assignment.members) == 2
        assert record.actions.shape == (30, 2)
    assert len(logger.records) == 4


@slow
def test_training_reduces_punishment_and_raises_returns() -> None:
    environment = micro_environment('harvestpatch', episode_length=50)
    spec = population_spec(environment, svo_mean=0.0, weight=0.0)
    trainer = Trainer(materialize_population(spec), environment,
                      LearnerConfig(learning_rate=4e-3), arenas=4, deterministic=True, workers=1)
    rounds = 300
    rows = trainer.train(rounds)
    decile = rounds // 10
    first = [r for r in rows if r.round < decile]
    last = [r for r in rows if r.round >= rounds - decile]
    assert np.mean([r.punish_count for r in last]) < np.mean([r.punish_count for r in first])
    assert np.mean([r.extrinsic_return for r in last]) > np.mean([r.extrinsic_return for r in first])
